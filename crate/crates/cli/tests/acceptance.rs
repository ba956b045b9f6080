//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any criterion fails.

use std::process::Command;
use std::time::Instant;

use bgm_core::benchmark::{run_benchmark, BenchmarkConfig};
use bgm_core::data::{standardize, ColumnKind, ColumnSpec, DomainBlock, MultiDomainDataset};
use bgm_core::density::{ConditionalDensityModel, DensityConfig};
use bgm_core::discovery::{score_all_subsets, score_subset, score_subset_with_gamma, ScoreConfig};
use bgm_core::gamma::{phi, GammaSample, OracleDensity, SIMPLEX_TOL};
use bgm_core::hsic::{hsic_statistic, permutation_pvalue, KernelMatrix, Points};
use bgm_core::synth::{gen_bivariate, gen_bivariate_with, gen_multivariate, Mode, SynthConfig, Truth};
use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn bivariate_accuracy() -> Outcome {
    let config = BenchmarkConfig {
        mode: Mode::Bivariate,
        trials: 150,
        train_trials: Some(50),
        tune_c: true,
        n_per_domain: 1000,
        seed: 2024,
        ..BenchmarkConfig::default()
    };
    let r = run_benchmark(&config).expect("benchmark runs");
    let acc = r.direction_accuracy.unwrap_or(0.0);
    outcome(
        acc >= 0.70 && r.test_trials == 100,
        format!("accuracy {acc:.3} >= 0.70 over {} test instances (c = {})", r.test_trials, r.threshold),
    )
}

fn multivariate_recovery() -> Outcome {
    let config = BenchmarkConfig {
        mode: Mode::Multivariate,
        trials: 40,
        train_trials: Some(20),
        tune_c: true,
        n_per_domain: 5000,
        seed: 2025,
        ..BenchmarkConfig::default()
    };
    let r = run_benchmark(&config).expect("benchmark runs");
    let h2 = r.h2.expect("multivariate reports H2");
    outcome(
        r.h1.f1 >= 0.60 && h2.precision >= r.h1.precision && r.test_trials == 20,
        format!(
            "H1 F1 {:.3} >= 0.60, H2 precision {:.3} >= H1 precision {:.3} over {} instances (c = {})",
            r.h1.f1, h2.precision, r.h1.precision, r.test_trials, r.threshold
        ),
    )
}

fn type_one_rate() -> Outcome {
    let reps = 500;
    let rejected = (0..reps)
        .filter(|&i| {
            let mut rng = ChaCha8Rng::seed_from_u64(10_000 + i);
            let x = normals(&mut rng, 200);
            let y = normals(&mut rng, 200);
            let r = permutation_pvalue(&Points::from_scalars(&x), &Points::from_scalars(&y), 499, i).unwrap();
            r.p_value <= 0.05
        })
        .count();
    let rate = rejected as f64 / reps as f64;
    outcome((0.02..=0.10).contains(&rate), format!("rejection rate {rate:.3} in [0.02, 0.10]"))
}

fn power_on_cubic() -> Outcome {
    let reps = 100;
    let rejected = (0..reps)
        .filter(|&i| {
            let mut rng = ChaCha8Rng::seed_from_u64(20_000 + i);
            let x = normals(&mut rng, 200);
            let noise = normals(&mut rng, 200);
            let y: Vec<f64> = x.iter().zip(&noise).map(|(x, e)| x.powi(3) + e).collect();
            let r = permutation_pvalue(&Points::from_scalars(&x), &Points::from_scalars(&y), 499, i).unwrap();
            r.p_value <= 0.01
        })
        .count();
    outcome(rejected >= 95, format!("rejected {rejected}/100 >= 95 at alpha 0.01"))
}

fn check_simplex(samples: &[GammaSample], m: usize) -> Result<(), String> {
    for s in samples {
        let g = s.gamma.entries();
        if g.len() != m || g.iter().any(|&v| v < 0.0) || (g.iter().sum::<f64>() - 1.0).abs() > SIMPLEX_TOL {
            return Err(format!("bad gamma {g:?}"));
        }
    }
    Ok(())
}

fn simplex_invariants() -> Outcome {
    let cfg = ScoreConfig { permutations: 99, ..ScoreConfig::default() };
    let count = std::cell::Cell::new(0);
    let check = |ds: &MultiDomainDataset, target: &str, subset: &[&str]| -> Result<(), String> {
        let (_, samples) = score_subset_with_gamma(ds, target, subset, &cfg).map_err(|e| e.to_string())?;
        count.set(count.get() + samples.len());
        check_simplex(&samples, ds.n_domains())
    };
    let run = || -> Result<String, String> {
        let biv = gen_bivariate(31, 500).unwrap().dataset;
        check(&biv, "Y", &["X"])?;
        check(&biv, "X", &["Y"])?;
        let three = gen_bivariate_with(&SynthConfig { n_domains: 3, ..SynthConfig::default() }, 32, 400).unwrap().dataset;
        check(&three, "Y", &["X"])?;
        let multi = gen_multivariate(33, 400).unwrap();
        let (std, _) = standardize(&multi.dataset).unwrap();
        let names: Vec<&str> = std.columns()[..std.columns().len() - 1].iter().map(|c| c.name.as_str()).collect();
        check(&std, "V", &names)?;
        check(&discrete_scm(34, 500), "X", &["Y"])?;

        // one domain: constant gamma and uninformative scores
        let single = MultiDomainDataset::new(multi.dataset.columns().to_vec(), vec![multi.dataset.domain(0).clone()]).unwrap();
        let (_, samples) = score_subset_with_gamma(&single, "V", &names, &cfg).map_err(|e| e.to_string())?;
        if samples.iter().any(|s| s.gamma.entries() != [1.0]) {
            return Err("m = 1 gamma is not (1.0)".into());
        }
        let scores = score_all_subsets(&single, "V", &names, &cfg).map_err(|e| e.to_string())?;
        if scores.iter().any(|s| (s.l - 1.0).abs() > 1e-12 || !s.uninformative) {
            return Err("m = 1 subset score not 1 or not flagged uninformative".into());
        }
        Ok(format!("{} gamma samples on the simplex; m = 1 gives gamma (1.0) and {} uninformative scores", count.get(), scores.len()))
    };
    match run() {
        Ok(d) => outcome(true, d),
        Err(d) => outcome(false, d),
    }
}

fn oracle_identification() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let inst = gen_bivariate(500 + seed, 2).unwrap();
        let Truth::Direction { effect, .. } = &inst.truth else { unreachable!() };
        let node = inst.node(effect).unwrap().clone();
        let mech = node.mechanism.clone().unwrap();
        let models: Vec<_> = (0..2)
            .map(|d| {
                let node = node.clone();
                OracleDensity::new(1, move |y: f64, x: &[f64]| node.conditional_density(d, x, y))
            })
            .collect();
        for ei in 0..10 {
            let e = -4.0 + 8.0 * ei as f64 / 9.0;
            let gammas: Vec<Vec<f64>> = (0..10)
                .map(|xi| {
                    let x = -3.0 + 6.0 * xi as f64 / 9.0;
                    phi(&models, mech.generate(&[x], e), &[x]).unwrap().entries().to_vec()
                })
                .collect();
            for g in &gammas[1..] {
                for (a, b) in g.iter().zip(&gammas[0]) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
    }
    outcome(worst <= 1e-9, format!("max deviation of gamma across x at fixed e: {worst:.2e} <= 1e-9 (20 mechanisms)"))
}

/// X and E on three levels with domain-specific distributions, Y = (X + E) mod 3.
fn discrete_scm(seed: u64, n: usize) -> MultiDomainDataset {
    let px = [[0.5, 0.3, 0.2], [0.2, 0.3, 0.5]];
    let pe = [[0.6, 0.3, 0.1], [0.2, 0.5, 0.3]];
    let domains = (0..2)
        .map(|d| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 2 + d as u64);
            let wx = WeightedIndex::new(px[d]).unwrap();
            let we = WeightedIndex::new(pe[d]).unwrap();
            let x: Vec<usize> = (0..n).map(|_| wx.sample(&mut rng)).collect();
            let y: Vec<f64> = x.iter().map(|&x| ((x + we.sample(&mut rng)) % 3) as f64).collect();
            DomainBlock::new(d as i64 + 1, vec![x.into_iter().map(|v| v as f64).collect(), y])
        })
        .collect();
    MultiDomainDataset::new(
        vec![ColumnSpec::new("X", ColumnKind::Discrete), ColumnSpec::new("Y", ColumnKind::Discrete)],
        domains,
    )
    .unwrap()
}

fn discrete_case() -> Outcome {
    // Counts of (x, y) per domain; rows are x, columns y.
    let tables = [[[3usize, 1, 0], [0, 2, 2], [1, 1, 2]], [[1, 1, 2], [2, 0, 2], [0, 3, 1]]];
    let domains = tables
        .iter()
        .enumerate()
        .map(|(d, t)| {
            let (mut xs, mut ys) = (Vec::new(), Vec::new());
            for (x, row) in t.iter().enumerate() {
                for (y, &c) in row.iter().enumerate() {
                    for _ in 0..c {
                        xs.push(x as f64);
                        ys.push(y as f64);
                    }
                }
            }
            DomainBlock::new(d as i64 + 1, vec![xs, ys])
        })
        .collect();
    let ds = MultiDomainDataset::new(
        vec![ColumnSpec::new("X", ColumnKind::Discrete), ColumnSpec::new("Y", ColumnKind::Discrete)],
        domains,
    )
    .unwrap();
    let lambda = 1e-9;
    let cfg = DensityConfig { smoothing: lambda, ..DensityConfig::default() };
    let models: Vec<_> = (0..2).map(|d| ConditionalDensityModel::fit(&ds, d, "Y", &["X"], &cfg).unwrap()).collect();
    let mut worst = 0.0f64;
    for x in 0..3 {
        for y in 0..3 {
            let p: Vec<f64> = tables
                .iter()
                .map(|t| {
                    let nx: usize = t[x].iter().sum();
                    (t[x][y] as f64 + lambda) / (nx as f64 + 3.0 * lambda)
                })
                .collect();
            let expect = [p[0] / (p[0] + p[1]), p[1] / (p[0] + p[1])];
            let got = phi(&models, y as f64, &[x as f64]).unwrap();
            for (a, b) in got.entries().iter().zip(expect) {
                worst = worst.max((a - b).abs());
            }
        }
    }

    let reps = 50;
    let rejected = (0..reps)
        .filter(|&i| {
            let ds = discrete_scm(100 + i, 2000);
            let cfg = ScoreConfig { seed: i, ..ScoreConfig::default() };
            score_subset(&ds, "X", &["Y"], &cfg).unwrap().l < 0.05
        })
        .count();
    outcome(
        worst <= 1e-9 && rejected * 10 >= reps as usize * 8,
        format!("phi deviation {worst:.2e} <= 1e-9; wrong parent set rejected {rejected}/{reps} >= 80%"),
    )
}

fn brute_force_hsic(k: &KernelMatrix, l: &KernelMatrix) -> f64 {
    let n = k.n();
    let nf = n as f64;
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            a += k.get(i, j) * l.get(i, j);
            for q in 0..n {
                c += k.get(i, j) * l.get(i, q);
                for r in 0..n {
                    b += k.get(i, j) * l.get(q, r);
                }
            }
        }
    }
    a / (nf * nf) + b / nf.powi(4) - 2.0 * c / nf.powi(3)
}

fn hsic_brute_force() -> Outcome {
    let mut worst = 0.0f64;
    for i in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(30_000 + i);
        let dx = rng.random_range(1..=3);
        let dy = rng.random_range(1..=2);
        let x = Points::new(dx, 6, normals(&mut rng, 6 * dx)).unwrap();
        let y = Points::new(dy, 6, normals(&mut rng, 6 * dy)).unwrap();
        let k = KernelMatrix::gaussian(&x, rng.random_range(0.5..2.0));
        let l = KernelMatrix::gaussian(&y, rng.random_range(0.5..2.0));
        worst = worst.max((hsic_statistic(&k, &l).unwrap() - brute_force_hsic(&k, &l)).abs());
    }
    outcome(worst <= 1e-10, format!("max |matrix - quadruple sum| {worst:.2e} <= 1e-10 over 50 instances"))
}

fn determinism() -> Outcome {
    let run = |mode: &str| {
        Command::new(env!("CARGO_BIN_EXE_bgm"))
            .args(["benchmark", "--mode", mode, "--trials", "4", "--n", "300", "--seed", "77", "--permutations", "99"])
            .output()
            .expect("bgm runs")
    };
    let mut same = true;
    for mode in ["bivariate", "multivariate"] {
        let (a, b) = (run(mode), run(mode));
        same &= a.status.success() && !a.stdout.is_empty() && a.stdout == b.stdout;
    }
    outcome(same, "benchmark JSON byte-identical across two runs (both modes)".into())
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("bivariate direction accuracy", bivariate_accuracy),
        ("multivariate parent recovery", multivariate_recovery),
        ("HSIC type-I calibration", type_one_rate),
        ("HSIC power", power_on_cubic),
        ("simplex invariants", simplex_invariants),
        ("oracle-density identification", oracle_identification),
        ("discrete case", discrete_case),
        ("HSIC brute-force equivalence", hsic_brute_force),
        ("benchmark determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = f();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("{verdict} {} {name}: {} [{:.1}s]", i + 1, o.detail, start.elapsed().as_secs_f64());
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
