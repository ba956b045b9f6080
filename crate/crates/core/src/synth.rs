//! Seeded synthetic multi-domain instances from the heteroscedastic model
//! `V = αᵀP + g(P)·E`, with `g(P) = sqrt(|βᵀP| + 1)` or `log(|βᵀP| + 2)`.
//!
//! Mechanisms (α, β, g) are shared by all domains; only the Gaussian noise
//! `E ~ N(μₑ, σₑ²)` changes between domains. Root variables have no mechanism
//! and are drawn from `N(shift·e, 1)` in domain `e = 0, 1, …`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{ColumnKind, ColumnSpec, DomainBlock, MultiDomainDataset};
use crate::error::Result;
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GVariant {
    /// `sqrt(|z| + 1)`, bounded below by 1.
    SqrtForm,
    /// `log(|z| + 2)`, bounded below by `ln 2`.
    LogForm,
}

impl GVariant {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            GVariant::SqrtForm => (z.abs() + 1.0).sqrt(),
            GVariant::LogForm => (z.abs() + 2.0).ln(),
        }
    }
}

/// How the second parameter of the coefficient prior `N(0, 0.05)` is read.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaSpread {
    Variance(f64),
    StdDev(f64),
}

impl AlphaSpread {
    fn std_dev(self) -> f64 {
        match self {
            AlphaSpread::Variance(v) => v.sqrt(),
            AlphaSpread::StdDev(s) => s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub alpha_spread: AlphaSpread,
    /// Root means are `shift·e` in domain `e` (0-based).
    pub root_shift: f64,
    pub n_domains: usize,
    /// Noise std of the first domain.
    pub sigma1: f64,
    /// Later domains shift the noise mean by `±mu_offset`.
    pub mu_offset: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            alpha_spread: AlphaSpread::Variance(0.05),
            root_shift: 1.0,
            n_domains: 2,
            sigma1: 2.0,
            mu_offset: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismParams {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub g_variant: GVariant,
}

impl MechanismParams {
    pub fn f(&self, parents: &[f64]) -> f64 {
        dot(&self.alpha, parents)
    }

    pub fn g(&self, parents: &[f64]) -> f64 {
        self.g_variant.apply(dot(&self.beta, parents))
    }

    pub fn generate(&self, parents: &[f64], noise: f64) -> f64 {
        self.f(parents) + self.g(parents) * noise
    }

    /// Inverse of the fixed-cause map `e ↦ f + g·e`.
    pub fn recover_noise(&self, parents: &[f64], value: f64) -> f64 {
        (value - self.f(parents)) / self.g(parents)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainNoiseParams {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// One variable of a generated model, in topological order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeParams {
    pub name: String,
    /// Parent column names, in the order `alpha`/`beta` use them.
    pub parents: Vec<String>,
    /// `None` for roots, whose value is the noise draw itself.
    pub mechanism: Option<MechanismParams>,
    pub noise: DomainNoiseParams,
}

impl NodeParams {
    /// Exact conditional density of this node given its parents in `domain`.
    pub fn conditional_density(&self, domain: usize, parents: &[f64], value: f64) -> f64 {
        let (mu, sigma) = (self.noise.mu[domain], self.noise.sigma[domain]);
        match &self.mechanism {
            None => normal_pdf(value, mu, sigma),
            Some(m) => {
                let g = m.g(parents);
                normal_pdf(value, m.f(parents) + g * mu, g * sigma)
            }
        }
    }
}

pub(crate) fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Bivariate,
    Multivariate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Truth {
    Direction { cause: String, effect: String },
    ParentSet { target: String, candidates: Vec<String>, parents: Vec<String> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthInstance {
    pub dataset: MultiDomainDataset,
    pub truth: Truth,
    /// Generating nodes in topological order.
    pub nodes: Vec<NodeParams>,
    pub seed: u64,
    pub config: SynthConfig,
}

/// Ground-truth manifest written next to a simulated CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub truth: Truth,
    pub params: Vec<NodeParams>,
    pub config: SynthConfig,
    pub seed: u64,
}

impl SynthInstance {
    pub fn node(&self, name: &str) -> Option<&NodeParams> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            truth: self.truth.clone(),
            params: self.nodes.clone(),
            config: self.config.clone(),
            seed: self.seed,
        }
    }
}

fn draw_mechanism(rng: &mut ChaCha8Rng, n_parents: usize, config: &SynthConfig) -> MechanismParams {
    let alpha_dist = Normal::new(0.0, config.alpha_spread.std_dev()).expect("finite alpha spread");
    let alpha = (0..n_parents).map(|_| alpha_dist.sample(rng)).collect();
    let beta = (0..n_parents)
        .map(|_| {
            let magnitude = rng.random_range(1.0..=2.0);
            if rng.random_bool(0.5) { magnitude } else { -magnitude }
        })
        .collect();
    let g_variant = if rng.random_bool(0.5) { GVariant::SqrtForm } else { GVariant::LogForm };
    MechanismParams { alpha, beta, g_variant }
}

fn draw_noise(rng: &mut ChaCha8Rng, config: &SynthConfig) -> DomainNoiseParams {
    let mu1: f64 = Normal::new(0.0, 1.0).unwrap().sample(rng);
    let mut mu = vec![mu1];
    let mut sigma = vec![config.sigma1];
    for _ in 1..config.n_domains {
        let offset = if rng.random_bool(0.5) { config.mu_offset } else { -config.mu_offset };
        mu.push(mu1 + offset);
        sigma.push(config.sigma1 * rng.random_range(2.0 / 3.0..=1.5));
    }
    DomainNoiseParams { mu, sigma }
}

fn root_noise(config: &SynthConfig) -> DomainNoiseParams {
    DomainNoiseParams {
        mu: (0..config.n_domains).map(|e| config.root_shift * e as f64).collect(),
        sigma: vec![1.0; config.n_domains],
    }
}

/// Samples every node in topological order. `column_of[i]` is the dataset
/// column of `nodes[i]`.
fn sample_nodes(
    seed: u64,
    n: usize,
    nodes: &[NodeParams],
    column_of: &[usize],
    n_columns: usize,
    n_domains: usize,
) -> Vec<DomainBlock> {
    (0..n_domains)
        .map(|e| {
            let mut columns = vec![Vec::new(); n_columns];
            for (i, node) in nodes.iter().enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    derive_seed(seed, "sample", i as u64),
                    "domain",
                    e as u64,
                ));
                let noise = Normal::new(node.noise.mu[e], node.noise.sigma[e]).expect("positive sigma");
                let parent_cols: Vec<usize> = node
                    .parents
                    .iter()
                    .map(|p| {
                        let k = nodes.iter().position(|q| &q.name == p).expect("parent precedes child");
                        column_of[k]
                    })
                    .collect();
                let values: Vec<f64> = (0..n)
                    .map(|row| {
                        let eps = noise.sample(&mut rng);
                        match &node.mechanism {
                            None => eps,
                            Some(m) => {
                                let pa: Vec<f64> = parent_cols.iter().map(|&c| columns[c][row]).collect();
                                m.generate(&pa, eps)
                            }
                        }
                    })
                    .collect();
                columns[column_of[i]] = values;
            }
            DomainBlock::new(e as i64 + 1, columns)
        })
        .collect()
}

pub fn gen_bivariate(seed: u64, n_per_domain: usize) -> Result<SynthInstance> {
    gen_bivariate_with(&SynthConfig::default(), seed, n_per_domain)
}

/// Two columns `X`, `Y`; the cause is chosen with probability 1/2.
pub fn gen_bivariate_with(config: &SynthConfig, seed: u64, n_per_domain: usize) -> Result<SynthInstance> {
    check_args(config, n_per_domain)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "structure", 0));
    let x_causes_y = rng.random_bool(0.5);
    let (cause, effect, cause_col, effect_col) =
        if x_causes_y { ("X", "Y", 0, 1) } else { ("Y", "X", 1, 0) };

    let mut param_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "node", 1));
    let nodes = vec![
        NodeParams { name: cause.into(), parents: vec![], mechanism: None, noise: root_noise(config) },
        NodeParams {
            name: effect.into(),
            parents: vec![cause.into()],
            mechanism: Some(draw_mechanism(&mut param_rng, 1, config)),
            noise: draw_noise(&mut param_rng, config),
        },
    ];
    let blocks = sample_nodes(seed, n_per_domain, &nodes, &[cause_col, effect_col], 2, config.n_domains);
    let columns = vec![
        ColumnSpec::new("X", ColumnKind::Continuous),
        ColumnSpec::new("Y", ColumnKind::Continuous),
    ];
    Ok(SynthInstance {
        dataset: MultiDomainDataset::new(columns, blocks)?,
        truth: Truth::Direction { cause: cause.into(), effect: effect.into() },
        nodes,
        seed,
        config: config.clone(),
    })
}

pub fn gen_multivariate(seed: u64, n_per_domain: usize) -> Result<SynthInstance> {
    gen_multivariate_with(&SynthConfig::default(), seed, n_per_domain)
}

/// Candidates `A1..Ak` (k uniform in 2..=5) and target `V` on a fully connected
/// DAG: every node depends on all of its predecessors in a random topological
/// order in which exactly the parents precede `V`.
pub fn gen_multivariate_with(config: &SynthConfig, seed: u64, n_per_domain: usize) -> Result<SynthInstance> {
    check_args(config, n_per_domain)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "structure", 0));
    let k = rng.random_range(2..=5usize);
    let n_parents = rng.random_range(1..=k);
    let candidates: Vec<String> = (1..=k).map(|i| format!("A{i}")).collect();

    let mut shuffled: Vec<usize> = (0..k).collect();
    shuffled.shuffle(&mut rng);
    // Column index: candidates 0..k, target k.
    let mut order: Vec<usize> = shuffled[..n_parents].to_vec();
    order.push(k);
    order.extend_from_slice(&shuffled[n_parents..]);

    let name_of = |c: usize| if c == k { "V".to_owned() } else { candidates[c].clone() };
    let nodes: Vec<NodeParams> = order
        .iter()
        .enumerate()
        .map(|(pos, &col)| {
            let name = name_of(col);
            if pos == 0 {
                return NodeParams { name, parents: vec![], mechanism: None, noise: root_noise(config) };
            }
            let mut param_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "node", pos as u64));
            let parents: Vec<String> = order[..pos].iter().map(|&c| name_of(c)).collect();
            NodeParams {
                name,
                mechanism: Some(draw_mechanism(&mut param_rng, parents.len(), config)),
                noise: draw_noise(&mut param_rng, config),
                parents,
            }
        })
        .collect();

    let blocks = sample_nodes(seed, n_per_domain, &nodes, &order, k + 1, config.n_domains);
    let mut columns: Vec<ColumnSpec> =
        candidates.iter().map(|c| ColumnSpec::new(c.clone(), ColumnKind::Continuous)).collect();
    columns.push(ColumnSpec::new("V", ColumnKind::Continuous));
    let mut parents: Vec<String> = order[..n_parents].iter().map(|&c| candidates[c].clone()).collect();
    parents.sort();
    Ok(SynthInstance {
        dataset: MultiDomainDataset::new(columns, blocks)?,
        truth: Truth::ParentSet { target: "V".into(), candidates, parents },
        nodes,
        seed,
        config: config.clone(),
    })
}

pub fn generate(mode: Mode, seed: u64, n_per_domain: usize) -> Result<SynthInstance> {
    match mode {
        Mode::Bivariate => gen_bivariate(seed, n_per_domain),
        Mode::Multivariate => gen_multivariate(seed, n_per_domain),
    }
}

fn check_args(config: &SynthConfig, n: usize) -> Result<()> {
    use crate::error::Error;
    if n == 0 {
        return Err(Error::InvalidArgument("n_per_domain must be at least 1".into()));
    }
    if config.n_domains == 0 {
        return Err(Error::InvalidArgument("need at least one domain".into()));
    }
    if !(config.sigma1 > 0.0) || !(config.alpha_spread.std_dev() >= 0.0) {
        return Err(Error::InvalidArgument("noise and coefficient spreads must be positive".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parent_rows(inst: &SynthInstance, node: &NodeParams, e: usize) -> Vec<Vec<f64>> {
        let ds = &inst.dataset;
        let cols = ds.column_indices(&node.parents).unwrap();
        let block = ds.domain(e);
        (0..block.n_rows()).map(|r| block.row_values(r, &cols)).collect()
    }

    #[test]
    fn noise_means_differ_by_three() {
        for seed in 0..50 {
            let inst = gen_bivariate(seed, 10).unwrap();
            let mu = &inst.nodes[1].noise.mu;
            assert!(((mu[1] - mu[0]).abs() - 3.0).abs() < 1e-12);
            let sigma = &inst.nodes[1].noise.sigma;
            assert_eq!(sigma[0], 2.0);
            assert!(sigma[1] >= 2.0 * 2.0 / 3.0 - 1e-12 && sigma[1] <= 3.0 + 1e-12);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(gen_bivariate(11, 50).unwrap(), gen_bivariate(11, 50).unwrap());
        assert_eq!(gen_multivariate(11, 50).unwrap(), gen_multivariate(11, 50).unwrap());
        assert_ne!(gen_bivariate(11, 50).unwrap().dataset, gen_bivariate(12, 50).unwrap().dataset);
    }

    #[test]
    fn direction_is_balanced() {
        let x_causes = (0..100)
            .filter(|&s| {
                matches!(gen_bivariate(s, 1000).unwrap().truth,
                    Truth::Direction { ref cause, .. } if cause == "X")
            })
            .count();
        assert!((40..=60).contains(&x_causes), "{x_causes}");
    }

    #[test]
    fn beta_and_alpha_ranges() {
        for seed in 0..30 {
            let inst = gen_multivariate(seed, 5).unwrap();
            for node in inst.nodes.iter().skip(1) {
                let m = node.mechanism.as_ref().unwrap();
                assert_eq!(m.alpha.len(), node.parents.len());
                assert_eq!(m.beta.len(), node.parents.len());
                assert!(m.beta.iter().all(|b| (1.0..=2.0).contains(&b.abs())));
            }
        }
    }

    #[test]
    fn multivariate_structure() {
        let mut sizes = std::collections::BTreeSet::new();
        for seed in 0..60 {
            let inst = gen_multivariate(seed, 3).unwrap();
            let Truth::ParentSet { target, candidates, parents } = &inst.truth else { panic!() };
            assert_eq!(target, "V");
            assert!((2..=5).contains(&candidates.len()));
            assert!(!parents.is_empty() && parents.len() <= candidates.len());
            sizes.insert(candidates.len());
            assert_eq!(inst.dataset.columns().len(), candidates.len() + 1);
            // Fully connected DAG: node i has exactly the i predecessors as parents.
            for (i, node) in inst.nodes.iter().enumerate() {
                let before: Vec<&str> = inst.nodes[..i].iter().map(|n| n.name.as_str()).collect();
                let pa: Vec<&str> = node.parents.iter().map(String::as_str).collect();
                assert_eq!(pa, before);
            }
            let v = inst.node("V").unwrap();
            let mut vp = v.parents.clone();
            vp.sort();
            assert_eq!(&vp, parents);
        }
        assert_eq!(sizes.len(), 4);
    }

    #[test]
    fn singleton_parent_instance_shape() {
        let inst = (0..200)
            .map(|s| gen_multivariate(s, 4).unwrap())
            .find(|i| matches!(&i.truth, Truth::ParentSet { candidates, parents, .. }
                if candidates.len() == 2 && parents.len() == 1))
            .expect("some seed draws |A|=2, |PA|=1");
        assert_eq!(inst.dataset.columns().len(), 3);
    }

    #[test]
    fn fixed_cause_map_is_bijective() {
        for seed in 0..20 {
            let inst = gen_multivariate(seed, 200).unwrap();
            for node in inst.nodes.iter().skip(1) {
                let m = node.mechanism.as_ref().unwrap();
                let floor = match m.g_variant {
                    GVariant::SqrtForm => 1.0,
                    GVariant::LogForm => 2f64.ln(),
                };
                for rows in parent_rows(&inst, node, 0) {
                    assert!(m.g(&rows) >= floor - 1e-12);
                }
            }
        }
    }

    #[test]
    fn recovered_noise_matches_domain_params() {
        for seed in 0..5 {
            let inst = gen_bivariate(seed, 10_000).unwrap();
            let node = &inst.nodes[1];
            let m = node.mechanism.as_ref().unwrap();
            let col = inst.dataset.column_index(&node.name).unwrap();
            for e in 0..2 {
                let pa = parent_rows(&inst, node, e);
                let vals = inst.dataset.domain(e).column(col);
                let noise: Vec<f64> = pa.iter().zip(vals).map(|(p, &v)| m.recover_noise(p, v)).collect();
                let n = noise.len() as f64;
                let mean = noise.iter().sum::<f64>() / n;
                let sd = (noise.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
                let sigma = node.noise.sigma[e];
                assert!((sd - sigma).abs() / sigma < 0.05, "sd {sd} vs {sigma}");
                assert!((mean - node.noise.mu[e]).abs() < 0.1 * sigma);
            }
        }
    }

    /// After removing the scale part `g(pa)·μₑ` the target is linear in its
    /// parents: OLS on the parents recovers α within a few standard errors.
    #[test]
    fn location_part_is_linear_in_parents() {
        for seed in 0..10 {
            let inst = gen_bivariate(seed, 10_000).unwrap();
            let node = &inst.nodes[1];
            let m = node.mechanism.as_ref().unwrap();
            let col = inst.dataset.column_index(&node.name).unwrap();
            let pa = parent_rows(&inst, node, 0);
            let vals = inst.dataset.domain(0).column(col);
            let (mu, sigma) = (node.noise.mu[0], node.noise.sigma[0]);
            // Weighted least squares with weights 1/g² (the noise scale).
            let (mut sxx, mut sxy, mut sw) = (0.0, 0.0, 0.0);
            for (p, &v) in pa.iter().zip(vals) {
                let g = m.g(p);
                let w = 1.0 / (g * g);
                let r = v - g * mu;
                sxx += w * p[0] * p[0];
                sxy += w * p[0] * r;
                sw += w;
            }
            let slope = sxy / sxx;
            let se = sigma / sxx.sqrt();
            assert!(sw > 0.0);
            assert!((slope - m.alpha[0]).abs() < 4.0 * se, "seed {seed}: {slope} vs {}", m.alpha[0]);
        }
    }

    #[test]
    fn root_marginal_is_shifted_in_second_domain() {
        let inst = gen_bivariate(3, 5000).unwrap();
        let Truth::Direction { cause, .. } = &inst.truth else { panic!() };
        let col = inst.dataset.column_index(cause).unwrap();
        let m0: f64 = inst.dataset.domain(0).column(col).iter().sum::<f64>() / 5000.0;
        let m1: f64 = inst.dataset.domain(1).column(col).iter().sum::<f64>() / 5000.0;
        assert!((m1 - m0 - 1.0).abs() < 0.1);
    }
}
