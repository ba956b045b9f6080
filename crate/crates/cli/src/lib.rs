//! Command-line driver: `simulate`, `discover`, `score` and `benchmark`.
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage error.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use bgm_core::benchmark::{run_benchmark_with, BenchmarkConfig, TrialLog};
use bgm_core::data::{load_csv, standardize, LoadOptions, MultiDomainDataset};
use bgm_core::density::{BandwidthMethod, Bandwidths, DensityConfig};
use bgm_core::discovery::{
    decide_direction, h1_parent_set, h2_parent_set, score_subset_with_gamma, subset_bandwidths, DirectionLabel,
    DiscoveryReport, ScoreConfig, SubsetScore, DEFAULT_MAX_TEST_SAMPLES,
};
use bgm_core::gamma::GammaSample;
use bgm_core::hsic::MIN_PERMUTATIONS;
use bgm_core::synth::{generate, Mode};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Environment variable capping the number of worker threads.
pub const THREADS_VAR: &str = "BGM_THREADS";

#[derive(Debug, Parser)]
#[command(name = "bgm", version, about = "Multi-domain causal discovery under bijective generation mechanisms")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic two-domain dataset and its ground-truth manifest.
    Simulate(SimulateArgs),
    /// Select a parent set (h1, h2) or a causal direction for a target column.
    Discover(DiscoverArgs),
    /// Score one conditioning set.
    Score(ScoreArgs),
    /// Run repeated synthetic trials and report aggregate metrics.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Bivariate,
    Multivariate,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Bivariate => Mode::Bivariate,
            ModeArg::Multivariate => Mode::Multivariate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    H1,
    H2,
    Direction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BandwidthArg {
    #[value(name = "normal_reference", alias = "normal-reference")]
    NormalReference,
    Lscv,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    /// Rows per domain.
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV; the manifest goes next to it as `<stem>.truth.json`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "domain")]
    pub domain_col: String,
}

#[derive(Debug, Args)]
pub struct ScoringArgs {
    /// Permutation replicas per HSIC test.
    #[arg(long, visible_alias = "b", default_value_t = 499)]
    pub permutations: usize,
    #[arg(long, value_enum, default_value = "normal_reference")]
    pub bandwidth_method: BandwidthArg,
    /// Significance level used to flag rejected hypotheses.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fit densities on even rows, test on odd rows.
    #[arg(long)]
    pub split: bool,
    /// Per-domain cap on rows entering each test; 0 disables the cap.
    #[arg(long, default_value_t = DEFAULT_MAX_TEST_SAMPLES)]
    pub max_test_samples: usize,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Input CSV with a domain column.
    pub csv: PathBuf,
    #[arg(long)]
    pub target: String,
    /// Comma-separated; defaults to every other non-domain column.
    #[arg(long, value_delimiter = ',')]
    pub candidates: Option<Vec<String>>,
    /// Integer columns with at most this many levels are treated as discrete.
    #[arg(long, default_value_t = 10)]
    pub max_levels: usize,
    #[arg(long, default_value = "domain")]
    pub domain_col: String,
}

#[derive(Debug, Args)]
pub struct GammaArgs {
    /// Also write the Γ samples of the reported subset as CSV.
    #[arg(long)]
    pub emit_gamma: bool,
    /// Defaults to `<input stem>.gamma.csv` next to the input.
    #[arg(long)]
    pub gamma_path: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiscoverArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub scoring: ScoringArgs,
    #[command(flatten)]
    pub gamma: GammaArgs,
    #[arg(long, value_enum, default_value = "h1")]
    pub method: MethodArg,
    /// H1 threshold.
    #[arg(long)]
    pub c: Option<f64>,
    /// H2 parent-set size.
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub scoring: ScoringArgs,
    #[command(flatten)]
    pub gamma: GammaArgs,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    /// Rows per domain.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[command(flatten)]
    pub scoring: ScoringArgs,
    #[arg(long, default_value_t = 0.05)]
    pub c: f64,
    /// Tune c on the first `--train-trials` trials and report on the rest.
    #[arg(long)]
    pub tune_c: bool,
    #[arg(long)]
    pub train_trials: Option<usize>,
    /// Metrics JSON; defaults to standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-trial JSON lines, appended as trials finish.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<bgm_core::Error> for Failure {
    fn from(e: bgm_core::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code. JSON reports go to `out`, diagnostics to standard error.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return EXIT_USAGE;
    }
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Discover(a) => cmd_discover(&a, out),
        Command::Score(a) => cmd_score(&a, out),
        Command::Benchmark(a) => cmd_benchmark(&a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            EXIT_RUNTIME
        }
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var(THREADS_VAR) else { return Ok(()) };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("{THREADS_VAR} must be a positive integer, got `{raw}`"))?;
    // A second call in the same process (tests) finds the pool already built.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn score_config(a: &ScoringArgs) -> Result<ScoreConfig, Failure> {
    if a.permutations < MIN_PERMUTATIONS {
        return Err(usage(format!("--permutations must be at least {MIN_PERMUTATIONS}, got {}", a.permutations)));
    }
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(usage(format!("--alpha must lie in (0, 1), got {}", a.alpha)));
    }
    let bandwidth_method = match a.bandwidth_method {
        BandwidthArg::NormalReference => BandwidthMethod::NormalReference,
        BandwidthArg::Lscv => BandwidthMethod::Lscv,
    };
    Ok(ScoreConfig {
        permutations: a.permutations,
        seed: a.seed,
        density: DensityConfig { bandwidth_method, ..DensityConfig::default() },
        max_test_samples: (a.max_test_samples > 0).then_some(a.max_test_samples),
        split: a.split,
        ..ScoreConfig::default()
    })
}

/// Loads and standardizes the input; returns the dataset and the candidate list.
fn load_input(a: &InputArgs) -> Result<(MultiDomainDataset, Vec<String>), Failure> {
    let opts = LoadOptions { domain_column: a.domain_col.clone(), max_levels: a.max_levels, ..LoadOptions::default() };
    let raw = load_csv(&a.csv, &opts)?;
    if raw.column_index(&a.target).is_err() {
        return Err(usage(format!("--target `{}` is not a column of {}", a.target, a.csv.display())));
    }
    let candidates = match &a.candidates {
        Some(c) => {
            if let Some(bad) = c.iter().find(|c| raw.column_index(c).is_err()) {
                return Err(usage(format!("--candidates: `{bad}` is not a column")));
            }
            if c.contains(&a.target) {
                return Err(usage("--candidates must not contain the target"));
            }
            c.clone()
        }
        None => raw.columns().iter().map(|c| c.name.clone()).filter(|n| n != &a.target).collect(),
    };
    let (dataset, _) = standardize(&raw)?;
    Ok((dataset, candidates))
}

fn write_json(out: &mut dyn Write, value: &impl Serialize) -> Result<(), Failure> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

/// Writes `bytes` to a temporary file in the target directory, then renames it.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Failure::Runtime(e.to_string()))?;
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn cmd_simulate(a: &SimulateArgs) -> Result<(), Failure> {
    if a.n < 2 {
        return Err(usage(format!("--n must be at least 2, got {}", a.n)));
    }
    let instance = generate(a.mode.into(), a.seed, a.n)?;
    let mut csv = Vec::new();
    instance.dataset.write_csv_to(&mut csv, &a.domain_col)?;
    let mut manifest = serde_json::to_vec_pretty(&instance.manifest())?;
    manifest.push(b'\n');
    write_atomic(&a.out, &csv)?;
    write_atomic(&sibling(&a.out, ".truth.json"), &manifest)?;
    Ok(())
}

fn gamma_csv(dataset: &MultiDomainDataset, subset: &[String], samples: &[GammaSample]) -> Result<Vec<u8>, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let m = dataset.n_domains();
    let mut header = vec!["domain".to_owned()];
    header.extend(subset.iter().cloned());
    header.extend((1..=m).map(|i| format!("gamma_{i}")));
    w.write_record(&header).map_err(|e| Failure::Runtime(e.to_string()))?;
    for s in samples {
        let mut rec = vec![dataset.domain(s.domain).label().to_string()];
        rec.extend(s.conditioner_values.iter().map(|v| format!("{v:?}")));
        rec.extend(s.gamma.entries().iter().map(|v| format!("{v:?}")));
        w.write_record(&rec).map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Failure::Runtime(e.to_string()))
}

fn emit_gamma(
    input: &InputArgs,
    g: &GammaArgs,
    dataset: &MultiDomainDataset,
    subset: &[String],
    config: &ScoreConfig,
) -> Result<(), Failure> {
    if !g.emit_gamma {
        return Ok(());
    }
    let (_, samples) = score_subset_with_gamma(dataset, &input.target, subset, config)?;
    let path = g.gamma_path.clone().unwrap_or_else(|| sibling(&input.csv, ".gamma.csv"));
    write_atomic(&path, &gamma_csv(dataset, subset, &samples)?)
}

#[derive(Serialize)]
struct DiscoverOutput {
    #[serde(flatten)]
    report: DiscoveryReport,
    alpha: f64,
    /// Per-domain bandwidths of the models behind the chosen subset.
    bandwidths: Vec<Option<Bandwidths>>,
}

#[derive(Serialize)]
struct DirectionOutput {
    target: String,
    candidates: Vec<String>,
    method: &'static str,
    /// `[x]` when `x → target` is decided, empty otherwise.
    chosen: Vec<String>,
    label: DirectionLabel,
    forward: SubsetScore,
    reverse: SubsetScore,
    uninformative: bool,
    alpha: f64,
    bandwidths: Vec<Option<Bandwidths>>,
    settings: ScoreConfig,
    seed: u64,
}

fn cmd_discover(a: &DiscoverArgs, out: &mut dyn Write) -> Result<(), Failure> {
    // Flag combinations are checked before any file is read.
    match a.method {
        MethodArg::H1 => {
            let c = a.c.ok_or_else(|| usage("--c is required with --method h1"))?;
            if !(c > 0.0 && c < 1.0) {
                return Err(usage(format!("--c must lie in (0, 1), got {c}")));
            }
            if a.k.is_some() {
                return Err(usage("--k is only valid with --method h2"));
            }
        }
        MethodArg::H2 => {
            a.k.ok_or_else(|| usage("--k is required with --method h2"))?;
            if a.c.is_some() {
                return Err(usage("--c is only valid with --method h1"));
            }
        }
        MethodArg::Direction => {
            if a.c.is_some() || a.k.is_some() {
                return Err(usage("--c and --k are not used with --method direction"));
            }
        }
    }
    let config = score_config(&a.scoring)?;
    let (dataset, candidates) = load_input(&a.input)?;
    let target = &a.input.target;

    match a.method {
        MethodArg::H1 | MethodArg::H2 => {
            if candidates.len() > config.candidate_cap {
                return Err(usage(format!(
                    "--candidates: {} columns exceed the cap of {}",
                    candidates.len(),
                    config.candidate_cap
                )));
            }
            let report = if a.method == MethodArg::H1 {
                h1_parent_set(&dataset, target, &candidates, a.c.unwrap_or_default(), &config)?
            } else {
                let k = a.k.unwrap_or_default();
                if k > candidates.len() {
                    return Err(usage(format!("--k {k} exceeds the {} candidates", candidates.len())));
                }
                h2_parent_set(&dataset, target, &candidates, k, &config)?
            };
            emit_gamma(&a.input, &a.gamma, &dataset, &report.chosen, &config)?;
            let bandwidths = subset_bandwidths(&dataset, target, &report.chosen, &config)?;
            write_json(out, &DiscoverOutput { report, alpha: a.scoring.alpha, bandwidths })
        }
        MethodArg::Direction => {
            let [x] = candidates.as_slice() else {
                return Err(usage(format!(
                    "--method direction needs exactly one candidate, got {}",
                    candidates.len()
                )));
            };
            let d = decide_direction(&dataset, x, target, &config)?;
            emit_gamma(&a.input, &a.gamma, &dataset, std::slice::from_ref(x), &config)?;
            let bandwidths = subset_bandwidths(&dataset, target, std::slice::from_ref(x), &config)?;
            let chosen = if d.label == DirectionLabel::XCausesY { vec![x.clone()] } else { vec![] };
            write_json(
                out,
                &DirectionOutput {
                    target: target.clone(),
                    candidates: candidates.clone(),
                    method: "direction",
                    chosen,
                    label: d.label,
                    forward: d.forward,
                    reverse: d.reverse,
                    uninformative: d.uninformative,
                    alpha: a.scoring.alpha,
                    bandwidths,
                    settings: config.clone(),
                    seed: config.seed,
                },
            )
        }
    }
}

#[derive(Serialize)]
struct ScoreOutput {
    target: String,
    #[serde(flatten)]
    score: SubsetScore,
    alpha: f64,
    /// `L < alpha`: the subset is rejected as the parent set.
    rejected: bool,
    bandwidths: Vec<Option<Bandwidths>>,
    settings: ScoreConfig,
    seed: u64,
}

fn cmd_score(a: &ScoreArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let config = score_config(&a.scoring)?;
    let (dataset, subset) = load_input(&a.input)?;
    let target = &a.input.target;
    let (score, samples) = score_subset_with_gamma(&dataset, target, &subset, &config)?;
    if a.gamma.emit_gamma {
        let path = a.gamma.gamma_path.clone().unwrap_or_else(|| sibling(&a.input.csv, ".gamma.csv"));
        write_atomic(&path, &gamma_csv(&dataset, &subset, &samples)?)?;
    }
    let bandwidths = subset_bandwidths(&dataset, target, &subset, &config)?;
    write_json(
        out,
        &ScoreOutput {
            target: target.clone(),
            rejected: score.l < a.scoring.alpha,
            score,
            alpha: a.scoring.alpha,
            bandwidths,
            settings: config.clone(),
            seed: config.seed,
        },
    )
}

fn cmd_benchmark(a: &BenchmarkArgs, out: &mut dyn Write) -> Result<(), Failure> {
    if a.trials == 0 {
        return Err(usage("--trials must be at least 1"));
    }
    if a.n < 2 {
        return Err(usage(format!("--n must be at least 2, got {}", a.n)));
    }
    if !(a.c > 0.0 && a.c < 1.0) {
        return Err(usage(format!("--c must lie in (0, 1), got {}", a.c)));
    }
    if a.train_trials.is_some() && !a.tune_c {
        return Err(usage("--train-trials is only valid with --tune-c"));
    }
    if a.tune_c {
        let train = a.train_trials.unwrap_or(a.trials / 2);
        if train == 0 || train >= a.trials {
            return Err(usage(format!("--train-trials must lie in 1..{}, got {train}", a.trials)));
        }
    }
    let score = score_config(&a.scoring)?;
    let config = BenchmarkConfig {
        mode: a.mode.into(),
        trials: a.trials,
        n_per_domain: a.n,
        seed: a.scoring.seed,
        score,
        threshold: a.c,
        tune_c: a.tune_c,
        train_trials: a.train_trials,
        ..BenchmarkConfig::default()
    };

    let log = a.log.as_ref().map(File::create).transpose()?.map(Mutex::new);
    let stream = |t: &TrialLog| {
        if let Some(f) = &log {
            let mut f = f.lock().unwrap_or_else(|p| p.into_inner());
            if let Ok(line) = serde_json::to_string(t) {
                let _ = writeln!(f, "{line}").and_then(|_| f.flush());
            }
        }
    };
    let report = run_benchmark_with(&config, &stream)?;

    if let Some(f) = &log {
        // Rewrite the log in trial order with the final selections.
        let mut f = f.lock().unwrap_or_else(|p| p.into_inner());
        let mut lines = Vec::new();
        for t in &report.log {
            serde_json::to_writer(&mut lines, t)?;
            lines.push(b'\n');
        }
        drop(f.flush());
        write_atomic(a.log.as_deref().unwrap_or(Path::new(".")), &lines)?;
    }
    match &a.out {
        Some(path) => {
            let mut bytes = serde_json::to_vec_pretty(&report)?;
            bytes.push(b'\n');
            write_atomic(path, &bytes)
        }
        None => write_json(out, &report),
    }
}
