//! Repeated synthetic trials with metric aggregation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::standardize;
use crate::discovery::{
    decide_direction, direction_accuracy, evaluate_metrics, score_all_subsets, DirectionLabel, DiscoveryReport,
    Metrics, ScoreConfig, SubsetScore, ThresholdOrK, DEFAULT_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::synth::{gen_bivariate_with, gen_multivariate_with, Mode, SynthConfig, Truth};

/// Thresholds tried when tuning `c`.
pub const C_GRID: [f64; 10] = [0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub mode: Mode,
    pub trials: usize,
    pub n_per_domain: usize,
    pub seed: u64,
    /// Scoring settings; the seed is replaced per trial.
    pub score: ScoreConfig,
    pub threshold: f64,
    pub tune_c: bool,
    /// Trials used for tuning `c`; defaults to half of `trials`.
    pub train_trials: Option<usize>,
    pub synth: SynthConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Bivariate,
            trials: 100,
            n_per_domain: 1000,
            seed: 0,
            score: ScoreConfig::default(),
            threshold: DEFAULT_THRESHOLD,
            tune_c: false,
            train_trials: None,
            synth: SynthConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialLog {
    pub index: usize,
    pub instance_seed: u64,
    pub score_seed: u64,
    pub role: Role,
    pub truth: Truth,
    /// Bivariate: `L({X} → Y)` and `L({Y} → X)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub direction: Option<DirectionLabel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_forward: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_reverse: Option<f64>,
    /// Multivariate: every subset score for the target.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub subsets: Vec<SubsetScore>,
    /// Edges chosen by H1 at the final threshold; absent while streaming.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h1: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h2: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub mode: Mode,
    pub trials: usize,
    pub n_per_domain: usize,
    pub seed: u64,
    pub threshold: f64,
    pub tuned: bool,
    pub train_trials: usize,
    pub test_trials: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub direction_accuracy: Option<f64>,
    pub h1: Metrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h2: Option<Metrics>,
    pub settings: ScoreConfig,
    pub log: Vec<TrialLog>,
}

/// Raw scores of one trial, before a threshold is applied.
struct Scored {
    index: usize,
    instance_seed: u64,
    score_seed: u64,
    truth: Truth,
    kind: ScoredKind,
}

enum ScoredKind {
    Direction { label: DirectionLabel, forward: SubsetScore, reverse: SubsetScore },
    Subsets { candidates: Vec<String>, scores: Vec<SubsetScore> },
}

fn vacuous(m: usize) -> SubsetScore {
    SubsetScore {
        subset: vec![],
        per_domain_pvalues: vec![1.0; m],
        l: 1.0,
        statistics: vec![0.0; m],
        vacuous: true,
        uninformative: m < 2,
    }
}

impl Scored {
    /// H1 reports and true parent sets at threshold `c`.
    fn h1_reports(&self, c: f64, settings: &ScoreConfig) -> Vec<(DiscoveryReport, Vec<String>)> {
        let param = ThresholdOrK::Threshold(c);
        match (&self.kind, &self.truth) {
            (ScoredKind::Direction { forward, reverse, .. }, Truth::Direction { cause, .. }) => {
                let m = forward.per_domain_pvalues.len();
                let one = |target: &str, other: &str, s: &SubsetScore| {
                    let report = DiscoveryReport::from_scores(
                        target,
                        vec![other.to_owned()],
                        param,
                        vec![vacuous(m), s.clone()],
                        settings,
                    );
                    let truth = if cause == other { vec![other.to_owned()] } else { vec![] };
                    (report, truth)
                };
                vec![one("Y", "X", forward), one("X", "Y", reverse)]
            }
            (ScoredKind::Subsets { candidates, scores }, Truth::ParentSet { target, parents, .. }) => {
                let report = DiscoveryReport::from_scores(target, candidates.clone(), param, scores.clone(), settings);
                vec![(report, parents.clone())]
            }
            _ => unreachable!("trial kind matches its truth"),
        }
    }

    fn h2_report(&self, settings: &ScoreConfig) -> Option<(DiscoveryReport, Vec<String>)> {
        match (&self.kind, &self.truth) {
            (ScoredKind::Subsets { candidates, scores }, Truth::ParentSet { target, parents, .. }) => {
                let report = DiscoveryReport::from_scores(
                    target,
                    candidates.clone(),
                    ThresholdOrK::K(parents.len()),
                    scores.clone(),
                    settings,
                );
                Some((report, parents.clone()))
            }
            _ => None,
        }
    }
}

fn h1_metrics(trials: &[Scored], c: f64, settings: &ScoreConfig) -> Result<Metrics> {
    let (reports, truths): (Vec<_>, Vec<_>) = trials.iter().flat_map(|t| t.h1_reports(c, settings)).unzip();
    evaluate_metrics(&reports, &truths)
}

fn score_trial(config: &BenchmarkConfig, index: usize) -> Result<Scored> {
    let instance_seed = derive_seed(config.seed, "trial", index as u64);
    let score_seed = derive_seed(config.seed, "test", index as u64);
    let instance = match config.mode {
        Mode::Bivariate => gen_bivariate_with(&config.synth, instance_seed, config.n_per_domain)?,
        Mode::Multivariate => gen_multivariate_with(&config.synth, instance_seed, config.n_per_domain)?,
    };
    let (dataset, _) = standardize(&instance.dataset)?;
    let score = ScoreConfig { seed: score_seed, ..config.score.clone() };
    let kind = match &instance.truth {
        Truth::Direction { .. } => {
            let d = decide_direction(&dataset, "X", "Y", &score)?;
            ScoredKind::Direction { label: d.label, forward: d.forward, reverse: d.reverse }
        }
        Truth::ParentSet { target, candidates, .. } => ScoredKind::Subsets {
            candidates: candidates.clone(),
            scores: score_all_subsets(&dataset, target, candidates, &score)?,
        },
    };
    Ok(Scored { index, instance_seed, score_seed, truth: instance.truth, kind })
}

/// Picks the grid threshold with the best training H1 F1; ties go to the
/// value closest to the default threshold on a log scale.
fn tune_threshold(train: &[Scored], settings: &ScoreConfig) -> Result<f64> {
    let mut best: Option<(f64, f64)> = None;
    for c in C_GRID {
        let f1 = h1_metrics(train, c, settings)?.f1;
        let distance = |c: f64| (c / DEFAULT_THRESHOLD).ln().abs();
        best = match best {
            Some((bc, bf)) if bf > f1 || (bf == f1 && distance(bc) <= distance(c)) => Some((bc, bf)),
            _ => Some((c, f1)),
        };
    }
    Ok(best.map(|(c, _)| c).unwrap_or(DEFAULT_THRESHOLD))
}

impl Scored {
    /// Log entry with raw scores only.
    fn raw_log(&self, role: Role) -> TrialLog {
        let mut entry = TrialLog {
            index: self.index,
            instance_seed: self.instance_seed,
            score_seed: self.score_seed,
            role,
            truth: self.truth.clone(),
            direction: None,
            l_forward: None,
            l_reverse: None,
            subsets: vec![],
            h1: None,
            h2: None,
        };
        match &self.kind {
            ScoredKind::Direction { label, forward, reverse } => {
                entry.direction = Some(*label);
                entry.l_forward = Some(forward.l);
                entry.l_reverse = Some(reverse.l);
            }
            ScoredKind::Subsets { scores, .. } => entry.subsets = scores.clone(),
        }
        entry
    }
}

pub fn run_benchmark(config: &BenchmarkConfig) -> Result<BenchmarkReport> {
    run_benchmark_with(config, &|_| {})
}

/// Like [`run_benchmark`], calling `on_trial` with the raw log of each trial as
/// soon as it is scored (in completion order).
pub fn run_benchmark_with(config: &BenchmarkConfig, on_trial: &(dyn Fn(&TrialLog) + Sync)) -> Result<BenchmarkReport> {
    if config.trials == 0 {
        return Err(Error::InvalidArgument("trials must be positive".into()));
    }
    if !(config.threshold > 0.0 && config.threshold < 1.0) {
        return Err(Error::InvalidArgument(format!("threshold c must lie in (0, 1), got {}", config.threshold)));
    }
    let train_n = if config.tune_c { config.train_trials.unwrap_or(config.trials / 2) } else { 0 };
    if config.tune_c && (train_n == 0 || train_n >= config.trials) {
        return Err(Error::InvalidArgument(format!(
            "train-trials must lie in 1..{} when tuning c, got {train_n}",
            config.trials
        )));
    }

    let scored = (0..config.trials)
        .into_par_iter()
        .map(|i| {
            let scored = score_trial(config, i)?;
            on_trial(&scored.raw_log(if i < train_n { Role::Train } else { Role::Test }));
            Ok(scored)
        })
        .collect::<Result<Vec<_>>>()?;
    let (train, test) = scored.split_at(train_n);
    let settings = ScoreConfig { seed: config.seed, ..config.score.clone() };
    let threshold = if config.tune_c { tune_threshold(train, &settings)? } else { config.threshold };

    let h1 = h1_metrics(test, threshold, &settings)?;
    let h2 = match config.mode {
        Mode::Bivariate => None,
        Mode::Multivariate => {
            let (reports, truths): (Vec<_>, Vec<_>) = test.iter().filter_map(|t| t.h2_report(&settings)).unzip();
            Some(evaluate_metrics(&reports, &truths)?)
        }
    };
    let direction_accuracy = match config.mode {
        Mode::Multivariate => None,
        Mode::Bivariate => {
            let mut decided = Vec::new();
            let mut truths = Vec::new();
            for t in test {
                if let (ScoredKind::Direction { label, .. }, Truth::Direction { cause, .. }) = (&t.kind, &t.truth) {
                    decided.push(*label);
                    truths.push(if cause == "X" { DirectionLabel::XCausesY } else { DirectionLabel::YCausesX });
                }
            }
            Some(direction_accuracy(&decided, &truths)?)
        }
    };

    let log = scored
        .iter()
        .map(|t| {
            let role = if t.index < train_n { Role::Train } else { Role::Test };
            let h1_chosen: Vec<String> = t
                .h1_reports(threshold, &settings)
                .into_iter()
                .flat_map(|(r, _)| r.chosen.into_iter().map(move |c| format!("{c}->{}", r.target)))
                .collect();
            let mut entry = t.raw_log(role);
            entry.h1 = Some(h1_chosen);
            entry.h2 = t.h2_report(&settings).map(|(r, _)| r.chosen);
            entry
        })
        .collect();

    Ok(BenchmarkReport {
        mode: config.mode,
        trials: config.trials,
        n_per_domain: config.n_per_domain,
        seed: config.seed,
        threshold,
        tuned: config.tune_c,
        train_trials: train_n,
        test_trials: config.trials - train_n,
        direction_accuracy,
        h1,
        h2,
        settings,
        log,
    })
}
