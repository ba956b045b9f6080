//! Parent-set scoring and selection.
//!
//! `L(S)` is the minimum over domains of the p-value of the permutation HSIC
//! test `Γ_{S→V} ⫫ S`; a small `L(S)` rejects `S` as the parent set of `V`.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::MultiDomainDataset;
use crate::density::{Bandwidths, ConditionalDensityModel, DensityConfig};
use crate::error::{Error, Result};
use crate::gamma::{phi, GammaSample};
use crate::hsic::{permutation_pvalue, Points, DEFAULT_PERMUTATIONS};
use crate::seed::derive_seed;

pub const DEFAULT_THRESHOLD: f64 = 0.05;
pub const DEFAULT_CANDIDATE_CAP: usize = 12;
pub const DEFAULT_MAX_TEST_SAMPLES: usize = 100;
/// Scores closer than this are treated as a tie by [`decide_direction`].
pub const DIRECTION_TIE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub permutations: usize,
    pub seed: u64,
    pub density: DensityConfig,
    /// Per-domain cap on rows entering the independence test; larger blocks are
    /// subsampled (seeded). Densities are always fitted on the full block.
    pub max_test_samples: Option<usize>,
    /// Fit densities on even rows and test on odd rows of each domain.
    pub split: bool,
    pub candidate_cap: usize,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            permutations: DEFAULT_PERMUTATIONS,
            seed: 0,
            density: DensityConfig::default(),
            max_test_samples: Some(DEFAULT_MAX_TEST_SAMPLES),
            split: false,
            candidate_cap: DEFAULT_CANDIDATE_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetScore {
    pub subset: Vec<String>,
    #[serde(rename = "pvalues")]
    pub per_domain_pvalues: Vec<f64>,
    #[serde(rename = "L")]
    pub l: f64,
    pub statistics: Vec<f64>,
    /// Empty subset: nothing to test, `L` is 1 by convention.
    pub vacuous: bool,
    /// Γ was constant (e.g. a single domain), so no hypothesis can be rejected.
    pub uninformative: bool,
}

impl SubsetScore {
    fn median_pvalue(&self) -> f64 {
        let mut p = self.per_domain_pvalues.clone();
        if p.is_empty() {
            return 1.0;
        }
        p.sort_by(f64::total_cmp);
        let mid = p.len() / 2;
        if p.len() % 2 == 1 { p[mid] } else { 0.5 * (p[mid - 1] + p[mid]) }
    }
}

fn check_target_and_subset<S: AsRef<str>>(dataset: &MultiDomainDataset, target: &str, subset: &[S]) -> Result<()> {
    dataset.column_index(target)?;
    dataset.column_indices(subset)?;
    if subset.iter().any(|s| s.as_ref() == target) {
        return Err(Error::InvalidArgument(format!("target `{target}` is in the conditioning set")));
    }
    Ok(())
}

/// `(fit rows, test rows)` of one domain.
fn domain_rows(n: usize, domain: usize, config: &ScoreConfig) -> (Option<Vec<usize>>, Vec<usize>) {
    let (fit, test) = if config.split {
        (Some((0..n).step_by(2).collect()), (1..n).step_by(2).collect::<Vec<_>>())
    } else {
        (None, (0..n).collect())
    };
    let test = match config.max_test_samples {
        Some(cap) if test.len() > cap => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "subsample", domain as u64));
            let mut pick = rand::seq::index::sample(&mut rng, test.len(), cap).into_vec();
            pick.sort_unstable();
            pick.into_iter().map(|i| test[i]).collect()
        }
        _ => test,
    };
    (fit, test)
}

/// Computes `L(S)` for `target` given `subset`.
pub fn score_subset<S: AsRef<str>>(
    dataset: &MultiDomainDataset,
    target: &str,
    subset: &[S],
    config: &ScoreConfig,
) -> Result<SubsetScore> {
    score_subset_inner(dataset, target, subset, config, false).map(|(s, _)| s)
}

/// Like [`score_subset`], also returning the Γ samples that entered the tests.
pub fn score_subset_with_gamma<S: AsRef<str>>(
    dataset: &MultiDomainDataset,
    target: &str,
    subset: &[S],
    config: &ScoreConfig,
) -> Result<(SubsetScore, Vec<GammaSample>)> {
    score_subset_inner(dataset, target, subset, config, true)
}

fn score_subset_inner<S: AsRef<str>>(
    dataset: &MultiDomainDataset,
    target: &str,
    subset: &[S],
    config: &ScoreConfig,
    keep_gamma: bool,
) -> Result<(SubsetScore, Vec<GammaSample>)> {
    check_target_and_subset(dataset, target, subset)?;
    let names: Vec<String> = subset.iter().map(|s| s.as_ref().to_owned()).collect();
    let m = dataset.n_domains();
    if names.is_empty() {
        let score = SubsetScore {
            subset: names,
            per_domain_pvalues: vec![1.0; m],
            l: 1.0,
            statistics: vec![0.0; m],
            vacuous: true,
            uninformative: m < 2,
        };
        return Ok((score, Vec::new()));
    }

    let t = dataset.column_index(target)?;
    let cs = dataset.column_indices(&names)?;
    let rows: Vec<_> = (0..m).map(|e| domain_rows(dataset.domain(e).n_rows(), e, config)).collect();
    let models = (0..m)
        .map(|e| ConditionalDensityModel::fit_rows(dataset, e, rows[e].0.as_deref(), target, &names, &config.density))
        .collect::<Result<Vec<_>>>()?;

    let mut pvalues = Vec::with_capacity(m);
    let mut statistics = Vec::with_capacity(m);
    let mut kept = Vec::new();
    let mut constant_gamma = true;
    for (e, (_, test_rows)) in rows.iter().enumerate() {
        let block = dataset.domain(e);
        let mut xs = Vec::with_capacity(test_rows.len() * cs.len());
        let mut gs = Vec::with_capacity(test_rows.len() * (m - 1));
        let mut first: Option<Vec<f64>> = None;
        for &row in test_rows {
            let x = block.row_values(row, &cs);
            let gamma = phi(&models, block.value(row, t), &x)?;
            // The last simplex coordinate is determined by the others.
            let head = &gamma.entries()[..m - 1];
            match &first {
                None => first = Some(head.to_vec()),
                Some(f) if f.as_slice() != head => constant_gamma = false,
                _ => {}
            }
            gs.extend_from_slice(head);
            xs.extend_from_slice(&x);
            if keep_gamma {
                kept.push(GammaSample { gamma, conditioner_values: x, domain: e });
            }
        }
        let n = test_rows.len();
        let result = permutation_pvalue(
            &Points::new(cs.len(), n, xs)?,
            &Points::new(m - 1, n, gs)?,
            config.permutations,
            derive_seed(config.seed, "hsic", e as u64),
        )?;
        pvalues.push(result.p_value);
        statistics.push(result.statistic);
    }
    let l = pvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let score = SubsetScore {
        subset: names,
        per_domain_pvalues: pvalues,
        l,
        statistics,
        vacuous: false,
        uninformative: m < 2 || constant_gamma,
    };
    Ok((score, kept))
}

/// Kernel bandwidths of the per-domain models behind `L(subset)`; `None` for
/// frequency-table models.
pub fn subset_bandwidths<S: AsRef<str>>(
    dataset: &MultiDomainDataset,
    target: &str,
    subset: &[S],
    config: &ScoreConfig,
) -> Result<Vec<Option<Bandwidths>>> {
    check_target_and_subset(dataset, target, subset)?;
    (0..dataset.n_domains())
        .map(|e| {
            let (fit, _) = domain_rows(dataset.domain(e).n_rows(), e, config);
            let model = ConditionalDensityModel::fit_rows(dataset, e, fit.as_deref(), target, subset, &config.density)?;
            Ok(model.bandwidths().cloned())
        })
        .collect()
}

/// Candidates in dataset column order, deduplicated and validated.
fn ordered_candidates<S: AsRef<str>>(dataset: &MultiDomainDataset, target: &str, candidates: &[S]) -> Result<Vec<String>> {
    check_target_and_subset(dataset, target, candidates)?;
    let idx: BTreeSet<usize> = dataset.column_indices(candidates)?.into_iter().collect();
    Ok(idx.into_iter().map(|j| dataset.columns()[j].name.clone()).collect())
}

/// All subsets of `items` of the given sizes, ordered by size then
/// lexicographically by position.
pub fn enumerate_subsets(items: &[String], sizes: impl IntoIterator<Item = usize>) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    for k in sizes {
        if k > items.len() {
            continue;
        }
        let mut idx: Vec<usize> = (0..k).collect();
        loop {
            out.push(idx.iter().map(|&i| items[i].clone()).collect());
            // advance to the next combination
            let mut i = k;
            while i > 0 && idx[i - 1] == items.len() - k + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            idx[i - 1] += 1;
            for j in i..k {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }
    out
}

/// Scores every subset of `candidates` (including the empty one). Jobs run in
/// parallel; the output order is that of [`enumerate_subsets`].
pub fn score_all_subsets<S: AsRef<str>>(
    dataset: &MultiDomainDataset,
    target: &str,
    candidates: &[S],
    config: &ScoreConfig,
) -> Result<Vec<SubsetScore>> {
    let cands = ordered_candidates(dataset, target, candidates)?;
    if cands.len() > config.candidate_cap {
        return Err(Error::TooManyCandidates { got: cands.len(), cap: config.candidate_cap });
    }
    let subsets = enumerate_subsets(&cands, 0..=cands.len());
    score_many(dataset, target, &subsets, config)
}

fn score_many(dataset: &MultiDomainDataset, target: &str, subsets: &[Vec<String>], config: &ScoreConfig) -> Result<Vec<SubsetScore>> {
    subsets
        .par_iter()
        .map(|s| score_subset(dataset, target, s, config))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    H1,
    H2,
    Direction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThresholdOrK {
    Threshold(f64),
    K(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryReport {
    pub target: String,
    pub candidates: Vec<String>,
    pub method: Method,
    pub threshold_or_k: ThresholdOrK,
    pub chosen: Vec<String>,
    pub subsets: Vec<SubsetScore>,
    pub settings: ScoreConfig,
    pub seed: u64,
    pub uninformative: bool,
}

/// `∪ {S : L(S) > c}`, in the order of `candidates`.
pub fn h1_select(candidates: &[String], scores: &[SubsetScore], c: f64) -> Vec<String> {
    let union: BTreeSet<&str> = scores
        .iter()
        .filter(|s| s.l > c)
        .flat_map(|s| s.subset.iter().map(String::as_str))
        .collect();
    candidates.iter().filter(|c| union.contains(c.as_str())).cloned().collect()
}

/// Arg-max of `L` among size-`k` subsets; ties go to the larger median
/// p-value, then to the earlier subset in enumeration order.
pub fn h2_select(scores: &[SubsetScore], k: usize) -> Vec<String> {
    let mut best: Option<&SubsetScore> = None;
    for s in scores.iter().filter(|s| s.subset.len() == k) {
        best = match best {
            None => Some(s),
            Some(b) if s.l > b.l || (s.l == b.l && s.median_pvalue() > b.median_pvalue()) => Some(s),
            keep => keep,
        };
    }
    best.map(|s| s.subset.clone()).unwrap_or_default()
}

impl DiscoveryReport {
    pub fn from_scores(
        target: &str,
        candidates: Vec<String>,
        param: ThresholdOrK,
        subsets: Vec<SubsetScore>,
        settings: &ScoreConfig,
    ) -> Self {
        let (method, chosen) = match param {
            ThresholdOrK::Threshold(c) => (Method::H1, h1_select(&candidates, &subsets, c)),
            ThresholdOrK::K(k) => (Method::H2, h2_select(&subsets, k)),
        };
        let uninformative = subsets.iter().any(|s| s.uninformative);
        Self {
            target: target.to_owned(),
            candidates,
            method,
            threshold_or_k: param,
            chosen,
            subsets,
            settings: settings.clone(),
            seed: settings.seed,
            uninformative,
        }
    }
}

/// H1: scores all `2^|A|` subsets and returns the union of those with `L > c`.
pub fn h1_parent_set<S: AsRef<str>>(
    dataset: &MultiDomainDataset,
    target: &str,
    candidates: &[S],
    c: f64,
    config: &ScoreConfig,
) -> Result<DiscoveryReport> {
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::InvalidArgument(format!("threshold c must lie in (0, 1), got {c}")));
    }
    let cands = ordered_candidates(dataset, target, candidates)?;
    let scores = score_all_subsets(dataset, target, &cands, config)?;
    Ok(DiscoveryReport::from_scores(target, cands, ThresholdOrK::Threshold(c), scores, config))
}

/// H2: scores the size-`k` subsets and returns the one with the largest `L`.
pub fn h2_parent_set<S: AsRef<str>>(
    dataset: &MultiDomainDataset,
    target: &str,
    candidates: &[S],
    k: usize,
    config: &ScoreConfig,
) -> Result<DiscoveryReport> {
    let cands = ordered_candidates(dataset, target, candidates)?;
    if k > cands.len() {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds the {} candidates", cands.len())));
    }
    let scores = if k == 0 {
        Vec::new()
    } else {
        score_many(dataset, target, &enumerate_subsets(&cands, [k]), config)?
    };
    Ok(DiscoveryReport::from_scores(target, cands, ThresholdOrK::K(k), scores, config))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionLabel {
    XCausesY,
    YCausesX,
    Inconclusive,
}

impl DirectionLabel {
    pub fn from_scores(l_forward: f64, l_reverse: f64) -> Self {
        if (l_forward - l_reverse).abs() < DIRECTION_TIE {
            DirectionLabel::Inconclusive
        } else if l_forward > l_reverse {
            DirectionLabel::XCausesY
        } else {
            DirectionLabel::YCausesX
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionDecision {
    pub x: String,
    pub y: String,
    pub label: DirectionLabel,
    /// Score of `{x}` as the parent set of `y`.
    pub forward: SubsetScore,
    /// Score of `{y}` as the parent set of `x`.
    pub reverse: SubsetScore,
    pub uninformative: bool,
}

/// Picks the direction whose single-parent hypothesis has the larger `L`.
pub fn decide_direction(dataset: &MultiDomainDataset, x: &str, y: &str, config: &ScoreConfig) -> Result<DirectionDecision> {
    if x == y {
        return Err(Error::InvalidArgument("the two columns must differ".into()));
    }
    let forward = score_subset(dataset, y, &[x], config)?;
    let reverse = score_subset(dataset, x, &[y], config)?;
    let label = DirectionLabel::from_scores(forward.l, reverse.l);
    Ok(DirectionDecision {
        x: x.to_owned(),
        y: y.to_owned(),
        label,
        uninformative: forward.uninformative && reverse.uninformative,
        forward,
        reverse,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `(TP + TN) / #(candidate, instance) pairs`.
    pub accuracy: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
    /// No positive predictions at all: precision reported as 0.
    pub precision_undefined: bool,
}

/// Micro-averaged edge metrics over all (candidate, instance) pairs.
pub fn evaluate_metrics(reports: &[DiscoveryReport], truths: &[Vec<String>]) -> Result<Metrics> {
    if reports.len() != truths.len() {
        return Err(Error::LengthMismatch(reports.len(), truths.len()));
    }
    let (mut tp, mut fp, mut fneg, mut tn) = (0, 0, 0, 0);
    for (report, truth) in reports.iter().zip(truths) {
        let chosen: BTreeSet<&str> = report.chosen.iter().map(String::as_str).collect();
        let truth: BTreeSet<&str> = truth.iter().map(String::as_str).collect();
        let universe: BTreeSet<&str> = report.candidates.iter().map(String::as_str).chain(truth.iter().copied()).collect();
        for c in universe {
            match (chosen.contains(c), truth.contains(c)) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                (false, false) => tn += 1,
            }
        }
    }
    let precision_undefined = tp + fp == 0;
    let precision = if precision_undefined { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fneg == 0 { 0.0 } else { tp as f64 / (tp + fneg) as f64 };
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    let total = tp + fp + fneg + tn;
    Ok(Metrics {
        precision,
        recall,
        f1,
        accuracy: if total == 0 { 0.0 } else { (tp + tn) as f64 / total as f64 },
        true_positives: tp,
        false_positives: fp,
        false_negatives: fneg,
        true_negatives: tn,
        precision_undefined,
    })
}

/// Fraction of decisions equal to the truth.
pub fn direction_accuracy(decisions: &[DirectionLabel], truths: &[DirectionLabel]) -> Result<f64> {
    if decisions.len() != truths.len() {
        return Err(Error::LengthMismatch(decisions.len(), truths.len()));
    }
    if decisions.is_empty() {
        return Ok(0.0);
    }
    let correct = decisions.iter().zip(truths).filter(|(a, b)| a == b).count();
    Ok(correct as f64 / decisions.len() as f64)
}
