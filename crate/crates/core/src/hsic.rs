//! HSIC independence test with Gaussian kernels and a permutation null.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::derive_seed;

pub const DEFAULT_PERMUTATIONS: usize = 499;
pub const MIN_PERMUTATIONS: usize = 99;
pub const MIN_SAMPLES: usize = 5;
const MEDIAN_SUBSAMPLE: usize = 1000;

/// `n` points of dimension `dim`, row-major. Zero-dimensional points are allowed
/// and are all identical.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    dim: usize,
    n: usize,
    data: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != dim * n {
            return Err(Error::DimensionMismatch { expected: dim * n, got: data.len() });
        }
        Ok(Self { dim, n, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: r.len() });
        }
        Ok(Self { dim, n: rows.len(), data: rows.concat() })
    }

    pub fn from_scalars(values: &[f64]) -> Self {
        Self { dim: 1, n: values.len(), data: values.to_vec() }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn is_constant(&self) -> bool {
        self.n == 0 || (1..self.n).all(|i| self.row(i) == self.row(0))
    }

    fn subset(&self, idx: &[usize]) -> Self {
        Self {
            dim: self.dim,
            n: idx.len(),
            data: idx.iter().flat_map(|&i| self.row(i).iter().copied()).collect(),
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Gaussian Gram matrix `exp(−‖a−b‖² / (2σ²))`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    n: usize,
    values: Vec<f64>,
    bandwidth: f64,
}

impl KernelMatrix {
    pub fn gaussian(points: &Points, bandwidth: f64) -> Self {
        let n = points.len();
        let mut values = vec![0.0; n * n];
        let scale = -0.5 / (bandwidth * bandwidth);
        for i in 0..n {
            values[i * n + i] = 1.0;
            for j in (i + 1)..n {
                let k = (scale * sq_dist(points.row(i), points.row(j))).exp();
                values[i * n + j] = k;
                values[j * n + i] = k;
            }
        }
        Self { n, values, bandwidth }
    }

    /// Wraps a precomputed symmetric matrix.
    pub fn from_values(n: usize, values: Vec<f64>, bandwidth: f64) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::DimensionMismatch { expected: n * n, got: values.len() });
        }
        Ok(Self { n, values, bandwidth })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// `H K H` with `H = I − 𝟙𝟙ᵀ/n`.
    fn centered(&self) -> Vec<f64> {
        let n = self.n;
        let nf = n as f64;
        let row_means: Vec<f64> = (0..n).map(|i| self.values[i * n..(i + 1) * n].iter().sum::<f64>() / nf).collect();
        let col_means: Vec<f64> = (0..n).map(|j| (0..n).map(|i| self.values[i * n + j]).sum::<f64>() / nf).collect();
        let grand = row_means.iter().sum::<f64>() / nf;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = self.values[i * n + j] - row_means[i] - col_means[j] + grand;
            }
        }
        out
    }
}

/// Median pairwise Euclidean distance, over a seeded subsample of 1000 points
/// when there are more. Falls back to the mean positive distance when the
/// median is zero.
pub fn median_heuristic(points: &Points, seed: u64) -> Result<f64> {
    if points.len() < 2 || points.is_constant() {
        return Err(Error::DegeneratePoints);
    }
    let sub;
    let pts = if points.len() > MEDIAN_SUBSAMPLE {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = rand::seq::index::sample(&mut rng, points.len(), MEDIAN_SUBSAMPLE).into_vec();
        idx.sort_unstable();
        sub = points.subset(&idx);
        &sub
    } else {
        points
    };
    let n = pts.len();
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            dists.push(sq_dist(pts.row(i), pts.row(j)).sqrt());
        }
    }
    let median = median_in_place(&mut dists);
    if median > 0.0 {
        return Ok(median);
    }
    let positive: Vec<f64> = dists.into_iter().filter(|&d| d > 0.0).collect();
    if positive.is_empty() {
        // Only possible when the subsample happened to pick identical points.
        return Err(Error::DegeneratePoints);
    }
    Ok(positive.iter().sum::<f64>() / positive.len() as f64)
}

fn median_in_place(values: &mut [f64]) -> f64 {
    let n = values.len();
    let mid = n / 2;
    let (_, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        return upper;
    }
    let lower = values[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    0.5 * (lower + upper)
}

/// Biased HSIC V-statistic `trace(K H L H) / n²`, clamped at 0.
pub fn hsic_statistic(k: &KernelMatrix, l: &KernelMatrix) -> Result<f64> {
    if k.n() != l.n() {
        return Err(Error::SizeMismatch(k.n(), l.n()));
    }
    if k.n() < 2 {
        return Err(Error::TooFewSamples { got: k.n(), need: 2 });
    }
    let kc = k.centered();
    let s: f64 = kc.iter().zip(&l.values).map(|(a, b)| a * b).sum();
    Ok((s / (k.n() as f64).powi(2)).max(0.0))
}

/// `Σᵢⱼ Kc[i,j]·L[π(i),π(j)] / n²` using the symmetry of both matrices.
fn permuted_statistic(kc: &[f64], l: &[f64], n: usize, perm: &[usize]) -> f64 {
    let mut diag = 0.0;
    let mut off = 0.0;
    for i in 0..n {
        let krow = &kc[i * n..(i + 1) * n];
        let lrow = &l[perm[i] * n..(perm[i] + 1) * n];
        diag += krow[i] * lrow[perm[i]];
        let mut acc = 0.0;
        for j in (i + 1)..n {
            acc += krow[j] * lrow[perm[j]];
        }
        off += acc;
    }
    ((diag + 2.0 * off) / (n as f64 * n as f64)).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    /// `(1 + #{permuted ≥ observed}) / (B + 1)`.
    pub p_value: f64,
    pub permutations: usize,
    pub seed: u64,
}

/// Permutation test of `x ⫫ y`.
///
/// Bandwidths come from the median heuristic on the original samples; the
/// Gram matrices are built once and replica `b` permutes the rows of `y` with
/// an RNG seeded from `(seed, b)`, so the result does not depend on how the
/// replicas are scheduled.
pub fn permutation_pvalue(x: &Points, y: &Points, permutations: usize, seed: u64) -> Result<TestResult> {
    let n = x.len();
    if y.len() != n {
        return Err(Error::SizeMismatch(n, y.len()));
    }
    if n < MIN_SAMPLES {
        return Err(Error::TooFewSamples { got: n, need: MIN_SAMPLES });
    }
    if permutations < MIN_PERMUTATIONS {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_PERMUTATIONS} permutations, got {permutations}"
        )));
    }
    // A constant sample has a zero centered Gram matrix: every statistic is 0.
    if x.dim() == 0 || y.dim() == 0 || x.is_constant() || y.is_constant() {
        return Ok(TestResult { statistic: 0.0, p_value: 1.0, permutations, seed });
    }
    let kx = KernelMatrix::gaussian(x, median_heuristic(x, derive_seed(seed, "median-x", 0))?);
    let ky = KernelMatrix::gaussian(y, median_heuristic(y, derive_seed(seed, "median-y", 0))?);
    let kc = kx.centered();
    drop(kx);
    let identity: Vec<usize> = (0..n).collect();
    let observed = permuted_statistic(&kc, &ky.values, n, &identity);
    let exceed = (0..permutations)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "permutation", b as u64));
            let mut perm = identity.clone();
            perm.shuffle(&mut rng);
            usize::from(permuted_statistic(&kc, &ky.values, n, &perm) >= observed)
        })
        .sum::<usize>();
    Ok(TestResult {
        statistic: observed,
        p_value: (1 + exceed) as f64 / (permutations + 1) as f64,
        permutations,
        seed,
    })
}
