//! Density-vectorization onto the probability simplex and Γ-sample construction.
//!
//! For a point `(x, y)` the per-domain conditional densities
//! `w = (p¹(y|x), …, pᵐ(y|x))` are normalized to `γ = w / ‖w‖₁`. When the
//! conditioning set holds the true parents of `y` under a bijective mechanism,
//! `γ` depends on the exogenous noise only, and is therefore independent of `x`
//! in every domain.

use serde::{Deserialize, Serialize};

use crate::data::MultiDomainDataset;
use crate::density::ConditionalDensityModel;
use crate::error::{Error, Result};

/// Tolerance on `Σ entries = 1`.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// A point of the simplex `S_m`: nonnegative entries summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimplexVector(Vec<f64>);

impl SimplexVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() || entries.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("not a simplex point: {entries:?}")));
        }
        let total = neumaier_sum(&entries);
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidArgument(format!("simplex entries sum to {total}")));
        }
        Ok(Self(entries))
    }

    /// Projects a nonnegative vector onto the simplex by L1 normalization.
    pub fn normalize(weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("negative or non-finite weight in {weights:?}")));
        }
        let total = neumaier_sum(weights);
        if !(total > 0.0) {
            return Err(Error::DegenerateDensity);
        }
        Self::new(weights.iter().map(|w| w / total).collect())
    }

    pub fn entries(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Compensated (Neumaier) summation.
fn neumaier_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Anything that can report `p(y | x)` for one domain.
pub trait ConditionalDensity {
    fn conditioner_dim(&self) -> usize;
    fn density(&self, y: f64, x: &[f64]) -> Result<f64>;
}

impl ConditionalDensity for ConditionalDensityModel {
    fn conditioner_dim(&self) -> usize {
        ConditionalDensityModel::conditioner_dim(self)
    }

    fn density(&self, y: f64, x: &[f64]) -> Result<f64> {
        self.eval(y, x)
    }
}

/// Analytic density used in place of a fitted model, to separate
/// identification from estimation error.
pub struct OracleDensity<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(f64, &[f64]) -> f64> OracleDensity<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(f64, &[f64]) -> f64> ConditionalDensity for OracleDensity<F> {
    fn conditioner_dim(&self) -> usize {
        self.dim
    }

    fn density(&self, y: f64, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        Ok((self.f)(y, x))
    }
}

/// `Φ(y | x)`: per-domain densities at `(x, y)` normalized onto the simplex.
pub fn phi<D: ConditionalDensity>(models: &[D], y: f64, x: &[f64]) -> Result<SimplexVector> {
    if models.is_empty() {
        return Err(Error::InvalidArgument("need at least one domain model".into()));
    }
    let w = models.iter().map(|m| m.density(y, x)).collect::<Result<Vec<f64>>>()?;
    SimplexVector::normalize(&w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaSample {
    pub gamma: SimplexVector,
    pub conditioner_values: Vec<f64>,
    /// 0-based domain index of the row the sample came from.
    pub domain: usize,
}

/// One Γ sample per row of `dataset`, in row order (domain by domain).
pub fn gamma_samples<D: ConditionalDensity, S: AsRef<str>>(
    models: &[D],
    dataset: &MultiDomainDataset,
    target: &str,
    conditioners: &[S],
) -> Result<Vec<GammaSample>> {
    if models.len() != dataset.n_domains() {
        return Err(Error::DimensionMismatch { expected: dataset.n_domains(), got: models.len() });
    }
    let t = dataset.column_index(target)?;
    let cs = dataset.column_indices(conditioners)?;
    if let Some(m) = models.iter().find(|m| m.conditioner_dim() != cs.len()) {
        return Err(Error::DimensionMismatch { expected: cs.len(), got: m.conditioner_dim() });
    }
    let mut out = Vec::with_capacity(dataset.n_rows());
    for (e, block) in dataset.domains().iter().enumerate() {
        for row in 0..block.n_rows() {
            let x = block.row_values(row, &cs);
            let gamma = phi(models, block.value(row, t), &x)?;
            out.push(GammaSample { gamma, conditioner_values: x, domain: e });
        }
    }
    Ok(out)
}
