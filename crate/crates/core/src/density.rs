//! Per-domain conditional density and mass estimation.
//!
//! * all columns continuous: kernel conditional density
//!   `p̂(y|x) = Σ K_h(x−xₗ)·K_b(y−yₗ) / Σ K_h(x−xₗ)` with Gaussian product kernels;
//! * all columns discrete: add-λ smoothed conditional frequency table;
//! * mixed: Gaussian kernels on continuous dimensions and Aitchison–Aitken
//!   kernels (leak `λ`, i.e. `1−λ` on a match, `λ/(c−1)` otherwise) on discrete ones.
//!
//! An empty conditioner set gives the marginal estimator of the target.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{ColumnKind, MultiDomainDataset};
use crate::error::{Error, Result};

pub const DEFAULT_SMOOTHING: f64 = 0.5;
pub const DEFAULT_LEAK: f64 = 0.05;
/// Smallest value [`ConditionalDensityModel::eval`] returns.
pub const DENSITY_FLOOR: f64 = 1e-12;
const UNDERFLOW: f64 = 1e-300;
const LSCV_MAX_ROWS: usize = 250;
const LSCV_FACTORS: [f64; 7] = [0.25, 0.35, 0.5, 0.7, 1.0, 1.4, 2.0];
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthMethod {
    NormalReference,
    /// Least-squares cross-validation over multiples of the normal-reference
    /// bandwidths, on a strided subsample of at most 250 rows.
    Lscv,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityConfig {
    pub bandwidth_method: BandwidthMethod,
    /// Add-λ pseudo-count for frequency tables.
    pub smoothing: f64,
    /// Aitchison–Aitken leak for discrete dimensions of mixed models.
    pub leak: f64,
    pub floor: f64,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self {
            bandwidth_method: BandwidthMethod::NormalReference,
            smoothing: DEFAULT_SMOOTHING,
            leak: DEFAULT_LEAK,
            floor: DENSITY_FLOOR,
        }
    }
}

/// Kernel bandwidths, one per continuous conditioner dimension plus the
/// target's when it is continuous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bandwidths {
    pub conditioner: Vec<f64>,
    pub target: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    ContinuousKernel,
    DiscreteTable,
    Mixed,
}

/// `1.06 · σ̂ · n^(-1/5)`.
pub fn normal_reference_bandwidth(values: &[f64]) -> Result<f64> {
    normal_reference_bandwidth_dim(values, 1)
}

/// `1.06 · σ̂ · n^(-1/(4+d))` for a dimension of a `d`-dimensional kernel.
pub fn normal_reference_bandwidth_dim(values: &[f64], d: usize) -> Result<f64> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InsufficientData(n));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let sd = var.sqrt();
    if !(sd > 0.0) || !sd.is_finite() {
        return Err(Error::DegenerateSample("constant input to bandwidth selection".into()));
    }
    Ok(1.06 * sd * (n as f64).powf(-1.0 / (4.0 + d as f64)))
}

#[derive(Debug, Clone, PartialEq)]
struct FrequencyTable {
    /// conditioning cell → (row count, target level → count)
    cells: BTreeMap<Vec<i64>, (usize, BTreeMap<i64, usize>)>,
}

/// A fitted estimator of `p(target | conditioners)` for one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalDensityModel {
    kind: ModelKind,
    target_kind: ColumnKind,
    cond_kinds: Vec<ColumnKind>,
    n: usize,
    /// Training targets; divided by the target bandwidth when continuous.
    target: Vec<f64>,
    /// Row-major `n × d`; continuous dimensions divided by their bandwidth.
    cond: Vec<f64>,
    /// Bandwidth per conditioner dimension (`1.0` placeholder for discrete ones).
    cond_scale: Vec<f64>,
    /// Level count per conditioner dimension (0 for continuous ones).
    cond_levels: Vec<usize>,
    target_levels: Vec<i64>,
    bandwidths: Option<Bandwidths>,
    table: Option<FrequencyTable>,
    config: DensityConfig,
}

/// Raw inputs for [`ConditionalDensityModel::fit_columns`].
#[derive(Debug, Clone)]
pub struct FitColumns<'a> {
    pub target: &'a [f64],
    pub target_kind: ColumnKind,
    pub conditioners: Vec<&'a [f64]>,
    pub conditioner_kinds: Vec<ColumnKind>,
    /// Discrete target levels; defaults to those observed in `target`.
    pub target_levels: Option<Vec<i64>>,
    /// Level counts of discrete conditioners; defaults to those observed.
    pub conditioner_levels: Option<Vec<usize>>,
}

impl ConditionalDensityModel {
    /// Fits `p(target | conditioners)` on all rows of domain `domain`.
    pub fn fit<S: AsRef<str>>(
        dataset: &MultiDomainDataset,
        domain: usize,
        target: &str,
        conditioners: &[S],
        config: &DensityConfig,
    ) -> Result<Self> {
        Self::fit_rows(dataset, domain, None, target, conditioners, config)
    }

    /// Like [`fit`](Self::fit), restricted to the given rows of the domain block.
    /// Discrete level sets are pooled over all domains so that models of
    /// different domains share a support.
    pub fn fit_rows<S: AsRef<str>>(
        dataset: &MultiDomainDataset,
        domain: usize,
        rows: Option<&[usize]>,
        target: &str,
        conditioners: &[S],
        config: &DensityConfig,
    ) -> Result<Self> {
        let t = dataset.column_index(target)?;
        let cs = dataset.column_indices(conditioners)?;
        if cs.contains(&t) {
            return Err(Error::InvalidArgument(format!("target `{target}` is also a conditioner")));
        }
        let block = dataset.domain(domain);
        let pick = |j: usize| -> Vec<f64> {
            match rows {
                Some(r) => r.iter().map(|&i| block.value(i, j)).collect(),
                None => block.column(j).to_vec(),
            }
        };
        let target_values = pick(t);
        let cond_values: Vec<Vec<f64>> = cs.iter().map(|&j| pick(j)).collect();
        let target_kind = dataset.kind(t);
        let target_levels = (target_kind == ColumnKind::Discrete).then(|| dataset.levels(t));
        let conditioner_levels = cs
            .iter()
            .map(|&j| match dataset.kind(j) {
                ColumnKind::Discrete => dataset.levels(j).len(),
                ColumnKind::Continuous => 0,
            })
            .collect();
        Self::fit_columns(
            FitColumns {
                target: &target_values,
                target_kind,
                conditioners: cond_values.iter().map(Vec::as_slice).collect(),
                conditioner_kinds: cs.iter().map(|&j| dataset.kind(j)).collect(),
                target_levels,
                conditioner_levels: Some(conditioner_levels),
            },
            config,
        )
    }

    pub fn fit_columns(input: FitColumns<'_>, config: &DensityConfig) -> Result<Self> {
        let n = input.target.len();
        if n < 2 {
            return Err(Error::InsufficientData(n));
        }
        let d = input.conditioners.len();
        if input.conditioner_kinds.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: input.conditioner_kinds.len() });
        }
        if let Some(c) = input.conditioners.iter().find(|c| c.len() != n) {
            return Err(Error::DimensionMismatch { expected: n, got: c.len() });
        }
        let all_discrete = input.target_kind == ColumnKind::Discrete
            && input.conditioner_kinds.iter().all(|&k| k == ColumnKind::Discrete);
        let all_continuous = input.target_kind == ColumnKind::Continuous
            && input.conditioner_kinds.iter().all(|&k| k == ColumnKind::Continuous);
        let kind = if all_discrete {
            ModelKind::DiscreteTable
        } else if all_continuous {
            ModelKind::ContinuousKernel
        } else {
            ModelKind::Mixed
        };

        let target_levels = match input.target_kind {
            ColumnKind::Discrete => input.target_levels.clone().unwrap_or_else(|| observed_levels(input.target)),
            ColumnKind::Continuous => Vec::new(),
        };
        let cond_levels: Vec<usize> = match &input.conditioner_levels {
            Some(l) => l.clone(),
            None => input
                .conditioners
                .iter()
                .zip(&input.conditioner_kinds)
                .map(|(c, k)| match k {
                    ColumnKind::Discrete => observed_levels(c).len(),
                    ColumnKind::Continuous => 0,
                })
                .collect(),
        };

        let mut model = Self {
            kind,
            target_kind: input.target_kind,
            cond_kinds: input.conditioner_kinds.clone(),
            n,
            target: input.target.to_vec(),
            cond: (0..n)
                .flat_map(|i| input.conditioners.iter().map(move |c| c[i]))
                .collect(),
            cond_scale: vec![1.0; d],
            cond_levels,
            target_levels,
            bandwidths: None,
            table: None,
            config: *config,
        };

        if kind == ModelKind::DiscreteTable {
            let mut cells: BTreeMap<Vec<i64>, (usize, BTreeMap<i64, usize>)> = BTreeMap::new();
            for i in 0..n {
                let key: Vec<i64> = model.cond[i * d..(i + 1) * d].iter().map(|&v| v as i64).collect();
                let cell = cells.entry(key).or_default();
                cell.0 += 1;
                *cell.1.entry(input.target[i] as i64).or_default() += 1;
            }
            model.table = Some(FrequencyTable { cells });
            return Ok(model);
        }

        // Normal-reference starting point.
        let continuous_dims = input.conditioner_kinds.iter().filter(|&&k| k == ColumnKind::Continuous).count()
            + usize::from(input.target_kind == ColumnKind::Continuous);
        let mut h: Vec<f64> = Vec::new();
        for (c, k) in input.conditioners.iter().zip(&input.conditioner_kinds) {
            if *k == ColumnKind::Continuous {
                h.push(normal_reference_bandwidth_dim(c, continuous_dims)?);
            }
        }
        let mut b = match input.target_kind {
            ColumnKind::Continuous => Some(normal_reference_bandwidth(input.target)?),
            ColumnKind::Discrete => None,
        };
        if config.bandwidth_method == BandwidthMethod::Lscv {
            let (hf, bf) = model.lscv_factors(&h, b);
            h.iter_mut().for_each(|v| *v *= hf);
            if let Some(v) = b.as_mut() {
                *v *= bf;
            }
        }
        model.apply_bandwidths(&h, b);
        Ok(model)
    }

    fn apply_bandwidths(&mut self, h: &[f64], b: Option<f64>) {
        let d = self.cond_kinds.len();
        let mut hi = h.iter();
        for k in 0..d {
            if self.cond_kinds[k] == ColumnKind::Continuous {
                self.cond_scale[k] = *hi.next().expect("one bandwidth per continuous dimension");
            }
        }
        for i in 0..self.n {
            for k in 0..d {
                if self.cond_kinds[k] == ColumnKind::Continuous {
                    self.cond[i * d + k] /= self.cond_scale[k];
                }
            }
        }
        if let Some(b) = b {
            self.target.iter_mut().for_each(|v| *v /= b);
        }
        self.bandwidths = Some(Bandwidths { conditioner: h.to_vec(), target: b });
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    /// `None` for frequency tables.
    pub fn bandwidths(&self) -> Option<&Bandwidths> {
        self.bandwidths.as_ref()
    }

    pub fn conditioner_dim(&self) -> usize {
        self.cond_kinds.len()
    }

    pub fn n_train(&self) -> usize {
        self.n
    }

    pub fn target_levels(&self) -> &[i64] {
        &self.target_levels
    }

    /// Density (continuous target) or mass (discrete target) of `y` given `x`,
    /// never below the configured floor.
    pub fn eval(&self, y: f64, x: &[f64]) -> Result<f64> {
        if x.len() != self.cond_kinds.len() {
            return Err(Error::DimensionMismatch { expected: self.cond_kinds.len(), got: x.len() });
        }
        Ok(self.eval_unchecked(y, x))
    }

    pub(crate) fn eval_unchecked(&self, y: f64, x: &[f64]) -> f64 {
        let raw = match &self.table {
            Some(table) => self.table_mass(table, y, x),
            None => self.kernel_value(y, x),
        };
        if raw.is_finite() { raw.max(self.config.floor) } else { self.config.floor }
    }

    fn table_mass(&self, table: &FrequencyTable, y: f64, x: &[f64]) -> f64 {
        let key: Vec<i64> = x.iter().map(|&v| v as i64).collect();
        let lambda = self.config.smoothing;
        let levels = self.target_levels.len() as f64;
        let (n_x, count) = table
            .cells
            .get(&key)
            .map_or((0, 0), |(n_x, counts)| (*n_x, counts.get(&(y as i64)).copied().unwrap_or(0)));
        (count as f64 + lambda) / (n_x as f64 + lambda * levels)
    }

    fn kernel_value(&self, y: f64, x: &[f64]) -> f64 {
        let d = self.cond_kinds.len();
        let leak = self.config.leak;
        let xs: Vec<f64> = x.iter().zip(&self.cond_scale).map(|(v, s)| v / s).collect();
        let (yb, b) = match self.bandwidths.as_ref().and_then(|bw| bw.target) {
            Some(b) => (y / b, b),
            None => (y, 1.0),
        };
        let target_continuous = self.target_kind == ColumnKind::Continuous;
        let all_continuous = self.kind == ModelKind::ContinuousKernel;
        let (target_match, target_miss) = aa_weights(leak, self.target_levels.len());

        let mut num = 0.0;
        let mut den = 0.0;
        for l in 0..self.n {
            let row = &self.cond[l * d..(l + 1) * d];
            let mut log_w = 0.0;
            let mut w_disc = 1.0;
            if all_continuous {
                for (a, b) in xs.iter().zip(row) {
                    let u = a - b;
                    log_w -= 0.5 * u * u;
                }
            } else {
                for k in 0..d {
                    match self.cond_kinds[k] {
                        ColumnKind::Continuous => {
                            let u = xs[k] - row[k];
                            log_w -= 0.5 * u * u;
                        }
                        ColumnKind::Discrete => {
                            let (hit, miss) = aa_weights(leak, self.cond_levels[k]);
                            w_disc *= if xs[k] == row[k] { hit } else { miss };
                        }
                    }
                }
            }
            let w = w_disc * log_w.exp();
            den += w;
            let t = self.target[l];
            if target_continuous {
                let u = yb - t;
                num += w_disc * (log_w - 0.5 * u * u).exp();
            } else {
                num += w * if y == t { target_match } else { target_miss };
            }
        }
        if den < UNDERFLOW {
            return self.config.floor;
        }
        let value = num / den;
        if target_continuous { value * INV_SQRT_2PI / b } else { value }
    }

    /// Picks multipliers `(h_factor, b_factor)` of the starting bandwidths that
    /// minimise the least-squares cross-validation criterion
    /// `mean(∫p̂₋ᵢ(y|xᵢ)² dy) − 2·mean(p̂₋ᵢ(yᵢ|xᵢ))`.
    fn lscv_factors(&self, h: &[f64], b: Option<f64>) -> (f64, f64) {
        let n_sub = self.n.min(LSCV_MAX_ROWS);
        let stride = self.n as f64 / n_sub as f64;
        let idx: Vec<usize> = (0..n_sub).map(|i| (i as f64 * stride) as usize).collect();
        let d = self.cond_kinds.len();
        let leak = self.config.leak;
        let (t_hit, t_miss) = aa_weights(leak, self.target_levels.len());
        let h_grid: &[f64] = if h.is_empty() { &[1.0] } else { &LSCV_FACTORS };
        let b_grid: &[f64] = if b.is_some() { &LSCV_FACTORS } else { &[1.0] };

        // Target-side matrices depend only on the b factor.
        let target_mats: Vec<(Vec<f64>, Vec<f64>)> = b_grid
            .iter()
            .map(|&bf| {
                let mut cross = vec![0.0; n_sub * n_sub];
                let mut point = vec![0.0; n_sub * n_sub];
                for (a, &i) in idx.iter().enumerate() {
                    for (c, &j) in idx.iter().enumerate() {
                        let (yi, yj) = (self.target[i], self.target[j]);
                        let (cv, pv) = match b {
                            Some(b0) => {
                                let bw = b0 * bf;
                                let u = (yi - yj) / bw;
                                // ∫ φ_b(y−yᵢ) φ_b(y−yⱼ) dy = φ_{√2·b}(yᵢ−yⱼ)
                                let cross = (-0.25 * u * u).exp() * INV_SQRT_2PI / (bw * std::f64::consts::SQRT_2);
                                (cross, (-0.5 * u * u).exp() * INV_SQRT_2PI / bw)
                            }
                            None => {
                                let levels = self.target_levels.len();
                                let cross = if yi == yj {
                                    t_hit * t_hit + levels.saturating_sub(1) as f64 * t_miss * t_miss
                                } else {
                                    2.0 * t_hit * t_miss + levels.saturating_sub(2) as f64 * t_miss * t_miss
                                };
                                (cross, if yi == yj { t_hit } else { t_miss })
                            }
                        };
                        cross[a * n_sub + c] = cv;
                        point[a * n_sub + c] = pv;
                    }
                }
                (cross, point)
            })
            .collect();

        let mut best = (f64::INFINITY, 1.0, 1.0);
        let mut weights = vec![0.0; n_sub * n_sub];
        for &hf in h_grid {
            for (a, &i) in idx.iter().enumerate() {
                for (c, &j) in idx.iter().enumerate() {
                    let mut log_w = 0.0;
                    let mut w_disc = 1.0;
                    for k in 0..d {
                        let (xi, xj) = (self.cond[i * d + k], self.cond[j * d + k]);
                        match self.cond_kinds[k] {
                            ColumnKind::Continuous => {
                                // cond is still unscaled while bandwidths are being chosen
                                let u = (xi - xj) / (self.cond_scale_hint(h, k) * hf);
                                log_w -= 0.5 * u * u;
                            }
                            ColumnKind::Discrete => {
                                let (hit, miss) = aa_weights(leak, self.cond_levels[k]);
                                w_disc *= if xi == xj { hit } else { miss };
                            }
                        }
                    }
                    weights[a * n_sub + c] = if a == c { 0.0 } else { w_disc * log_w.exp() };
                }
            }
            for (bi, &bf) in b_grid.iter().enumerate() {
                let (cross, point) = &target_mats[bi];
                let mut score = 0.0;
                let mut valid = true;
                for a in 0..n_sub {
                    let w = &weights[a * n_sub..(a + 1) * n_sub];
                    let mu: f64 = w.iter().sum();
                    if mu < UNDERFLOW {
                        valid = false;
                        break;
                    }
                    let mut g = 0.0;
                    for (j, &wj) in w.iter().enumerate() {
                        if wj == 0.0 {
                            continue;
                        }
                        let row = &cross[j * n_sub..(j + 1) * n_sub];
                        let inner: f64 = w.iter().zip(row).map(|(wk, ck)| wk * ck).sum();
                        g += wj * inner;
                    }
                    let f: f64 = w.iter().zip(&point[a * n_sub..(a + 1) * n_sub]).map(|(wj, pj)| wj * pj).sum();
                    score += g / (mu * mu) - 2.0 * f / mu;
                }
                if valid && score < best.0 {
                    best = (score, hf, bf);
                }
            }
        }
        (best.1, best.2)
    }

    fn cond_scale_hint(&self, h: &[f64], k: usize) -> f64 {
        let pos = self.cond_kinds[..k].iter().filter(|&&c| c == ColumnKind::Continuous).count();
        h[pos]
    }
}

/// Aitchison–Aitken weights for a match and a mismatch among `levels` categories.
fn aa_weights(leak: f64, levels: usize) -> (f64, f64) {
    if levels <= 1 {
        (1.0, leak)
    } else {
        (1.0 - leak, leak / (levels as f64 - 1.0))
    }
}

fn observed_levels(values: &[f64]) -> Vec<i64> {
    let set: std::collections::BTreeSet<i64> = values.iter().map(|&v| v as i64).collect();
    set.into_iter().collect()
}
