//! Local polynomial estimators of `m(x) = E(Y | X = x)`.
//!
//! * `M0`: classical local polynomial fit on individual data.
//! * `M1`: average-weighted fit on pools; pool weight is the mean of the
//!   members' kernel weights.
//! * `M2`: product-weighted fit on pools; pool weight is the product of the
//!   members' kernel weights.
//! * `M3`: marginal-integration fit, i.e. `M0` applied to the pseudo responses
//!   `R_j = c_j Z_j - (c_j - 1) μ̂` attached to every member of pool `j`.
//!
//! `M1` and `M2` regress `Z_j` on the pool-averaged monomials
//! `c_j⁻¹ Σ_k (X_jk - x)^ℓ`. All systems are assembled in the scaled basis
//! `((X - x) / h)^ℓ` and the coefficients are rescaled by `h^-ℓ` afterwards.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{IndividualDataset, PooledDataset};
use crate::error::{Error, Result};
use crate::kernels::KernelKind;
use crate::linalg::Matrix;

pub const DEFAULT_RCOND_MIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EstimatorTag {
    M0,
    M1,
    M2,
    M3,
}

impl EstimatorTag {
    pub const ALL: [EstimatorTag; 4] = [EstimatorTag::M0, EstimatorTag::M1, EstimatorTag::M2, EstimatorTag::M3];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorTag::M0 => "m0",
            EstimatorTag::M1 => "m1",
            EstimatorTag::M2 => "m2",
            EstimatorTag::M3 => "m3",
        }
    }

    pub fn uses_pooled_data(self) -> bool {
        self != EstimatorTag::M0
    }
}

impl fmt::Display for EstimatorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "m0" | "individual" => Ok(EstimatorTag::M0),
            "m1" | "average" | "average-weighted" => Ok(EstimatorTag::M1),
            "m2" | "product" | "product-weighted" => Ok(EstimatorTag::M2),
            "m3" | "marginal" | "marginal-integration" => Ok(EstimatorTag::M3),
            other => Err(Error::InvalidArgument(format!("unknown estimator `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub order: usize,
    pub bandwidth: f64,
    pub kernel: KernelKind,
    pub rcond_min: f64,
}

impl FitConfig {
    pub fn new(order: usize, bandwidth: f64) -> Result<Self> {
        let cfg = Self { order, bandwidth, kernel: KernelKind::Epanechnikov, rcond_min: DEFAULT_RCOND_MIN };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_kernel(mut self, kernel: KernelKind) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn with_bandwidth(mut self, bandwidth: f64) -> Result<Self> {
        self.bandwidth = bandwidth;
        self.validate()?;
        Ok(self)
    }

    pub fn with_rcond_min(mut self, rcond_min: f64) -> Result<Self> {
        self.rcond_min = rcond_min;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0) || !self.bandwidth.is_finite() {
            return Err(Error::NonPositiveBandwidth(self.bandwidth));
        }
        if !(self.rcond_min > 0.0 && self.rcond_min < 1.0) {
            return Err(Error::InvalidArgument(format!("rcond_min must lie in (0, 1), got {}", self.rcond_min)));
        }
        Ok(())
    }
}

/// Local coefficients `β̂_0..β̂_p` at `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFit {
    pub x: f64,
    pub beta: Vec<f64>,
}

impl LocalFit {
    pub fn m_hat(&self) -> f64 {
        self.beta[0]
    }

    /// `m^(ℓ)(x) ≈ ℓ! β̂_ℓ`
    pub fn derivative(&self, order: usize) -> Option<f64> {
        let factorial: f64 = (1..=order).map(|k| k as f64).product();
        self.beta.get(order).map(|b| factorial * b)
    }
}

/// Weighted normal equations `S γ = T` in the scaled monomial basis.
struct NormalEquations {
    dim: usize,
    s: Vec<f64>,
    t: Vec<f64>,
    total_weight: f64,
}

impl NormalEquations {
    fn new(order: usize) -> Self {
        let dim = order + 1;
        Self { dim, s: vec![0.0; dim * dim], t: vec![0.0; dim], total_weight: 0.0 }
    }

    fn add(&mut self, weight: f64, basis: &[f64], response: f64) {
        if weight == 0.0 {
            return;
        }
        self.total_weight += weight;
        for i in 0..self.dim {
            let wi = weight * basis[i];
            self.t[i] += wi * response;
            for (s, b) in self.s[i * self.dim..(i + 1) * self.dim].iter_mut().zip(basis) {
                *s += wi * b;
            }
        }
    }

    fn solve(self, x: f64, cfg: &FitConfig) -> Result<LocalFit> {
        if !(self.total_weight > 0.0) {
            return Err(Error::SingularLocalSystem { x, rcond: 0.0 });
        }
        let s = Matrix::from_fn(self.dim, self.dim, |i, j| self.s[i * self.dim + j]);
        let lu = s.lu().ok_or(Error::SingularLocalSystem { x, rcond: 0.0 })?;
        let rcond = lu.rcond(s.norm_one());
        if !(rcond >= cfg.rcond_min) {
            return Err(Error::SingularLocalSystem { x, rcond });
        }
        let gamma = lu.solve(&self.t);
        let mut scale = 1.0;
        let beta: Vec<f64> = gamma
            .iter()
            .map(|g| {
                let b = g / scale;
                scale *= cfg.bandwidth;
                b
            })
            .collect();
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::SingularLocalSystem { x, rcond });
        }
        Ok(LocalFit { x, beta })
    }
}

fn fill_powers(u: f64, out: &mut [f64]) {
    let mut v = 1.0;
    for o in out.iter_mut() {
        *o = v;
        v *= u;
    }
}

/// Indices `[lo, hi)` of sorted `xs` that can carry nonzero kernel weight at `at`.
fn window(xs: &[f64], at: f64, cfg: &FitConfig) -> (usize, usize) {
    if !cfg.kernel.is_compact() {
        return (0, xs.len());
    }
    // Slightly widened; the kernel itself zeroes anything outside the support.
    let reach = cfg.bandwidth * (1.0 + 1e-9) + 1e-12 * at.abs();
    let lo = xs.partition_point(|&v| v < at - reach);
    let hi = xs.partition_point(|&v| v <= at + reach);
    (lo, hi.max(lo))
}

/// Sorted view of individual-level points for repeated local fits.
#[derive(Debug, Clone)]
pub struct IndividualSmoother {
    x: Vec<f64>,
    y: Vec<f64>,
    source: Vec<usize>,
}

impl IndividualSmoother {
    pub fn new(x: &[f64], y: &[f64]) -> Self {
        assert_eq!(x.len(), y.len(), "length mismatch");
        let mut source: Vec<usize> = (0..x.len()).collect();
        source.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
        Self {
            x: source.iter().map(|&i| x[i]).collect(),
            y: source.iter().map(|&i| y[i]).collect(),
            source,
        }
    }

    pub fn from_dataset(data: &IndividualDataset) -> Self {
        Self::new(data.x(), data.y())
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn fit(&self, cfg: &FitConfig, at: f64) -> Result<LocalFit> {
        self.fit_excluding(cfg, at, |_| false)
    }

    /// Fit that ignores every point whose original index satisfies `skip`.
    pub fn fit_excluding(&self, cfg: &FitConfig, at: f64, skip: impl Fn(usize) -> bool) -> Result<LocalFit> {
        let (lo, hi) = window(&self.x, at, cfg);
        let mut eq = NormalEquations::new(cfg.order);
        let mut basis = vec![0.0; cfg.order + 1];
        for i in lo..hi {
            if skip(self.source[i]) {
                continue;
            }
            let u = (self.x[i] - at) / cfg.bandwidth;
            let w = cfg.kernel.eval(u) / cfg.bandwidth;
            if w == 0.0 {
                continue;
            }
            fill_powers(u, &mut basis);
            eq.add(w, &basis, self.y[i]);
        }
        eq.solve(at, cfg)
    }
}

/// How a pool's member kernel weights combine into the pool weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolWeighting {
    Average,
    Product,
}

/// Member index over a pooled dataset for repeated `M1`/`M2` fits.
#[derive(Debug, Clone)]
pub struct PooledSmoother<'a> {
    data: &'a PooledDataset,
    member_x: Vec<f64>,
    member_pool: Vec<usize>,
}

impl<'a> PooledSmoother<'a> {
    pub fn new(data: &'a PooledDataset) -> Self {
        let mut members: Vec<(f64, usize)> = data
            .pools()
            .iter()
            .enumerate()
            .flat_map(|(j, p)| p.covariates().iter().map(move |&x| (x, j)))
            .collect();
        members.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Self {
            data,
            member_x: members.iter().map(|m| m.0).collect(),
            member_pool: members.iter().map(|m| m.1).collect(),
        }
    }

    pub fn data(&self) -> &PooledDataset {
        self.data
    }

    /// Pools with at least one member inside the kernel window, ascending.
    fn candidates(&self, at: f64, cfg: &FitConfig) -> Vec<usize> {
        let (lo, hi) = window(&self.member_x, at, cfg);
        let mut pools: Vec<usize> = self.member_pool[lo..hi].to_vec();
        pools.sort_unstable();
        pools.dedup();
        pools
    }

    pub fn fit(&self, weighting: PoolWeighting, cfg: &FitConfig, at: f64) -> Result<LocalFit> {
        self.fit_excluding(weighting, cfg, at, None)
    }

    /// Fit with pool `skip` removed from the data.
    pub fn fit_excluding(
        &self,
        weighting: PoolWeighting,
        cfg: &FitConfig,
        at: f64,
        skip: Option<usize>,
    ) -> Result<LocalFit> {
        let h = cfg.bandwidth;
        let dim = cfg.order + 1;
        let mut eq = NormalEquations::new(cfg.order);
        let mut basis = vec![0.0; dim];
        let mut powers = vec![0.0; dim];
        for j in self.candidates(at, cfg) {
            if Some(j) == skip {
                continue;
            }
            let pool = &self.data.pools()[j];
            let c = pool.size() as f64;
            let weight = match weighting {
                PoolWeighting::Average => {
                    pool.covariates().iter().map(|&x| cfg.kernel.eval((x - at) / h) / h).sum::<f64>() / c
                }
                PoolWeighting::Product => {
                    pool.covariates().iter().map(|&x| cfg.kernel.eval((x - at) / h) / h).product::<f64>()
                }
            };
            if weight == 0.0 {
                continue;
            }
            basis.iter_mut().for_each(|b| *b = 0.0);
            for &x in pool.covariates() {
                fill_powers((x - at) / h, &mut powers);
                for (b, p) in basis.iter_mut().zip(&powers) {
                    *b += p;
                }
            }
            basis.iter_mut().for_each(|b| *b /= c);
            eq.add(weight, &basis, pool.response());
        }
        eq.solve(at, cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoPoint {
    /// Index of the source pool.
    pub pool: usize,
    pub x: f64,
    pub r: f64,
}

/// Pseudo responses `R_j = c_j Z_j - (c_j - 1) μ̂` expanded to one point per
/// individual, with `μ̂ = N⁻¹ Σ c_j Z_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoData {
    pub mu_hat: f64,
    pub points: Vec<PseudoPoint>,
}

impl PseudoData {
    pub fn x(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.x).collect()
    }

    pub fn r(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.r).collect()
    }

    /// `R_j` for each pool, in pool order.
    pub fn pool_responses(&self, num_pools: usize) -> Vec<f64> {
        let mut out = vec![f64::NAN; num_pools];
        for p in &self.points {
            out[p.pool] = p.r;
        }
        out
    }

    pub fn smoother(&self) -> IndividualSmoother {
        IndividualSmoother::new(&self.x(), &self.r())
    }
}

pub fn build_pseudo_data(data: &PooledDataset) -> PseudoData {
    let n = data.num_individuals() as f64;
    let mu_hat = data.pools().iter().map(|p| p.size() as f64 * p.response()).sum::<f64>() / n;
    let points = data
        .pools()
        .iter()
        .enumerate()
        .flat_map(|(j, p)| {
            let c = p.size() as f64;
            let r = c * p.response() - (c - 1.0) * mu_hat;
            p.covariates().iter().map(move |&x| PseudoPoint { pool: j, x, r })
        })
        .collect();
    PseudoData { mu_hat, points }
}

pub fn fit_individual(data: &IndividualDataset, cfg: &FitConfig, x: f64) -> Result<LocalFit> {
    cfg.validate()?;
    IndividualSmoother::from_dataset(data).fit(cfg, x)
}

pub fn fit_average_weighted(data: &PooledDataset, cfg: &FitConfig, x: f64) -> Result<LocalFit> {
    cfg.validate()?;
    PooledSmoother::new(data).fit(PoolWeighting::Average, cfg, x)
}

pub fn fit_product_weighted(data: &PooledDataset, cfg: &FitConfig, x: f64) -> Result<LocalFit> {
    cfg.validate()?;
    PooledSmoother::new(data).fit(PoolWeighting::Product, cfg, x)
}

pub fn fit_marginal_integration(data: &PooledDataset, cfg: &FitConfig, x: f64) -> Result<LocalFit> {
    cfg.validate()?;
    build_pseudo_data(data).smoother().fit(cfg, x)
}

/// Input for a curve estimate; `M0` needs individual data, the others pools.
#[derive(Debug, Clone, Copy)]
pub enum EstimatorData<'a> {
    Individual(&'a IndividualDataset),
    Pooled(&'a PooledDataset),
}

/// An estimator bound to its data, ready for many evaluations.
#[derive(Debug, Clone)]
pub enum PreparedEstimator<'a> {
    Individual(IndividualSmoother),
    Pooled(PooledSmoother<'a>, PoolWeighting),
    Marginal(PseudoData, IndividualSmoother),
}

impl<'a> PreparedEstimator<'a> {
    pub fn new(tag: EstimatorTag, data: EstimatorData<'a>) -> Result<Self> {
        match (tag, data) {
            (EstimatorTag::M0, EstimatorData::Individual(d)) => Ok(Self::Individual(IndividualSmoother::from_dataset(d))),
            (EstimatorTag::M1, EstimatorData::Pooled(d)) => Ok(Self::Pooled(PooledSmoother::new(d), PoolWeighting::Average)),
            (EstimatorTag::M2, EstimatorData::Pooled(d)) => Ok(Self::Pooled(PooledSmoother::new(d), PoolWeighting::Product)),
            (EstimatorTag::M3, EstimatorData::Pooled(d)) => {
                let pseudo = build_pseudo_data(d);
                let smoother = pseudo.smoother();
                Ok(Self::Marginal(pseudo, smoother))
            }
            (tag, _) => Err(Error::InvalidArgument(format!(
                "estimator {tag} needs {} data",
                if tag.uses_pooled_data() { "pooled" } else { "individual" }
            ))),
        }
    }

    pub fn fit(&self, cfg: &FitConfig, x: f64) -> Result<LocalFit> {
        match self {
            Self::Individual(s) => s.fit(cfg, x),
            Self::Pooled(s, w) => s.fit(*w, cfg, x),
            Self::Marginal(_, s) => s.fit(cfg, x),
        }
    }

    /// `m̂(x)` at each point; `None` where the local system is singular.
    pub fn evaluate(&self, cfg: &FitConfig, points: &[f64]) -> Vec<Option<f64>> {
        points.iter().map(|&x| self.fit(cfg, x).ok().map(|f| f.m_hat())).collect()
    }
}

/// Estimates over a grid; failed points are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveEstimate {
    pub grid: Vec<f64>,
    pub values: Vec<Option<f64>>,
    pub estimator: EstimatorTag,
    pub config: FitConfig,
}

impl CurveEstimate {
    pub fn failures(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }

    pub fn is_complete(&self) -> bool {
        self.failures() == 0
    }
}

pub fn estimate_curve(tag: EstimatorTag, data: EstimatorData<'_>, cfg: &FitConfig, grid: &[f64]) -> Result<CurveEstimate> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("evaluation grid is empty".into()));
    }
    cfg.validate()?;
    let prepared = PreparedEstimator::new(tag, data)?;
    Ok(CurveEstimate { grid: grid.to_vec(), values: prepared.evaluate(cfg, grid), estimator: tag, config: *cfg })
}

/// `n` equally spaced points from `lo` to `hi` inclusive.
pub fn linear_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}
