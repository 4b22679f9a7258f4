//! Leave-one-out cross-validation for the bandwidth.
//!
//! Pool-level criteria leave out a whole pool and compare `Z_j` with the
//! average of the fitted curve over the pool's covariates. The pseudo
//! criterion for `M3` leaves out a single pseudo point.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{IndividualDataset, PooledDataset};
use crate::error::{Error, Result};
use crate::estimators::{build_pseudo_data, EstimatorTag, FitConfig, IndividualSmoother, PoolWeighting, PooledSmoother};
use crate::stats::quantile_sorted;

pub const DEFAULT_GRID_SIZE: usize = 30;
pub const TRIM_QUANTILES: (f64, f64) = (0.025, 0.975);

/// Criterion used for `M3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PseudoCriterion {
    /// Leave out one pseudo point.
    #[default]
    Prss,
    /// Leave out a whole pool, as for `M1` and `M2`.
    Rss,
}

impl fmt::Display for PseudoCriterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PseudoCriterion::Prss => "prss3",
            PseudoCriterion::Rss => "rss3",
        })
    }
}

impl FromStr for PseudoCriterion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "prss" | "prss3" => Ok(Self::Prss),
            "rss" | "rss3" => Ok(Self::Rss),
            other => Err(Error::InvalidArgument(format!("unknown CV criterion `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrimBounds {
    pub lower: f64,
    pub upper: f64,
}

impl TrimBounds {
    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower && x <= self.upper
    }
}

fn keeps(trim: Option<TrimBounds>, x: f64) -> bool {
    trim.is_none_or(|t| t.contains(x))
}

/// Result of a grid search.
#[derive(Debug, Clone, PartialEq)]
pub struct CvTrace {
    pub h_grid: Vec<f64>,
    /// `None` marks a bandwidth where some needed fold fit failed.
    pub criterion: Vec<Option<f64>>,
    pub chosen_h: f64,
    pub trim_bounds: Option<TrimBounds>,
}

impl CvTrace {
    pub fn chosen_index(&self) -> usize {
        self.h_grid.iter().position(|&h| h == self.chosen_h).expect("chosen h is on the grid")
    }

    pub fn min_criterion(&self) -> f64 {
        self.criterion[self.chosen_index()].expect("chosen h succeeded")
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CvOptions {
    /// Candidate bandwidths; the default grid is used when `None`.
    pub grid: Option<Vec<f64>>,
    pub trim: bool,
    pub pseudo_criterion: PseudoCriterion,
}

fn check_unit_count(count: usize, what: &str) -> Result<()> {
    if count < 2 {
        return Err(Error::InvalidArgument(format!("cross-validation needs at least 2 {what}, got {count}")));
    }
    Ok(())
}

fn sum_pool_residuals(
    data: &PooledDataset,
    trim: Option<TrimBounds>,
    predict: impl Fn(usize, f64) -> Result<f64>,
) -> Result<f64> {
    let mut total = 0.0;
    for (j, pool) in data.pools().iter().enumerate() {
        if !pool.covariates().iter().all(|&x| keeps(trim, x)) {
            continue;
        }
        let c = pool.size() as f64;
        let mut fitted = 0.0;
        for &x in pool.covariates() {
            fitted += predict(j, x)?;
        }
        total += c * (pool.response() - fitted / c).powi(2);
    }
    Ok(total)
}

/// Pool-level criterion `Σ_j c_j {Z_j - c_j⁻¹ Σ_k m̂^(-j)(X_jk)}²` for `M1`/`M2`.
///
/// Pools with any member outside `trim` are left out of the sum. A singular
/// fold fit at a needed point is returned as an error.
pub fn cv_rss_pool(data: &PooledDataset, tag: EstimatorTag, cfg: &FitConfig, h: f64, trim: Option<TrimBounds>) -> Result<f64> {
    check_unit_count(data.num_pools(), "pools")?;
    let cfg = cfg.with_bandwidth(h)?;
    let weighting = match tag {
        EstimatorTag::M1 => PoolWeighting::Average,
        EstimatorTag::M2 => PoolWeighting::Product,
        other => return Err(Error::InvalidArgument(format!("pool-level CV is defined for m1 and m2, not {other}"))),
    };
    let smoother = PooledSmoother::new(data);
    sum_pool_residuals(data, trim, |j, x| Ok(smoother.fit_excluding(weighting, &cfg, x, Some(j))?.m_hat()))
}

/// Pool-level criterion for `M3`: the pseudo points of pool `j` are removed
/// from the fold and `Z_j` is compared with the pool average of the fit.
pub fn cv_rss_pseudo_pool(data: &PooledDataset, cfg: &FitConfig, h: f64, trim: Option<TrimBounds>) -> Result<f64> {
    check_unit_count(data.num_pools(), "pools")?;
    let cfg = cfg.with_bandwidth(h)?;
    let pseudo = build_pseudo_data(data);
    let smoother = pseudo.smoother();
    let owner: Vec<usize> = pseudo.points.iter().map(|p| p.pool).collect();
    sum_pool_residuals(data, trim, |j, x| Ok(smoother.fit_excluding(&cfg, x, |i| owner[i] == j)?.m_hat()))
}

/// Pseudo-individual criterion `Σ_jk {R_j - m̂₃^(-jk)(X_jk)}²`, leaving out
/// one pseudo point per fold. `μ̂` comes from the full data.
pub fn cv_prss_pseudo(data: &PooledDataset, cfg: &FitConfig, h: f64, trim: Option<TrimBounds>) -> Result<f64> {
    check_unit_count(data.num_individuals(), "individuals")?;
    let cfg = cfg.with_bandwidth(h)?;
    let pseudo = build_pseudo_data(data);
    loo_sum(&pseudo.smoother(), &pseudo.x(), &pseudo.r(), &cfg, trim)
}

/// Classical leave-one-out residual sum of squares for `M0`.
pub fn cv_loo_individual(data: &IndividualDataset, cfg: &FitConfig, h: f64, trim: Option<TrimBounds>) -> Result<f64> {
    check_unit_count(data.len(), "individuals")?;
    let cfg = cfg.with_bandwidth(h)?;
    loo_sum(&IndividualSmoother::from_dataset(data), data.x(), data.y(), &cfg, trim)
}

fn loo_sum(smoother: &IndividualSmoother, x: &[f64], y: &[f64], cfg: &FitConfig, trim: Option<TrimBounds>) -> Result<f64> {
    let mut total = 0.0;
    for (i, (&xi, &yi)) in x.iter().zip(y).enumerate() {
        if !keeps(trim, xi) {
            continue;
        }
        let fit = smoother.fit_excluding(cfg, xi, |k| k == i)?;
        total += (yi - fit.m_hat()).powi(2);
    }
    Ok(total)
}

/// 2.5% and 97.5% sample quantiles of the covariates.
pub fn trim_bounds(covariates: &[f64]) -> Result<TrimBounds> {
    if covariates.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut sorted = covariates.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(TrimBounds { lower: quantile_sorted(&sorted, TRIM_QUANTILES.0), upper: quantile_sorted(&sorted, TRIM_QUANTILES.1) })
}

/// Geometric grid from 1.5 times the mean nearest-neighbour spacing to half
/// the covariate range.
pub fn default_grid(covariates: &[f64]) -> Result<Vec<f64>> {
    if covariates.len() < 2 {
        return Err(Error::InvalidArgument("default bandwidth grid needs at least 2 covariates".into()));
    }
    let mut sorted = covariates.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let range = sorted[n - 1] - sorted[0];
    if !(range > 0.0) {
        return Err(Error::InvalidArgument("covariates have zero range".into()));
    }
    let nn_sum: f64 = (0..n)
        .map(|i| {
            let left = if i > 0 { sorted[i] - sorted[i - 1] } else { f64::INFINITY };
            let right = if i + 1 < n { sorted[i + 1] - sorted[i] } else { f64::INFINITY };
            left.min(right)
        })
        .sum();
    let upper = 0.5 * range;
    let mut lower = 1.5 * nn_sum / n as f64;
    if !(lower > 0.0) || lower >= upper {
        lower = upper / 10.0;
    }
    Ok(geometric_grid(lower, upper, DEFAULT_GRID_SIZE))
}

pub fn geometric_grid(lower: f64, upper: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lower],
        _ => {
            let ratio = (upper / lower).ln() / (n - 1) as f64;
            (0..n).map(|i| if i + 1 == n { upper } else { lower * (ratio * i as f64).exp() }).collect()
        }
    }
}

/// Evaluates `criterion` over the grid and picks the smallest `h` whose value
/// is within `tie_tolerance` of the minimum.
pub fn minimize_over_grid(
    grid: &[f64],
    trim_bounds: Option<TrimBounds>,
    tie_tolerance: f64,
    criterion: impl Fn(f64) -> Result<f64> + Sync,
) -> Result<CvTrace> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("bandwidth grid is empty".into()));
    }
    if grid.iter().any(|&h| !(h > 0.0) || !h.is_finite()) {
        let bad = grid.iter().copied().find(|&h| !(h > 0.0) || !h.is_finite()).unwrap_or(f64::NAN);
        return Err(Error::NonPositiveBandwidth(bad));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("bandwidth grid must be strictly increasing".into()));
    }
    let values: Vec<Option<f64>> = grid.par_iter().map(|&h| criterion(h).ok().filter(|v| v.is_finite())).collect();
    let min = values.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let idx = values
        .iter()
        .position(|v| v.is_some_and(|v| v <= min + tie_tolerance))
        .ok_or(Error::NoValidBandwidth)?;
    Ok(CvTrace { h_grid: grid.to_vec(), criterion: values, chosen_h: grid[idx], trim_bounds })
}

fn resolve_grid_and_trim(covariates: &[f64], opts: &CvOptions) -> Result<(Vec<f64>, Option<TrimBounds>)> {
    let grid = match &opts.grid {
        Some(g) => g.clone(),
        None => default_grid(covariates)?,
    };
    let trim = if opts.trim { Some(trim_bounds(covariates)?) } else { None };
    Ok((grid, trim))
}

/// Criterion differences below this fraction of the response sum of squares
/// count as ties.
pub const RELATIVE_TIE_TOLERANCE: f64 = 1e-12;

/// `RELATIVE_TIE_TOLERANCE · Σ w_i (v_i - v̄)²` with `v̄` the weighted mean.
fn tie_tolerance(values: impl Iterator<Item = (f64, f64)> + Clone) -> f64 {
    let (sw, swv) = values.clone().fold((0.0, 0.0), |(a, b), (w, v)| (a + w, b + w * v));
    let mean = swv / sw;
    RELATIVE_TIE_TOLERANCE * values.map(|(w, v)| w * (v - mean).powi(2)).sum::<f64>()
}

/// Chooses `h` for a pooled-data estimator by the matching CV criterion.
pub fn select_bandwidth(data: &PooledDataset, tag: EstimatorTag, cfg: &FitConfig, opts: &CvOptions) -> Result<CvTrace> {
    let covariates: Vec<f64> = data.all_covariates().collect();
    let (grid, trim) = resolve_grid_and_trim(&covariates, opts)?;
    let pool_tol = tie_tolerance(data.pools().iter().map(|p| (p.size() as f64, p.response())));
    match tag {
        EstimatorTag::M1 | EstimatorTag::M2 => {
            minimize_over_grid(&grid, trim, pool_tol, |h| cv_rss_pool(data, tag, cfg, h, trim))
        }
        EstimatorTag::M3 => match opts.pseudo_criterion {
            PseudoCriterion::Prss => {
                let pseudo = build_pseudo_data(data);
                let tol = tie_tolerance(pseudo.points.iter().map(|p| (1.0, p.r)));
                minimize_over_grid(&grid, trim, tol, |h| cv_prss_pseudo(data, cfg, h, trim))
            }
            PseudoCriterion::Rss => minimize_over_grid(&grid, trim, pool_tol, |h| cv_rss_pseudo_pool(data, cfg, h, trim)),
        },
        EstimatorTag::M0 => Err(Error::InvalidArgument("m0 needs individual data; use select_bandwidth_individual".into())),
    }
}

/// Chooses `h` for `M0` by classical leave-one-out CV.
pub fn select_bandwidth_individual(data: &IndividualDataset, cfg: &FitConfig, opts: &CvOptions) -> Result<CvTrace> {
    let (grid, trim) = resolve_grid_and_trim(data.x(), opts)?;
    let tol = tie_tolerance(data.y().iter().map(|&y| (1.0, y)));
    minimize_over_grid(&grid, trim, tol, |h| cv_loo_individual(data, cfg, h, trim))
}
