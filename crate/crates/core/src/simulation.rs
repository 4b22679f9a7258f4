//! Data-generating processes, the Monte Carlo harness and the pool bootstrap.
//!
//! Every replication (and every bootstrap resample) draws from its own
//! ChaCha8 stream: the master seed selects the key and the replication
//! index selects the stream. Results therefore do not depend on how work is
//! spread over threads.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bandwidth::{select_bandwidth, select_bandwidth_individual, CvOptions, CvTrace};
use crate::data::{check_divisible, pool_homogeneous, pool_random, IndividualDataset, PooledDataset, PoolingDesign};
use crate::error::{Error, Result};
use crate::estimators::{EstimatorData, EstimatorTag, FitConfig, PreparedEstimator};
use crate::models::{CovariateLaw, MeanFunction, NoiseVariance};
use crate::stats::quantile_sorted;

/// Stream `index` of the generator keyed by `seed`.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone)]
pub struct Dgp {
    pub name: String,
    pub mean: MeanFunction,
    pub noise: NoiseVariance,
    pub law: CovariateLaw,
}

impl Dgp {
    pub fn d1() -> Self {
        Self::builtin("D1", MeanFunction::D1, 0.6, CovariateLaw::QuadraticUniformMixture)
    }

    pub fn d2() -> Self {
        Self::builtin("D2", MeanFunction::D2, 0.2, CovariateLaw::QuadraticUniformMixture)
    }

    pub fn d3() -> Self {
        Self::builtin("D3", MeanFunction::D3, 1.2, CovariateLaw::Normal { mean: 0.0, sd: 1.0 })
    }

    pub fn d4() -> Self {
        Self::builtin("D4", MeanFunction::D4, 4.0, CovariateLaw::Normal { mean: 0.0, sd: 1.0 })
    }

    fn builtin(name: &str, mean: MeanFunction, sigma: f64, law: CovariateLaw) -> Self {
        Self { name: name.into(), mean, noise: NoiseVariance::Constant(sigma * sigma), law }
    }

    /// User-defined model with homoscedastic normal noise of standard deviation `sigma`.
    pub fn custom(mean: MeanFunction, sigma: f64, law: CovariateLaw) -> Result<Self> {
        law.validate()?;
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidArgument(format!("noise sd must be non-negative, got {sigma}")));
        }
        Ok(Self::builtin("Custom", mean, sigma, law))
    }
}

impl FromStr for Dgp {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "D1" => Ok(Self::d1()),
            "D2" => Ok(Self::d2()),
            "D3" => Ok(Self::d3()),
            "D4" => Ok(Self::d4()),
            other => Err(Error::InvalidArgument(format!("unknown data-generating process `{other}`"))),
        }
    }
}

impl fmt::Display for Dgp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

pub fn dgp_mean(dgp: &Dgp, x: f64) -> f64 {
    dgp.mean.eval(x)
}

/// `N` independent draws `(X, m(X) + ε)`.
pub fn sample_dgp<R: Rng + ?Sized>(dgp: &Dgp, n: usize, rng: &mut R) -> Result<IndividualDataset> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let xi = dgp.law.sample(rng);
        let yi = dgp.mean.eval(xi) + dgp.noise.sample(xi, rng);
        x.push(xi);
        y.push(yi);
    }
    IndividualDataset::new(x, y)
}

/// `Σ (reference_i - fitted_i)²`; any missing fit makes the sum undefined.
pub fn ise(fitted: &[Option<f64>], reference: &[f64]) -> Result<f64> {
    if fitted.len() != reference.len() {
        return Err(Error::InvalidArgument("fitted values and responses differ in length".into()));
    }
    let missing = fitted.iter().filter(|v| v.is_none()).count();
    if missing > 0 {
        return Err(Error::IncompleteCurve { missing });
    }
    Ok(fitted.iter().zip(reference).map(|(f, r)| (r - f.expect("checked")).powi(2)).sum())
}

/// Reference for the replication-level ISE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IseReference {
    /// Observed responses `Y`.
    #[default]
    Observed,
    /// True mean `m(X)`.
    TrueMean,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BandwidthPolicy {
    Fixed(f64),
    CrossValidation(CvOptions),
}

#[derive(Debug, Clone)]
pub struct SimulationSpec {
    pub dgp: Dgp,
    pub n: usize,
    pub c: usize,
    pub design: PoolingDesign,
    pub estimators: Vec<EstimatorTag>,
    pub replications: usize,
    pub grid: Vec<f64>,
    pub fit: FitConfig,
    pub bandwidth: BandwidthPolicy,
    pub seed: u64,
    pub ise_reference: IseReference,
}

impl SimulationSpec {
    /// Defaults: `N = 600`, `c = 2`, random pooling, all four estimators,
    /// 500 replications, local linear fits.
    pub fn new(dgp: Dgp, grid: Vec<f64>, bandwidth: BandwidthPolicy, seed: u64) -> Result<Self> {
        let h = match &bandwidth {
            BandwidthPolicy::Fixed(h) => *h,
            BandwidthPolicy::CrossValidation(_) => 1.0,
        };
        Ok(Self {
            dgp,
            n: 600,
            c: 2,
            design: PoolingDesign::Random,
            estimators: EstimatorTag::ALL.to_vec(),
            replications: 500,
            grid,
            fit: FitConfig::new(1, h)?,
            bandwidth,
            seed,
            ise_reference: IseReference::Observed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::InvalidArgument("at least one replication is required".into()));
        }
        if self.c == 0 {
            return Err(Error::InvalidPoolSize);
        }
        if self.n < self.c {
            return Err(Error::InvalidArgument(format!("N = {} is smaller than the pool size {}", self.n, self.c)));
        }
        check_divisible(self.n, self.c)?;
        if self.design == PoolingDesign::External {
            return Err(Error::InvalidArgument("simulation design must be random or homogeneous".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidArgument("no estimators requested".into()));
        }
        if self.grid.is_empty() {
            return Err(Error::InvalidArgument("evaluation grid is empty".into()));
        }
        if let BandwidthPolicy::Fixed(h) = self.bandwidth {
            self.fit.with_bandwidth(h)?;
        }
        self.fit.validate()
    }
}

/// Outcome of one estimator in one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorOutcome {
    pub estimator: EstimatorTag,
    /// Bandwidth used; `None` if bandwidth selection failed.
    pub h: Option<f64>,
    /// `m̂` on the evaluation grid.
    pub curve: Vec<Option<f64>>,
    /// `None` if some fit at an individual covariate failed.
    pub ise: Option<f64>,
    pub error: Option<Error>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub seed: u64,
    pub outcomes: Vec<EstimatorOutcome>,
}

impl ReplicationRecord {
    pub fn outcome(&self, tag: EstimatorTag) -> Option<&EstimatorOutcome> {
        self.outcomes.iter().find(|o| o.estimator == tag)
    }
}

fn choose_bandwidth(
    tag: EstimatorTag,
    individual: &IndividualDataset,
    pooled: &PooledDataset,
    cfg: &FitConfig,
    policy: &BandwidthPolicy,
) -> Result<f64> {
    match policy {
        BandwidthPolicy::Fixed(h) => Ok(*h),
        BandwidthPolicy::CrossValidation(opts) => {
            let trace: CvTrace = if tag == EstimatorTag::M0 {
                select_bandwidth_individual(individual, cfg, opts)?
            } else {
                select_bandwidth(pooled, tag, cfg, opts)?
            };
            Ok(trace.chosen_h)
        }
    }
}

/// Fits every requested estimator to one sample.
pub fn fit_replication(
    spec: &SimulationSpec,
    individual: &IndividualDataset,
    pooled: &PooledDataset,
) -> Vec<EstimatorOutcome> {
    let reference: Vec<f64> = match spec.ise_reference {
        IseReference::Observed => individual.y().to_vec(),
        IseReference::TrueMean => individual.x().iter().map(|&x| spec.dgp.mean.eval(x)).collect(),
    };
    spec.estimators
        .iter()
        .map(|&tag| {
            let data = if tag == EstimatorTag::M0 {
                EstimatorData::Individual(individual)
            } else {
                EstimatorData::Pooled(pooled)
            };
            let failed = |h: Option<f64>, e: Error| EstimatorOutcome {
                estimator: tag,
                h,
                curve: vec![None; spec.grid.len()],
                ise: None,
                error: Some(e),
            };
            let h = match choose_bandwidth(tag, individual, pooled, &spec.fit, &spec.bandwidth) {
                Ok(h) => h,
                Err(e) => return failed(None, e),
            };
            let cfg = match spec.fit.with_bandwidth(h) {
                Ok(c) => c,
                Err(e) => return failed(Some(h), e),
            };
            let prepared = match PreparedEstimator::new(tag, data) {
                Ok(p) => p,
                Err(e) => return failed(Some(h), e),
            };
            let curve = prepared.evaluate(&cfg, &spec.grid);
            let at_data = prepared.evaluate(&cfg, individual.x());
            let (ise_value, error) = match ise(&at_data, &reference) {
                Ok(v) => (Some(v), None),
                Err(e) => (None, Some(e)),
            };
            EstimatorOutcome { estimator: tag, h: Some(h), curve, ise: ise_value, error }
        })
        .collect()
}

/// Draws the sample and pools it for replication `rep`.
pub fn replication_data(spec: &SimulationSpec, rep: usize) -> Result<(IndividualDataset, PooledDataset)> {
    let mut rng = stream_rng(spec.seed, rep as u64);
    let individual = sample_dgp(&spec.dgp, spec.n, &mut rng)?;
    let pooled = match spec.design {
        PoolingDesign::Random => pool_random(&individual, spec.c, &mut rng)?,
        _ => pool_homogeneous(&individual, spec.c)?,
    };
    Ok((individual, pooled))
}

fn run_one(spec: &SimulationSpec, rep: usize) -> ReplicationRecord {
    let outcomes = match replication_data(spec, rep) {
        Ok((individual, pooled)) => fit_replication(spec, &individual, &pooled),
        Err(e) => spec
            .estimators
            .iter()
            .map(|&tag| EstimatorOutcome {
                estimator: tag,
                h: None,
                curve: vec![None; spec.grid.len()],
                ise: None,
                error: Some(e.clone()),
            })
            .collect(),
    };
    ReplicationRecord { replication: rep, seed: spec.seed, outcomes }
}

/// Runs `f` on a pool of `jobs` threads (`jobs = 1` runs on the caller's thread).
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if jobs <= 1 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start {jobs} worker threads: {e}")))?;
    Ok(pool.install(f))
}

/// All replications, in index order. Failures are recorded per estimator.
pub fn run_monte_carlo(spec: &SimulationSpec, jobs: usize) -> Result<Vec<ReplicationRecord>> {
    spec.validate()?;
    with_jobs(jobs, || {
        if jobs <= 1 {
            (0..spec.replications).map(|r| run_one(spec, r)).collect()
        } else {
            (0..spec.replications).into_par_iter().map(|r| run_one(spec, r)).collect()
        }
    })
}

/// Replications whose ISE is nearest to the 25th, 50th and 75th percentiles
/// of the ISE sample for `tag` (ties go to the lowest replication index).
pub fn select_quartile_realizations(records: &[ReplicationRecord], tag: EstimatorTag) -> Result<[usize; 3]> {
    let valid: Vec<(usize, f64)> = records
        .iter()
        .filter_map(|r| r.outcome(tag).and_then(|o| o.ise).map(|v| (r.replication, v)))
        .collect();
    if valid.len() < 3 {
        return Err(Error::TooFewRecords { needed: 3, got: valid.len() });
    }
    let mut sorted: Vec<f64> = valid.iter().map(|v| v.1).collect();
    sorted.sort_by(f64::total_cmp);
    let pick = |p: f64| {
        let q = quantile_sorted(&sorted, p);
        let mut best = valid[0];
        for &cand in &valid[1..] {
            let (db, dc) = ((best.1 - q).abs(), (cand.1 - q).abs());
            if dc < db || (dc == db && cand.0 < best.0) {
                best = cand;
            }
        }
        best.0
    };
    Ok([pick(0.25), pick(0.5), pick(0.75)])
}

/// Pointwise summary of bootstrap curves; masked where any resample failed.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapBands {
    pub estimator: EstimatorTag,
    pub h: f64,
    pub grid: Vec<f64>,
    pub mean: Vec<Option<f64>>,
    pub q05: Vec<Option<f64>>,
    pub q95: Vec<Option<f64>>,
    /// Fraction of resamples with a successful fit at each grid point.
    pub coverage: Vec<f64>,
    pub resamples: usize,
}

/// Indices of the pools drawn (with replacement) for resample `r`.
pub fn bootstrap_indices(num_pools: usize, seed: u64, r: usize) -> Vec<usize> {
    let mut rng = stream_rng(seed, r as u64);
    (0..num_pools).map(|_| rng.random_range(0..num_pools)).collect()
}

/// Resamples whole pools with replacement `b` times and refits `tag` on each.
///
/// Under a cross-validation policy the bandwidth is chosen once on the full
/// data and reused for every resample.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap_curves(
    data: &PooledDataset,
    tag: EstimatorTag,
    cfg: &FitConfig,
    policy: &BandwidthPolicy,
    b: usize,
    grid: &[f64],
    seed: u64,
    jobs: usize,
) -> Result<BootstrapBands> {
    if b < 2 {
        return Err(Error::InvalidArgument(format!("bootstrap needs at least 2 resamples, got {b}")));
    }
    if grid.is_empty() {
        return Err(Error::InvalidArgument("evaluation grid is empty".into()));
    }
    if tag == EstimatorTag::M0 {
        return Err(Error::InvalidArgument("the pool bootstrap applies to pooled-data estimators".into()));
    }
    let h = match policy {
        BandwidthPolicy::Fixed(h) => *h,
        BandwidthPolicy::CrossValidation(opts) => select_bandwidth(data, tag, cfg, opts)?.chosen_h,
    };
    let cfg = cfg.with_bandwidth(h)?;
    let resample = |r: usize| -> Result<Vec<Option<f64>>> {
        let boot = data.reordered(&bootstrap_indices(data.num_pools(), seed, r))?;
        Ok(PreparedEstimator::new(tag, EstimatorData::Pooled(&boot))?.evaluate(&cfg, grid))
    };
    let curves: Vec<Vec<Option<f64>>> = with_jobs(jobs, || {
        if jobs <= 1 {
            (0..b).map(resample).collect::<Result<Vec<_>>>()
        } else {
            (0..b).into_par_iter().map(resample).collect::<Result<Vec<_>>>()
        }
    })??;

    let mut bands = BootstrapBands {
        estimator: tag,
        h,
        grid: grid.to_vec(),
        mean: Vec::with_capacity(grid.len()),
        q05: Vec::with_capacity(grid.len()),
        q95: Vec::with_capacity(grid.len()),
        coverage: Vec::with_capacity(grid.len()),
        resamples: b,
    };
    for i in 0..grid.len() {
        let mut values: Vec<f64> = curves.iter().filter_map(|c| c[i]).collect();
        bands.coverage.push(values.len() as f64 / b as f64);
        if values.len() < b {
            bands.mean.push(None);
            bands.q05.push(None);
            bands.q95.push(None);
            continue;
        }
        bands.mean.push(Some(values.iter().sum::<f64>() / b as f64));
        values.sort_by(f64::total_cmp);
        bands.q05.push(Some(quantile_sorted(&values, 0.05)));
        bands.q95.push(Some(quantile_sorted(&values, 0.95)));
    }
    Ok(bands)
}
