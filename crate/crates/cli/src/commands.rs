use std::fs::File;
use std::path::Path;

use poolsmooth::bandwidth::{select_bandwidth, select_bandwidth_individual, CvTrace};
use poolsmooth::data::{pool_homogeneous, pool_random, IndividualDataset, PooledDataset, PoolingDesign};
use poolsmooth::estimators::{build_pseudo_data, EstimatorData, EstimatorTag, FitConfig, PreparedEstimator};
use poolsmooth::io::{format_f64, read_individual_file, read_pooled_files, write_individual, write_pooled};
use poolsmooth::simulation::{
    bootstrap_curves, run_monte_carlo, sample_dgp, select_quartile_realizations, stream_rng, with_jobs, BandwidthPolicy,
    SimulationSpec,
};
use poolsmooth::theory::{
    homogeneous_asymptotics, m0_asymptotics, m1_random_asymptotics, m2_random_bias, m3_random_asymptotics,
    AsymptoticSummary, TheoryContext,
};
use poolsmooth::Error;

use crate::config::RunConfig;
use crate::CliError;

fn writer(dir: &Path, name: &str) -> Result<csv::Writer<File>, CliError> {
    Ok(csv::Writer::from_path(dir.join(name))?)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NaN".to_string(), format_f64)
}

/// Individual and pooled data from files, or a fresh sample from the model.
struct Inputs {
    individual: Option<IndividualDataset>,
    pooled: Option<PooledDataset>,
}

impl Inputs {
    fn load(cfg: &RunConfig) -> Result<Self, CliError> {
        let individual = match &cfg.individual_data {
            Some(path) => Some(read_individual_file(path)?),
            None => None,
        };
        let pooled = match (&cfg.pools_data, &cfg.members_data) {
            (Some(p), Some(m)) => Some(read_pooled_files(p, m)?),
            _ => None,
        };
        if individual.is_some() || pooled.is_some() {
            let pooled = match (pooled, &individual) {
                (Some(p), _) => Some(p),
                (None, Some(ind)) => Some(pool(cfg, ind)?),
                (None, None) => None,
            };
            return Ok(Self { individual, pooled });
        }
        let mut rng = stream_rng(cfg.seed, 0);
        let ind = sample_dgp(&cfg.dgp()?, cfg.n, &mut rng)?;
        let pooled = match cfg.design {
            PoolingDesign::Random => pool_random(&ind, cfg.c, &mut rng)?,
            _ => pool_homogeneous(&ind, cfg.c)?,
        };
        write_individual(&ind, File::create(cfg.output_dir.join("individual.csv"))?)?;
        write_pooled(&pooled, File::create(cfg.output_dir.join("pools.csv"))?, File::create(cfg.output_dir.join("members.csv"))?)?;
        Ok(Self { individual: Some(ind), pooled: Some(pooled) })
    }

    fn data(&self, tag: EstimatorTag) -> Result<EstimatorData<'_>, CliError> {
        let missing = |what: &str| CliError::Config(format!("key `estimators`: {tag} needs {what} data, none given"));
        if tag.uses_pooled_data() {
            self.pooled.as_ref().map(EstimatorData::Pooled).ok_or_else(|| missing("pooled"))
        } else {
            self.individual.as_ref().map(EstimatorData::Individual).ok_or_else(|| missing("individual"))
        }
    }
}

fn pool(cfg: &RunConfig, data: &IndividualDataset) -> Result<PooledDataset, CliError> {
    Ok(match cfg.design {
        PoolingDesign::Random => pool_random(data, cfg.c, &mut stream_rng(cfg.seed, 0))?,
        _ => pool_homogeneous(data, cfg.c)?,
    })
}

fn select(cfg: &RunConfig, tag: EstimatorTag, data: EstimatorData<'_>, fit: &FitConfig) -> Result<CvTrace, CliError> {
    let opts = cfg.cv_options();
    Ok(match data {
        EstimatorData::Individual(d) => select_bandwidth_individual(d, fit, &opts)?,
        EstimatorData::Pooled(d) => select_bandwidth(d, tag, fit, &opts)?,
    })
}

fn write_trace(out: &mut csv::Writer<File>, tag: EstimatorTag, trace: &CvTrace) -> Result<(), CliError> {
    for (h, v) in trace.h_grid.iter().zip(&trace.criterion) {
        let chosen = if *h == trace.chosen_h { "1" } else { "0" };
        out.write_record([tag.name(), &format_f64(*h), &opt(*v), chosen])?;
    }
    Ok(())
}

pub fn simulate(cfg: &RunConfig, jobs: usize) -> Result<(), CliError> {
    let mut spec = SimulationSpec::new(cfg.dgp()?, cfg.grid(), cfg.bandwidth_policy()?, cfg.seed)?;
    spec.n = cfg.n;
    spec.c = cfg.c;
    spec.design = cfg.design;
    spec.estimators = cfg.estimators.clone();
    spec.replications = cfg.replications;
    spec.fit = cfg.fit_config()?;
    spec.ise_reference = cfg.ise_reference;
    if spec.design == PoolingDesign::External {
        return Err(CliError::Config("key `design`: simulations use random or homogeneous pooling".into()));
    }
    let records = run_monte_carlo(&spec, jobs)?;

    let dir = &cfg.output_dir;
    let mut reps = writer(dir, "replications.csv")?;
    reps.write_record(["rep", "estimator", "h", "ise", "error"])?;
    let mut curves = writer(dir, "curves.csv")?;
    curves.write_record(["rep", "estimator", "x", "m_hat"])?;
    let mut no_bandwidth = false;
    for rec in &records {
        for o in &rec.outcomes {
            let error = o.error.as_ref().map(|e| e.to_string()).unwrap_or_default();
            no_bandwidth |= o.error == Some(Error::NoValidBandwidth);
            reps.write_record([&rec.replication.to_string(), o.estimator.name(), &opt(o.h), &opt(o.ise), &error])?;
            for (x, m) in spec.grid.iter().zip(&o.curve) {
                curves.write_record([&rec.replication.to_string(), o.estimator.name(), &format_f64(*x), &opt(*m)])?;
            }
        }
    }
    reps.flush()?;
    curves.flush()?;

    let mut quart = writer(dir, "quartiles.csv")?;
    quart.write_record(["estimator", "quantile", "rep", "ise"])?;
    for &tag in &spec.estimators {
        match select_quartile_realizations(&records, tag) {
            Ok(idx) => {
                for (q, rep) in ["0.25", "0.5", "0.75"].iter().zip(idx) {
                    let ise = records[rep].outcome(tag).and_then(|o| o.ise);
                    quart.write_record([tag.name(), q, &rep.to_string(), &opt(ise)])?;
                }
            }
            Err(e @ Error::TooFewRecords { .. }) => eprintln!("poolsmooth: quartiles for {tag}: {e}"),
            Err(e) => return Err(e.into()),
        }
    }
    quart.flush()?;
    if no_bandwidth {
        return Err(Error::NoValidBandwidth.into());
    }
    Ok(())
}

pub fn fit(cfg: &RunConfig, jobs: usize) -> Result<(), CliError> {
    let inputs = Inputs::load(cfg)?;
    let base = cfg.fit_config()?;
    let grid = cfg.grid();
    let dir = &cfg.output_dir;
    let mut curve = writer(dir, "curve.csv")?;
    curve.write_record(["estimator", "h", "x", "m_hat", "failed"])?;
    let mut trace_out = if cfg.cv {
        let mut w = writer(dir, "cv_trace.csv")?;
        w.write_record(["estimator", "h", "criterion", "chosen"])?;
        Some(w)
    } else {
        None
    };
    for &tag in &cfg.estimators {
        let data = inputs.data(tag)?;
        let h = match &mut trace_out {
            Some(w) => {
                let trace = with_jobs(jobs, || select(cfg, tag, data, &base))??;
                write_trace(w, tag, &trace)?;
                trace.chosen_h
            }
            None => cfg.require_h()?,
        };
        let fit_cfg = base.with_bandwidth(h)?;
        let values = PreparedEstimator::new(tag, data)?.evaluate(&fit_cfg, &grid);
        for (x, v) in grid.iter().zip(values) {
            let failed = if v.is_some() { "0" } else { "1" };
            curve.write_record([tag.name(), &format_f64(h), &format_f64(*x), &opt(v), failed])?;
        }
        if tag == EstimatorTag::M3 {
            let pooled = inputs.pooled.as_ref().expect("m3 data checked");
            let pseudo = build_pseudo_data(pooled);
            let mut w = writer(dir, "pseudo.csv")?;
            w.write_record(["pool_id", "R"])?;
            for (id, r) in pooled.ids().iter().zip(pseudo.pool_responses(pooled.num_pools())) {
                w.write_record([id.as_str(), &format_f64(r)])?;
            }
            w.flush()?;
        }
    }
    curve.flush()?;
    if let Some(mut w) = trace_out {
        w.flush()?;
    }
    Ok(())
}

pub fn bandwidth(cfg: &RunConfig, jobs: usize) -> Result<(), CliError> {
    let inputs = Inputs::load(cfg)?;
    let base = FitConfig::new(cfg.p, 1.0)?.with_kernel(cfg.kernel).with_rcond_min(cfg.rcond_min)?;
    let dir = &cfg.output_dir;
    let mut chosen = writer(dir, "bandwidth.csv")?;
    chosen.write_record(["estimator", "h", "criterion"])?;
    let mut trace_out = writer(dir, "cv_trace.csv")?;
    trace_out.write_record(["estimator", "h", "criterion", "chosen"])?;
    for &tag in &cfg.estimators {
        let data = inputs.data(tag)?;
        let trace = with_jobs(jobs, || select(cfg, tag, data, &base))??;
        write_trace(&mut trace_out, tag, &trace)?;
        chosen.write_record([tag.name(), &format_f64(trace.chosen_h), &format_f64(trace.min_criterion())])?;
    }
    chosen.flush()?;
    trace_out.flush()?;
    Ok(())
}

fn summary(ctx: &TheoryContext, cfg: &RunConfig, tag: EstimatorTag, x: f64, h: f64) -> Result<AsymptoticSummary, Error> {
    let homogeneous = cfg.design == PoolingDesign::Homogeneous;
    match tag {
        EstimatorTag::M0 => m0_asymptotics(ctx, x, cfg.p, h, cfg.n),
        EstimatorTag::M1 | EstimatorTag::M2 if homogeneous => homogeneous_asymptotics(ctx, tag, x, cfg.p, h, cfg.n, cfg.c),
        EstimatorTag::M1 => m1_random_asymptotics(ctx, x, cfg.p, h),
        EstimatorTag::M2 => m2_random_bias(ctx, x, cfg.p, h, cfg.c),
        EstimatorTag::M3 => m3_random_asymptotics(ctx, x, cfg.p, h, cfg.n),
    }
}

pub fn theory(cfg: &RunConfig) -> Result<(), CliError> {
    let h = cfg.require_h()?;
    let dgp = cfg.dgp()?;
    let ctx = TheoryContext::equal_pools(dgp.mean, dgp.law, dgp.noise, cfg.kernel, cfg.c)?;
    let mut out = writer(&cfg.output_dir, "theory.csv")?;
    out.write_record(["x", "estimator", "persistent_bias", "leading_bias", "variance_factor", "closed_form_bias"])?;
    for x in cfg.grid() {
        for &tag in &cfg.estimators {
            let s = summary(&ctx, cfg, tag, x, h)?;
            let variance = match s.variance.value() {
                Some(v) => format_f64(v),
                None => s.variance.to_string(),
            };
            out.write_record([
                format_f64(x),
                tag.name().to_string(),
                format_f64(s.persistent_bias),
                format_f64(s.leading_bias),
                variance,
                opt(s.closed_form_bias),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn bootstrap(cfg: &RunConfig, jobs: usize) -> Result<(), CliError> {
    let inputs = Inputs::load(cfg)?;
    let pooled = inputs.pooled.as_ref().ok_or_else(|| CliError::Config("bootstrap needs pooled data".into()))?;
    let policy: BandwidthPolicy = cfg.bandwidth_policy()?;
    let base = cfg.fit_config()?;
    let grid = cfg.grid();
    let mut out = writer(&cfg.output_dir, "bands.csv")?;
    out.write_record(["estimator", "h", "x", "mean", "q05", "q95", "coverage"])?;
    for &tag in &cfg.estimators {
        if tag == EstimatorTag::M0 {
            eprintln!("poolsmooth: skipping m0, the pool bootstrap applies to pooled-data estimators");
            continue;
        }
        let bands = bootstrap_curves(pooled, tag, &base, &policy, cfg.bootstrap_resamples, &grid, cfg.seed, jobs)?;
        for (i, &x) in grid.iter().enumerate() {
            out.write_record([
                tag.name().to_string(),
                format_f64(bands.h),
                format_f64(x),
                opt(bands.mean[i]),
                opt(bands.q05[i]),
                opt(bands.q95[i]),
                format_f64(bands.coverage[i]),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}
