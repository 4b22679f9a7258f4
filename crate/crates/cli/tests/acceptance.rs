//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::process::Command;
use std::time::{Duration, Instant};

use poolsmooth::bandwidth::{default_grid, select_bandwidth, select_bandwidth_individual, CvOptions};
use poolsmooth::data::{pool_homogeneous, pool_random, IndividualDataset, PooledDataset};
use poolsmooth::estimators::{linear_grid, EstimatorData, EstimatorTag, FitConfig, PreparedEstimator};
use poolsmooth::kernels::{moment_closed_form, moment_quadrature, KernelKind, MomentTable};
use poolsmooth::models::{CovariateLaw, MeanFunction, NoiseVariance};
use poolsmooth::simulation::{ise, sample_dgp, stream_rng, Dgp};
use poolsmooth::stats::{mean, median, variance};
use poolsmooth::theory::{
    average_weighted_terms, homogeneous_asymptotics, m0_asymptotics, m1_random_asymptotics, m3_random_asymptotics,
    TheoryContext,
};

const SEED: u64 = 20_240_601;

const COLLAPSE_TOL: f64 = 1e-8;
const CONSTANT_TOL: f64 = 1e-10;
const LINEAR_TOL: f64 = 1e-8;
const BIAS_TOL: f64 = 0.03;
const INFLATION_REL_TOL: f64 = 0.25;
const HOMOGENEOUS_M1_RATIO: f64 = 1.3;
const HOMOGENEOUS_M2_RATIO: f64 = 1.5;
const IDENTITY_TOL: f64 = 1e-12;
const CLOSED_FORM_TOL: f64 = 1e-8;
const MOMENT_TOL: f64 = 1e-10;
const CV_ISE_FACTOR: f64 = 2.0;
const SOLVER_TOL: f64 = 1e-6;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn apply(tag: EstimatorTag, ind: &IndividualDataset, pooled: &PooledDataset, cfg: &FitConfig, points: &[f64]) -> Vec<Option<f64>> {
    let data = if tag == EstimatorTag::M0 { EstimatorData::Individual(ind) } else { EstimatorData::Pooled(pooled) };
    PreparedEstimator::new(tag, data).unwrap().evaluate(cfg, points)
}

fn both_designs(ind: &IndividualDataset, c: usize, seed: u64) -> [PooledDataset; 2] {
    [pool_random(ind, c, &mut stream_rng(seed, 1)).unwrap(), pool_homogeneous(ind, c).unwrap()]
}

fn collapse() -> Outcome {
    let ind = sample_dgp(&Dgp::d3(), 200, &mut stream_rng(SEED, 0)).unwrap();
    let grid = linear_grid(-1.5, 1.5, 21);
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    let mut mismatch = 0;
    for pooled in both_designs(&ind, 1, SEED) {
        for p in 0..=2 {
            let cfg = FitConfig::new(p, 0.6).unwrap();
            let m0 = apply(EstimatorTag::M0, &ind, &pooled, &cfg, &grid);
            for tag in [EstimatorTag::M1, EstimatorTag::M2, EstimatorTag::M3] {
                for (a, b) in m0.iter().zip(apply(tag, &ind, &pooled, &cfg, &grid)) {
                    match (a, b) {
                        (Some(a), Some(b)) => {
                            worst = worst.max((a - b).abs());
                            compared += 1;
                        }
                        (None, None) => {}
                        _ => mismatch += 1,
                    }
                }
            }
        }
    }
    outcome(worst < COLLAPSE_TOL && mismatch == 0 && compared > 0, format!("max diff {worst:.2e} over {compared} fits, {mismatch} failure mismatches"))
}

fn reproduction() -> Outcome {
    let base = sample_dgp(&Dgp::d3(), 200, &mut stream_rng(SEED, 2)).unwrap();
    let grid = linear_grid(-1.5, 1.5, 21);
    let constant = base.map_responses(|_| 2.5).unwrap();
    let line = IndividualDataset::new(base.x().to_vec(), base.x().iter().map(|x| 0.5 - 1.5 * x).collect()).unwrap();
    let (mut worst_c, mut worst_l): (f64, f64) = (0.0, 0.0);
    let mut fits = 0;
    for c in [2, 4] {
        for (pc, pl) in both_designs(&constant, c, SEED).into_iter().zip(both_designs(&line, c, SEED)) {
            for p in 0..=2 {
                let cfg = FitConfig::new(p, 0.8).unwrap();
                for tag in EstimatorTag::ALL {
                    for v in apply(tag, &constant, &pc, &cfg, &grid).into_iter().flatten() {
                        worst_c = worst_c.max((v - 2.5).abs());
                        fits += 1;
                    }
                }
            }
            let cfg = FitConfig::new(1, 0.8).unwrap();
            for tag in [EstimatorTag::M0, EstimatorTag::M1, EstimatorTag::M2] {
                for (x, v) in grid.iter().zip(apply(tag, &line, &pl, &cfg, &grid)) {
                    if let Some(v) = v {
                        worst_l = worst_l.max((v - (0.5 - 1.5 * x)).abs());
                        fits += 1;
                    }
                }
            }
        }
    }
    outcome(
        worst_c < CONSTANT_TOL && worst_l < LINEAR_TOL && fits > 0,
        format!("constant {worst_c:.2e}, linear {worst_l:.2e} over {fits} fits"),
    )
}

fn square_dgp() -> Dgp {
    Dgp::custom(MeanFunction::Polynomial(vec![0.0, 0.0, 1.0]), 0.1, CovariateLaw::Uniform { lower: -1.0, upper: 1.0 }).unwrap()
}

fn square_context(c: usize) -> TheoryContext {
    TheoryContext::equal_pools(
        MeanFunction::Polynomial(vec![0.0, 0.0, 1.0]),
        CovariateLaw::Uniform { lower: -1.0, upper: 1.0 },
        NoiseVariance::Constant(0.01),
        KernelKind::Epanechnikov,
        c,
    )
    .unwrap()
}

const N_SQUARE: usize = 2000;
const REPS: usize = 300;

/// Fresh covariates, pooling and noise in every replication.
fn unconditional_at_zero(tag: EstimatorTag, c: usize, h: f64, stream: u64) -> Vec<Option<f64>> {
    let cfg = FitConfig::new(0, h).unwrap();
    (0..REPS)
        .map(|r| {
            let mut rng = stream_rng(SEED + stream, r as u64);
            let ind = sample_dgp(&square_dgp(), N_SQUARE, &mut rng).unwrap();
            let pooled = pool_random(&ind, c, &mut rng).unwrap();
            apply(tag, &ind, &pooled, &cfg, &[0.0])[0]
        })
        .collect()
}

fn persistent_bias() -> Outcome {
    let theory = m1_random_asymptotics(&square_context(2), 0.0, 0, 0.1).unwrap().persistent_bias;
    let m1: Vec<f64> = unconditional_at_zero(EstimatorTag::M1, 2, 0.1, 3).into_iter().flatten().collect();
    let m3: Vec<f64> = unconditional_at_zero(EstimatorTag::M3, 2, 0.1, 3).into_iter().flatten().collect();
    let (b1, b3) = (mean(&m1), mean(&m3));
    outcome(
        (b1 - theory).abs() <= BIAS_TOL && b3.abs() <= BIAS_TOL && m1.len() == REPS && m3.len() == REPS,
        format!("m1 bias {b1:.4} vs theory {theory:.4}; m3 bias {b3:.4}; {} / {} fits", m1.len(), m3.len()),
    )
}

/// Covariates and pool membership drawn once; only the noise is redrawn.
fn conditional_at_zero(c: usize, h: f64) -> (Vec<f64>, Vec<f64>) {
    let dgp = square_dgp();
    let mut rng = stream_rng(SEED + 4, 0);
    let x: Vec<f64> = (0..N_SQUARE).map(|_| dgp.law.sample(&mut rng)).collect();
    let cfg = FitConfig::new(0, h).unwrap();
    let (mut m0, mut m3) = (Vec::new(), Vec::new());
    for r in 0..REPS {
        let mut noise = stream_rng(SEED + 5, r as u64);
        let y: Vec<f64> = x.iter().map(|&v| dgp.mean.eval(v) + dgp.noise.sample(v, &mut noise)).collect();
        let ind = IndividualDataset::new(x.clone(), y).unwrap();
        let pooled = pool_random(&ind, c, &mut stream_rng(SEED + 6, 0)).unwrap();
        m0.push(apply(EstimatorTag::M0, &ind, &pooled, &cfg, &[0.0])[0].unwrap());
        m3.push(apply(EstimatorTag::M3, &ind, &pooled, &cfg, &[0.0])[0].unwrap());
    }
    (m0, m3)
}

fn variance_inflation() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for c in [2, 4] {
        let (m0, m3) = conditional_at_zero(c, 0.15);
        let ratio = variance(&m3) / variance(&m0);
        let ok = (ratio - c as f64).abs() <= INFLATION_REL_TOL * c as f64;
        pass &= ok;
        parts.push(format!("c={c}: ratio {ratio:.3} (target {c}, {})", if ok { "ok" } else { "out of band" }));
    }
    outcome(pass, parts.join("; "))
}

fn product_weighting_variance() -> Outcome {
    let var_of = |tag, c| {
        let v: Vec<f64> = unconditional_at_zero(tag, c, 0.15, 7 + c as u64).into_iter().flatten().collect();
        (variance(&v), v.len())
    };
    let ((v2_2, n2_2), (v2_4, n2_4)) = (var_of(EstimatorTag::M2, 2), var_of(EstimatorTag::M2, 4));
    let ((v3_2, _), (v3_4, _)) = (var_of(EstimatorTag::M3, 2), var_of(EstimatorTag::M3, 4));
    let (r2, r3) = (v2_4 / v2_2, v3_4 / v3_2);
    outcome(
        v2_4 > v2_2 && r2 > r3,
        format!("m2 var c=2 {v2_2:.3e} ({n2_2} fits), c=4 {v2_4:.3e} ({n2_4} fits); ratio m2 {r2:.2} vs m3 {r3:.2}"),
    )
}

fn cv_ise(tag: EstimatorTag, ind: &IndividualDataset, pooled: &PooledDataset, cfg: &FitConfig) -> Option<f64> {
    let opts = CvOptions::default();
    let h = if tag == EstimatorTag::M0 {
        select_bandwidth_individual(ind, cfg, &opts).ok()?.chosen_h
    } else {
        select_bandwidth(pooled, tag, cfg, &opts).ok()?.chosen_h
    };
    let fitted = apply(tag, ind, pooled, &cfg.with_bandwidth(h).ok()?, ind.x());
    ise(&fitted, ind.y()).ok()
}

fn homogeneous_efficiency() -> Outcome {
    let cfg = FitConfig::new(1, 1.0).unwrap();
    let (mut r1, mut r2) = (Vec::new(), Vec::new());
    for r in 0..100u64 {
        let ind = sample_dgp(&Dgp::d2(), 600, &mut stream_rng(SEED + 8, r)).unwrap();
        let pooled = pool_homogeneous(&ind, 2).unwrap();
        let e0 = cv_ise(EstimatorTag::M0, &ind, &pooled, &cfg);
        let e1 = cv_ise(EstimatorTag::M1, &ind, &pooled, &cfg);
        let e2 = cv_ise(EstimatorTag::M2, &ind, &pooled, &cfg);
        if let (Some(a), Some(b)) = (e0, e1) {
            r1.push(b / a);
        }
        if let (Some(a), Some(b)) = (e0, e2) {
            r2.push(b / a);
        }
    }
    let (q1, q2) = (median(&r1), median(&r2));
    outcome(
        q1 <= HOMOGENEOUS_M1_RATIO && q2 <= HOMOGENEOUS_M2_RATIO,
        format!("median ISE ratio m1/m0 {q1:.4} ({} reps), m2/m0 {q2:.4} ({} reps)", r1.len(), r2.len()),
    )
}

fn theory_identities() -> Outcome {
    let grid = linear_grid(-0.9, 0.9, 21);
    let (mut bias_gap, mut closed_gap, mut unit_gap): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let mut homogeneous_equal = true;
    for c in [1, 2, 4] {
        let ctx = square_context(c);
        for &x in &grid {
            for p in 0..=1 {
                let m0 = m0_asymptotics(&ctx, x, p, 0.2, 600).unwrap();
                let m3 = m3_random_asymptotics(&ctx, x, p, 0.2, 600).unwrap();
                bias_gap = bias_gap.max((m0.leading_bias - m3.leading_bias).abs());
            }
            let s = m1_random_asymptotics(&ctx, x, 0, 0.2).unwrap();
            closed_gap = closed_gap.max((s.closed_form_bias.unwrap() - s.leading_bias).abs());
        }
    }
    let unit = square_context(1);
    for &x in &grid {
        for p in 0..=1 {
            let a = homogeneous_asymptotics(&unit, EstimatorTag::M1, x, p, 0.2, 600, 1).unwrap();
            let b = homogeneous_asymptotics(&unit, EstimatorTag::M2, x, p, 0.2, 600, 1).unwrap();
            homogeneous_equal &= a.leading_bias.to_bits() == b.leading_bias.to_bits() && a.variance == b.variance;
            let terms = average_weighted_terms(&unit, x, p).unwrap();
            let l0 = terms.l0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            unit_gap = unit_gap.max(l0).max(m1_random_asymptotics(&unit, x, p, 0.2).unwrap().persistent_bias.abs());
        }
    }
    outcome(
        bias_gap <= IDENTITY_TOL && closed_gap <= CLOSED_FORM_TOL && unit_gap == 0.0 && homogeneous_equal,
        format!("m3-m0 bias {bias_gap:.1e}, closed form {closed_gap:.1e}, unit pools {unit_gap:.1e}, K-dagger at c=1 equal: {homogeneous_equal}"),
    )
}

fn kernel_moments() -> Outcome {
    let table = MomentTable::plain(KernelKind::Epanechnikov, 8).unwrap();
    let mu2 = (table.mu[2] - 0.2).abs();
    let nu0 = (table.nu[0] - 0.6).abs();
    let mut odd: f64 = 0.0;
    let mut closed: f64 = 0.0;
    let mut exact: f64 = 0.0;
    for kind in KernelKind::ALL.into_iter().filter(|k| k.is_compact()) {
        for power in 1..=4u32 {
            for order in 0..=8 {
                let q = moment_quadrature(kind, order, power).unwrap();
                let cf = moment_closed_form(kind, order, power).unwrap();
                closed = closed.max((q - cf).abs());
                if order % 2 == 1 {
                    odd = odd.max(q.abs()).max(cf.abs());
                }
            }
        }
    }
    // ∫ t^k (3/4)(1 - t²) dt over [-1, 1] for even k.
    for (k, m) in table.mu.iter().enumerate().filter(|(k, _)| k % 2 == 0) {
        let kf = k as f64;
        exact = exact.max((m - 0.75 * (2.0 / (kf + 1.0) - 2.0 / (kf + 3.0))).abs());
    }
    outcome(
        mu2 < MOMENT_TOL && nu0 < MOMENT_TOL && odd < MOMENT_TOL && closed <= MOMENT_TOL && exact <= MOMENT_TOL,
        format!("|mu2-0.2| {mu2:.1e}, |nu0-0.6| {nu0:.1e}, odd {odd:.1e}, closed vs quadrature {closed:.1e}, exact {exact:.1e}"),
    )
}

fn cv_sanity() -> Outcome {
    let cfg = FitConfig::new(1, 1.0).unwrap();
    let (mut chosen, mut best) = (Vec::new(), Vec::new());
    for r in 0..50u64 {
        let mut rng = stream_rng(SEED + 9, r);
        let ind = sample_dgp(&Dgp::d2(), 600, &mut rng).unwrap();
        let pooled = pool_random(&ind, 2, &mut rng).unwrap();
        let Ok(trace) = select_bandwidth(&pooled, EstimatorTag::M3, &cfg, &CvOptions::default()) else { continue };
        let grid = default_grid(&pooled.all_covariates().collect::<Vec<_>>()).unwrap();
        let ise_at = |h: f64| ise(&apply(EstimatorTag::M3, &ind, &pooled, &cfg.with_bandwidth(h).unwrap(), ind.x()), ind.y()).ok();
        let oracle = grid.iter().filter_map(|&h| ise_at(h)).fold(f64::INFINITY, f64::min);
        if let (Some(v), true) = (ise_at(trace.chosen_h), oracle.is_finite()) {
            chosen.push(v);
            best.push(oracle);
        }
    }
    let (a, b) = (median(&chosen), median(&best));
    outcome(a <= CV_ISE_FACTOR * b && chosen.len() >= 25, format!("median ISE at CV h {a:.4}, at oracle h {b:.4} ({} reps)", chosen.len()))
}

fn solver_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for seed in 0..200 {
        let inst = common::tiny_instance(seed);
        for d in common::solver_discrepancies(&inst).into_iter().flatten() {
            worst = worst.max(d);
            checked += 1;
        }
    }
    outcome(worst < SOLVER_TOL && checked > 0, format!("max |beta - oracle| {worst:.2e} over {checked} fits"))
}

fn determinism() -> Outcome {
    let tmp = tempfile::TempDir::new().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("run.cfg"), "dgp = D2\nN = 300\nc = 3\nreplications = 8\nh = 0.6\ngrid_count = 15\nbootstrap_resamples = 40\n").unwrap();
    let run = |cmd: &str, out: &str, jobs: &str| {
        Command::new(env!("CARGO_BIN_EXE_poolsmooth"))
            .current_dir(d)
            .args([cmd, "--config", "run.cfg", "--out", out, "--jobs", jobs])
            .status()
            .map(|s| s.success())
            .unwrap_or(false)
    };
    let mut ok = true;
    let mut compared = 0;
    for (cmd, files) in [("simulate", &["replications.csv", "curves.csv", "quartiles.csv"][..]), ("bootstrap", &["bands.csv"][..])] {
        ok &= run(cmd, &format!("{cmd}_a"), "1") && run(cmd, &format!("{cmd}_b"), "1") && run(cmd, &format!("{cmd}_c"), "4");
        for f in files {
            let read = |dir: &str| std::fs::read(d.join(format!("{cmd}_{dir}")).join(f)).unwrap_or_default();
            let a = read("a");
            ok &= !a.is_empty() && a == read("b") && a == read("c");
            compared += 1;
        }
    }
    outcome(ok, format!("{compared} CSV files compared across reruns and --jobs 4"))
}

type Check = fn() -> Outcome;

fn main() {
    let criteria: [(&str, Check, Duration); 11] = [
        ("collapse at c=1", collapse, Duration::from_secs(5)),
        ("exact reproduction", reproduction, Duration::from_secs(5)),
        ("persistent bias of m1", persistent_bias, Duration::from_secs(120)),
        ("variance inflation of m3", variance_inflation, Duration::from_secs(120)),
        ("variance ordering of m2", product_weighting_variance, Duration::from_secs(120)),
        ("homogeneous efficiency", homogeneous_efficiency, Duration::from_secs(300)),
        ("theory identities", theory_identities, Duration::from_secs(5)),
        ("kernel moments", kernel_moments, Duration::from_secs(1)),
        ("cv sanity", cv_sanity, Duration::from_secs(300)),
        ("solver oracle", solver_oracle, Duration::from_secs(30)),
        ("determinism", determinism, Duration::from_secs(60)),
    ];
    let only: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    for (i, (name, check, limit)) in criteria.iter().enumerate() {
        if only.is_some_and(|k| k != i + 1) {
            continue;
        }
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let pass = result.pass && elapsed <= *limit;
        failed += usize::from(!pass);
        println!(
            "criterion {:>2} {:<26} {}  {} [{:.2}s, limit {}s]",
            i + 1,
            name,
            if pass { "PASS" } else { "FAIL" },
            result.detail,
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
