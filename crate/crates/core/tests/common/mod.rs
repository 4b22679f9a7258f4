#![allow(dead_code)]

use poolsmooth::data::{IndividualDataset, PooledDataset};
use poolsmooth::kernels::KernelKind;

pub fn kh(kind: KernelKind, t: f64, h: f64) -> f64 {
    kind.eval(t / h) / h
}

fn poly(beta: &[f64], u: f64) -> f64 {
    beta.iter().enumerate().map(|(l, b)| b * u.powi(l as i32)).sum()
}

/// `Σ_i K_h(X_i - x){Y_i - Σ β_ℓ (X_i - x)^ℓ}²`
pub fn q_individual(x: &[f64], y: &[f64], kind: KernelKind, h: f64, at: f64, beta: &[f64]) -> f64 {
    x.iter().zip(y).map(|(&xi, &yi)| kh(kind, xi - at, h) * (yi - poly(beta, xi - at)).powi(2)).sum()
}

/// Pool objective with average (`product = false`) or product weights.
pub fn q_pooled(data: &PooledDataset, kind: KernelKind, h: f64, at: f64, beta: &[f64], product: bool) -> f64 {
    data.pools()
        .iter()
        .map(|pool| {
            let c = pool.size() as f64;
            let ws: Vec<f64> = pool.covariates().iter().map(|&v| kh(kind, v - at, h)).collect();
            let w = if product { ws.iter().product::<f64>() } else { ws.iter().sum::<f64>() / c };
            let fitted = pool.covariates().iter().map(|&v| poly(beta, v - at)).sum::<f64>() / c;
            w * (pool.response() - fitted).powi(2)
        })
        .sum()
}

/// Pseudo responses computed from scratch: `R_j = c_j Z_j - (c_j - 1) N⁻¹ Σ c_j Z_j`.
pub fn pseudo_points(data: &PooledDataset) -> (Vec<f64>, Vec<f64>) {
    let n: f64 = data.pools().iter().map(|p| p.size() as f64).sum();
    let mu = data.pools().iter().map(|p| p.size() as f64 * p.response()).sum::<f64>() / n;
    let mut xs = Vec::new();
    let mut rs = Vec::new();
    for p in data.pools() {
        let c = p.size() as f64;
        for &x in p.covariates() {
            xs.push(x);
            rs.push(c * p.response() - (c - 1.0) * mu);
        }
    }
    (xs, rs)
}

/// Minimizes a quadratic objective by cyclic coordinate descent with exact
/// line searches read off three function evaluations.
pub fn coordinate_descent(q: impl Fn(&[f64]) -> f64, dim: usize) -> Vec<f64> {
    let mut beta: Vec<f64> = vec![0.0; dim];
    for _ in 0..200_000 {
        let mut moved = 0.0f64;
        for i in 0..dim {
            let at = |t: f64, b: &mut Vec<f64>| {
                let old = b[i];
                b[i] = old + t;
                let v = q(b);
                b[i] = old;
                v
            };
            let scale = 1.0 + beta[i].abs();
            let q0 = q(&beta);
            let qp = at(scale, &mut beta);
            let qm = at(-scale, &mut beta);
            let curvature = qp + qm - 2.0 * q0;
            if curvature <= 0.0 {
                continue;
            }
            let step = -scale * (qp - qm) / (2.0 * curvature);
            beta[i] += step;
            moved = moved.max(step.abs() / scale);
        }
        if moved < 1e-13 {
            break;
        }
    }
    beta
}

/// Kahan-compensated sum of squared differences.
pub fn kahan_sse(a: &[f64], b: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for (x, y) in a.iter().zip(b) {
        let term = (x - y).powi(2) - comp;
        let t = sum + term;
        comp = (t - sum) - term;
        sum = t;
    }
    sum
}

pub fn dataset(pairs: &[(f64, f64)]) -> IndividualDataset {
    IndividualDataset::from_pairs(pairs.iter().copied()).unwrap()
}

/// Random tiny instance: `J ≤ 6` pools of size `1..=3`, order `p ≤ 2`.
pub struct TinyInstance {
    pub individual: IndividualDataset,
    pub pooled: PooledDataset,
    pub p: usize,
    pub h: f64,
    pub at: f64,
}

pub fn tiny_instance(seed: u64) -> TinyInstance {
    use poolsmooth::data::pool_random;
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let j = rng.random_range(3..=6);
    let c = rng.random_range(1..=3);
    let n = j * c;
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = x.iter().map(|v| v * v - 0.5 * v + rng.random_range(-0.5..0.5)).collect();
    let individual = IndividualDataset::new(x, y).unwrap();
    let pooled = pool_random(&individual, c, &mut rng).unwrap();
    TinyInstance {
        individual,
        pooled,
        p: rng.random_range(0..=2),
        h: rng.random_range(1.5..3.0),
        at: rng.random_range(-0.5..0.5),
    }
}

/// Largest `|β̂ - β_oracle|` over the four estimators; `None` entries were singular.
pub fn solver_discrepancies(inst: &TinyInstance) -> Vec<Option<f64>> {
    use poolsmooth::estimators::*;
    let kind = KernelKind::Epanechnikov;
    let cfg = FitConfig::new(inst.p, inst.h).unwrap();
    let dim = inst.p + 1;
    let (h, at) = (inst.h, inst.at);
    let (px, pr) = pseudo_points(&inst.pooled);
    let ind = &inst.individual;
    type Case<'a> = (Result<LocalFit, poolsmooth::Error>, Box<dyn Fn(&[f64]) -> f64 + 'a>);
    let cases: Vec<Case> = vec![
        (fit_individual(ind, &cfg, at), Box::new(|b: &[f64]| q_individual(ind.x(), ind.y(), kind, h, at, b))),
        (fit_average_weighted(&inst.pooled, &cfg, at), Box::new(|b: &[f64]| q_pooled(&inst.pooled, kind, h, at, b, false))),
        (fit_product_weighted(&inst.pooled, &cfg, at), Box::new(|b: &[f64]| q_pooled(&inst.pooled, kind, h, at, b, true))),
        (fit_marginal_integration(&inst.pooled, &cfg, at), Box::new(move |b: &[f64]| q_individual(&px, &pr, kind, h, at, b))),
    ];
    cases
        .into_iter()
        .map(|(fit, q)| {
            let fit = fit.ok()?;
            let oracle = coordinate_descent(|b| q(b), dim);
            Some(fit.beta.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        })
        .collect()
}
