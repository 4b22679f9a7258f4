//! Mean functions, covariate laws and noise variances shared by the theory
//! evaluations and the simulation harness.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};

/// Truncated Taylor series `a_0 + a_1 t + ... + a_n t^n` around a point.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    coef: Vec<f64>,
}

impl Jet {
    /// The identity function expanded at `x`.
    pub fn variable(x: f64, order: usize) -> Self {
        let mut coef = vec![0.0; order + 1];
        coef[0] = x;
        if order >= 1 {
            coef[1] = 1.0;
        }
        Self { coef }
    }

    pub fn constant(c: f64, order: usize) -> Self {
        let mut coef = vec![0.0; order + 1];
        coef[0] = c;
        Self { coef }
    }

    pub fn order(&self) -> usize {
        self.coef.len() - 1
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coef
    }

    pub fn value(&self) -> f64 {
        self.coef[0]
    }

    /// `ℓ`-th derivative at the expansion point.
    pub fn derivative(&self, order: usize) -> f64 {
        let factorial: f64 = (1..=order).map(|k| k as f64).product();
        self.coef[order] * factorial
    }

    pub fn add(&self, other: &Jet) -> Jet {
        Jet { coef: self.coef.iter().zip(&other.coef).map(|(a, b)| a + b).collect() }
    }

    pub fn scale(&self, s: f64) -> Jet {
        Jet { coef: self.coef.iter().map(|a| a * s).collect() }
    }

    pub fn mul(&self, other: &Jet) -> Jet {
        let n = self.coef.len();
        let coef = (0..n).map(|k| (0..=k).map(|i| self.coef[i] * other.coef[k - i]).sum()).collect();
        Jet { coef }
    }

    pub fn powi(&self, k: u32) -> Jet {
        let mut out = Jet::constant(1.0, self.order());
        for _ in 0..k {
            out = out.mul(self);
        }
        out
    }

    pub fn exp(&self) -> Jet {
        let n = self.coef.len();
        let mut b = vec![0.0; n];
        b[0] = self.coef[0].exp();
        for k in 1..n {
            b[k] = (1..=k).map(|j| j as f64 * self.coef[j] * b[k - j]).sum::<f64>() / k as f64;
        }
        Jet { coef: b }
    }

    /// `(sin, cos)` of the series.
    pub fn sin_cos(&self) -> (Jet, Jet) {
        let n = self.coef.len();
        let mut s = vec![0.0; n];
        let mut c = vec![0.0; n];
        s[0] = self.coef[0].sin();
        c[0] = self.coef[0].cos();
        for k in 1..n {
            let mut ds = 0.0;
            let mut dc = 0.0;
            for j in 1..=k {
                ds += j as f64 * self.coef[j] * c[k - j];
                dc += j as f64 * self.coef[j] * s[k - j];
            }
            s[k] = ds / k as f64;
            c[k] = -dc / k as f64;
        }
        (Jet { coef: s }, Jet { coef: c })
    }

    pub fn cos(&self) -> Jet {
        self.sin_cos().1
    }
}

/// Regression function `m(x)`.
#[derive(Clone)]
pub enum MeanFunction {
    /// `x³ exp(x⁴/1000) cos x`
    D1,
    /// `2x exp(-10x⁴/81)`
    D2,
    /// `x³`
    D3,
    /// `x⁴`
    D4,
    /// `Σ a_k x^k` with coefficients in increasing degree.
    Polynomial(Vec<f64>),
    /// Arbitrary function; derivatives come from finite differences.
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for MeanFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::D1 => f.write_str("D1"),
            Self::D2 => f.write_str("D2"),
            Self::D3 => f.write_str("D3"),
            Self::D4 => f.write_str("D4"),
            Self::Polynomial(c) => f.debug_tuple("Polynomial").field(c).finish(),
            Self::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl MeanFunction {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Self::D1 => x.powi(3) * (x.powi(4) / 1000.0).exp() * x.cos(),
            Self::D2 => 2.0 * x * (-10.0 * x.powi(4) / 81.0).exp(),
            Self::D3 => x.powi(3),
            Self::D4 => x.powi(4),
            Self::Polynomial(c) => c.iter().rev().fold(0.0, |acc, a| acc * x + a),
            Self::Custom(g) => g(x),
        }
    }

    /// Taylor coefficients `β_ℓ = m^(ℓ)(x)/ℓ!` for `ℓ = 0..=order`.
    pub fn taylor(&self, x: f64, order: usize) -> Vec<f64> {
        let t = Jet::variable(x, order);
        let jet = match self {
            Self::D1 => {
                let quartic = t.powi(4).scale(1e-3).exp();
                t.powi(3).mul(&quartic).mul(&t.cos())
            }
            Self::D2 => t.scale(2.0).mul(&t.powi(4).scale(-10.0 / 81.0).exp()),
            Self::D3 => t.powi(3),
            Self::D4 => t.powi(4),
            Self::Polynomial(c) => {
                let mut acc = Jet::constant(0.0, order);
                for a in c.iter().rev() {
                    acc = acc.mul(&t).add(&Jet::constant(*a, order));
                }
                acc
            }
            Self::Custom(g) => return finite_difference_taylor(|s| g(s), x, order, 1.0),
        };
        jet.coef
    }
}

/// Central differences of order `k` with one Richardson step (error `O(step⁴)`).
///
/// The step grows with the derivative order to keep round-off bounded.
pub fn finite_difference_taylor(g: impl Fn(f64) -> f64, x: f64, order: usize, scale: f64) -> Vec<f64> {
    let mut out = vec![g(x)];
    let mut factorial = 1.0;
    for k in 1..=order {
        factorial *= k as f64;
        let step = scale * 1e-4f64.powf(1.0 / k as f64);
        let d1 = central_difference(&g, x, k, step);
        let d2 = central_difference(&g, x, k, step / 2.0);
        out.push((4.0 * d2 - d1) / 3.0 / factorial);
    }
    out
}

fn central_difference(g: &impl Fn(f64) -> f64, x: f64, k: usize, step: f64) -> f64 {
    let mut binom = 1.0;
    let mut sum = 0.0;
    for i in 0..=k {
        let offset = (k as f64 / 2.0 - i as f64) * step;
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign * binom * g(x + offset);
        binom = binom * (k - i) as f64 / (i + 1) as f64;
    }
    sum / step.powi(k as i32)
}

/// Number of standard deviations kept when integrating against a normal law.
const NORMAL_TAIL: f64 = 12.0;

/// Distribution of the covariate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CovariateLaw {
    Uniform { lower: f64, upper: f64 },
    Normal { mean: f64, sd: f64 },
    /// With probability 0.8 a draw from density `0.1875 x²` on `[-2, 2]`,
    /// otherwise `Uniform(-1, 1)`.
    QuadraticUniformMixture,
}

impl CovariateLaw {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Uniform { lower, upper } if !(lower < upper) || !lower.is_finite() || !upper.is_finite() => {
                Err(Error::InvalidArgument(format!("uniform law needs lower < upper, got [{lower}, {upper}]")))
            }
            Self::Normal { sd, mean } if !(sd > 0.0) || !mean.is_finite() || !sd.is_finite() => {
                Err(Error::InvalidArgument(format!("normal law needs a positive sd, got {sd}")))
            }
            _ => Ok(()),
        }
    }

    /// Density and its first two derivatives at `x`.
    pub fn density_derivatives(&self, x: f64) -> [f64; 3] {
        match *self {
            Self::Uniform { lower, upper } => {
                if (lower..=upper).contains(&x) {
                    [1.0 / (upper - lower), 0.0, 0.0]
                } else {
                    [0.0; 3]
                }
            }
            Self::Normal { mean, sd } => {
                let z = (x - mean) / sd;
                let phi = (-0.5 * z * z).exp() / (sd * (2.0 * PI).sqrt());
                [phi, -z / sd * phi, (z * z - 1.0) / (sd * sd) * phi]
            }
            Self::QuadraticUniformMixture => {
                let mut d = [0.0; 3];
                if (-2.0..=2.0).contains(&x) {
                    d[0] += 0.8 * 0.1875 * x * x;
                    d[1] += 0.8 * 0.375 * x;
                    d[2] += 0.8 * 0.375;
                }
                if (-1.0..=1.0).contains(&x) {
                    d[0] += 0.2 * 0.5;
                }
                d
            }
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.density_derivatives(x)[0]
    }

    /// Integration range split at the density's kinks.
    pub fn breakpoints(&self) -> Vec<f64> {
        match *self {
            Self::Uniform { lower, upper } => vec![lower, upper],
            Self::Normal { mean, sd } => vec![mean - NORMAL_TAIL * sd, mean, mean + NORMAL_TAIL * sd],
            Self::QuadraticUniformMixture => vec![-2.0, -1.0, 0.0, 1.0, 2.0],
        }
    }

    pub fn support(&self) -> (f64, f64) {
        let b = self.breakpoints();
        (b[0], b[b.len() - 1])
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::Uniform { lower, upper } => rng.random_range(lower..upper),
            Self::Normal { mean, sd } => {
                Normal::new(mean, sd).expect("validated normal law").sample(rng)
            }
            Self::QuadraticUniformMixture => {
                if rng.random_bool(0.8) {
                    let u: f64 = rng.random();
                    (16.0 * u - 8.0).cbrt()
                } else {
                    rng.random_range(-1.0..1.0)
                }
            }
        }
    }
}

/// Conditional variance `σ²(x)`.
#[derive(Clone)]
pub enum NoiseVariance {
    Constant(f64),
    Function(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for NoiseVariance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(v) => f.debug_tuple("Constant").field(v).finish(),
            Self::Function(_) => f.write_str("Function(..)"),
        }
    }
}

impl NoiseVariance {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Self::Constant(v) => *v,
            Self::Function(g) => g(x),
        }
    }

    /// Normal noise with variance `σ²(x)`.
    pub fn sample<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        z * self.eval(x).max(0.0).sqrt()
    }
}
