//! Kernel functions, bandwidth scaling and kernel moments.
//!
//! Moments `∫ t^ℓ K(t)^power dt` are used with `power = 1` (the usual `μ_ℓ`),
//! `power = 2` (`ν_ℓ`) and `power = c` for the product kernel `K^c` that
//! governs the product-weighted estimator under homogeneous pooling.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature;

const QUAD_ABS_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum KernelKind {
    #[default]
    Epanechnikov,
    Quartic,
    Triweight,
    Tricube,
    Gaussian,
}

impl KernelKind {
    pub const ALL: [KernelKind; 5] = [
        KernelKind::Epanechnikov,
        KernelKind::Quartic,
        KernelKind::Triweight,
        KernelKind::Tricube,
        KernelKind::Gaussian,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Epanechnikov => "epanechnikov",
            KernelKind::Quartic => "quartic",
            KernelKind::Triweight => "triweight",
            KernelKind::Tricube => "tricube",
            KernelKind::Gaussian => "gaussian",
        }
    }

    /// Compact kernels vanish outside `[-1, 1]`.
    pub fn is_compact(self) -> bool {
        !matches!(self, KernelKind::Gaussian)
    }

    /// `(a, q, r)` such that `K(t) = a (1 - |t|^q)^r` on `[-1, 1]`.
    fn compact_form(self) -> Option<(f64, i32, u32)> {
        match self {
            KernelKind::Epanechnikov => Some((0.75, 2, 1)),
            KernelKind::Quartic => Some((15.0 / 16.0, 2, 2)),
            KernelKind::Triweight => Some((35.0 / 32.0, 2, 3)),
            KernelKind::Tricube => Some((70.0 / 81.0, 3, 3)),
            KernelKind::Gaussian => None,
        }
    }

    pub fn eval(self, t: f64) -> f64 {
        match self.compact_form() {
            Some((a, q, r)) => {
                let at = t.abs();
                if at >= 1.0 {
                    0.0
                } else {
                    a * (1.0 - at.powi(q)).powi(r as i32)
                }
            }
            None => (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt(),
        }
    }

    /// `K_h(t) = K(t / h) / h`.
    pub fn scaled(self, t: f64, h: f64) -> Result<f64> {
        if !(h > 0.0) {
            return Err(Error::NonPositiveBandwidth(h));
        }
        Ok(self.eval(t / h) / h)
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "epanechnikov" | "epa" => Ok(KernelKind::Epanechnikov),
            "quartic" | "biweight" => Ok(KernelKind::Quartic),
            "triweight" => Ok(KernelKind::Triweight),
            "tricube" => Ok(KernelKind::Tricube),
            "gaussian" | "normal" => Ok(KernelKind::Gaussian),
            other => Err(Error::InvalidArgument(format!("unknown kernel `{other}`"))),
        }
    }
}

pub fn kernel_eval(kind: KernelKind, t: f64) -> f64 {
    kind.eval(t)
}

pub fn kernel_scaled(kind: KernelKind, t: f64, h: f64) -> Result<f64> {
    kind.scaled(t, h)
}

/// `B(s, n + 1) = n! / (s (s+1) ... (s+n))`
fn beta_integer_second(s: f64, n: u32) -> f64 {
    (1..=n).fold(1.0 / s, |acc, k| acc * k as f64 / (s + k as f64))
}

/// Closed-form `∫ t^ℓ K(t)^power dt` for the compact polynomial family.
/// `None` for the Gaussian kernel.
pub fn moment_closed_form(kind: KernelKind, order: usize, power: u32) -> Option<f64> {
    let (a, q, r) = kind.compact_form()?;
    if order % 2 == 1 {
        return Some(0.0);
    }
    if order == 0 && power == 1 {
        return Some(1.0);
    }
    let s = (order as f64 + 1.0) / q as f64;
    Some(2.0 * a.powi(power as i32) / q as f64 * beta_integer_second(s, r * power))
}

/// `∫ t^ℓ K(t)^power dt` by adaptive quadrature, independent of the closed forms.
pub fn moment_quadrature(kind: KernelKind, order: usize, power: u32) -> Result<f64> {
    let integrand = |t: f64| t.powi(order as i32) * kind.eval(t).powi(power as i32);
    let upper = if kind.is_compact() {
        1.0
    } else {
        // Extend until the integrand is negligible; the tail beyond is bounded by it.
        let mut l = ((order as f64) / power as f64).sqrt() + 1.0;
        while (integrand(l) * l).abs() > 1e-30 {
            l *= 1.5;
            if l > 1e4 {
                return Err(Error::QuadratureFailure { lower: -l, upper: l, error: f64::INFINITY });
            }
        }
        l
    };
    let left = quadrature::integrate(integrand, -upper, 0.0, 0.5 * QUAD_ABS_TOL, 0.0)?;
    let right = quadrature::integrate(integrand, 0.0, upper, 0.5 * QUAD_ABS_TOL, 0.0)?;
    Ok(left + right)
}

/// `∫ t^ℓ K^power(t) dt` for `ℓ = 0..=max_order`.
pub fn compute_moments(kind: KernelKind, max_order: usize, power: u32) -> Result<Vec<f64>> {
    if power == 0 {
        return Err(Error::InvalidArgument("kernel power must be at least 1".into()));
    }
    (0..=max_order)
        .map(|l| match moment_closed_form(kind, l, power) {
            Some(v) => Ok(v),
            None => moment_quadrature(kind, l, power),
        })
        .collect()
}

/// Moments of `K^power` (`mu`) and of `K^{2·power}` (`nu`).
///
/// With `power = 1` these are the usual `μ_ℓ` and `ν_ℓ`; with `power = c`
/// they are the moments of the kernel `K† = K^c`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTable {
    pub kind: KernelKind,
    pub max_order: usize,
    pub power: u32,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
}

type CacheKey = (KernelKind, usize, u32);

fn cache() -> &'static RwLock<HashMap<CacheKey, Arc<MomentTable>>> {
    static CACHE: OnceLock<RwLock<HashMap<CacheKey, Arc<MomentTable>>>> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

impl MomentTable {
    pub fn compute(kind: KernelKind, max_order: usize, power: u32) -> Result<Self> {
        Ok(Self {
            kind,
            max_order,
            power,
            mu: compute_moments(kind, max_order, power)?,
            nu: compute_moments(kind, max_order, 2 * power)?,
        })
    }

    /// Shared, memoized table.
    pub fn cached(kind: KernelKind, max_order: usize, power: u32) -> Result<Arc<Self>> {
        let key = (kind, max_order, power);
        if let Some(t) = cache().read().expect("moment cache poisoned").get(&key) {
            return Ok(Arc::clone(t));
        }
        let table = Arc::new(Self::compute(kind, max_order, power)?);
        let mut w = cache().write().expect("moment cache poisoned");
        Ok(Arc::clone(w.entry(key).or_insert(table)))
    }

    pub fn plain(kind: KernelKind, max_order: usize) -> Result<Arc<Self>> {
        Self::cached(kind, max_order, 1)
    }

    /// Moments of `K^c`.
    pub fn dagger(kind: KernelKind, max_order: usize, c: u32) -> Result<Arc<Self>> {
        Self::cached(kind, max_order, c)
    }
}
