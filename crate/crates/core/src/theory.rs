//! Asymptotic bias and variance approximations for the estimators.
//!
//! Everything here is evaluated numerically from kernel moments, covariate
//! moments `δ_ℓ(x) = E(X - x)^ℓ`, remainder moments
//! `R_ℓ,p(x) = E[(X - x)^ℓ {m(X) - Σ_{ℓ'≤p} β_ℓ' (X - x)^ℓ'}]` and the pool
//! constants `t_k1k2`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::estimators::EstimatorTag;
use crate::kernels::{KernelKind, MomentTable};
use crate::linalg::Matrix;
use crate::models::{CovariateLaw, MeanFunction, NoiseVariance};
use crate::quadrature::integrate;

pub const DEFAULT_TOLERANCE: f64 = 1e-11;
const MOMENT_RCOND_MIN: f64 = 1e-14;

/// Model ingredients for the asymptotic formulas.
#[derive(Debug, Clone)]
pub struct TheoryContext {
    pub mean: MeanFunction,
    pub law: CovariateLaw,
    pub sigma2: NoiseVariance,
    pub kernel: KernelKind,
    pub pool_sizes: Vec<usize>,
    /// Absolute and relative quadrature tolerance.
    pub tolerance: f64,
}

impl TheoryContext {
    pub fn new(
        mean: MeanFunction,
        law: CovariateLaw,
        sigma2: NoiseVariance,
        kernel: KernelKind,
        pool_sizes: Vec<usize>,
    ) -> Result<Self> {
        law.validate()?;
        if pool_sizes.is_empty() || pool_sizes.contains(&0) {
            return Err(Error::InvalidPoolSize);
        }
        let ctx = Self { mean, law, sigma2, kernel, pool_sizes, tolerance: DEFAULT_TOLERANCE };
        let mass = ctx.expect(|_| 1.0)?;
        if (mass - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidArgument(format!("covariate density integrates to {mass}, not 1")));
        }
        Ok(ctx)
    }

    /// Context with `J` pools of common size `c`.
    pub fn equal_pools(mean: MeanFunction, law: CovariateLaw, sigma2: NoiseVariance, kernel: KernelKind, c: usize) -> Result<Self> {
        Self::new(mean, law, sigma2, kernel, vec![c])
    }

    pub fn with_pool_sizes(mut self, pool_sizes: Vec<usize>) -> Result<Self> {
        if pool_sizes.is_empty() || pool_sizes.contains(&0) {
            return Err(Error::InvalidPoolSize);
        }
        self.pool_sizes = pool_sizes;
        Ok(self)
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    /// `E g(X)` by quadrature between the law's breakpoints.
    pub fn expect(&self, g: impl Fn(f64) -> f64) -> Result<f64> {
        let breaks = self.law.breakpoints();
        let mut total = 0.0;
        for w in breaks.windows(2) {
            total += integrate(|s| g(s) * self.law.pdf(s), w[0], w[1], self.tolerance, self.tolerance)?;
        }
        if !total.is_finite() {
            return Err(Error::DivergentMoment { order: 0 });
        }
        Ok(total)
    }

    /// `σ̄² = E σ²(X)`
    pub fn sigma2_bar(&self) -> Result<f64> {
        self.expect(|s| self.sigma2.eval(s))
    }

    fn density(&self, x: f64) -> Result<[f64; 3]> {
        let d = self.law.density_derivatives(x);
        if !(d[0] > 0.0) {
            return Err(Error::InvalidArgument(format!("covariate density vanishes at x = {x}")));
        }
        Ok(d)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovariateMoments {
    pub x: f64,
    /// `δ_0..δ_ℓmax`
    pub delta: Vec<f64>,
}

impl CovariateMoments {
    /// `Δ*_0 = (1, δ_1, ..., δ_p)`
    pub fn delta_star(&self, p: usize) -> Vec<f64> {
        self.delta[..=p].to_vec()
    }

    /// `Δ̃_0 = [δ_{ℓ1+ℓ2}]`
    pub fn delta_tilde(&self, p: usize) -> Matrix {
        Matrix::from_fn(p + 1, p + 1, |i, j| self.delta[i + j])
    }
}

pub fn covariate_moments(ctx: &TheoryContext, x: f64, max_order: usize) -> Result<CovariateMoments> {
    let delta = (0..=max_order)
        .map(|l| {
            ctx.expect(|s| (s - x).powi(l as i32)).map_err(|e| match e {
                Error::DivergentMoment { .. } => Error::DivergentMoment { order: l },
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CovariateMoments { x, delta })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemainderMoments {
    pub x: f64,
    pub p: usize,
    /// `R_0,p..R_ℓmax,p`
    pub r: Vec<f64>,
}

impl RemainderMoments {
    /// `R*_p = (R_0,p, ..., R_p,p)`
    pub fn r_star(&self) -> Vec<f64> {
        self.r[..=self.p].to_vec()
    }
}

pub fn remainder_moments(ctx: &TheoryContext, x: f64, p: usize, max_order: usize) -> Result<RemainderMoments> {
    let beta = ctx.mean.taylor(x, p);
    let remainder = |s: f64| {
        let u = s - x;
        ctx.mean.eval(s) - beta.iter().rev().fold(0.0, |acc, b| acc * u + b)
    };
    let r = (0..=max_order)
        .map(|l| ctx.expect(|s| (s - x).powi(l as i32) * remainder(s)))
        .collect::<Result<Vec<_>>>()?;
    Ok(RemainderMoments { x, p, r })
}

/// `t_k0 = J⁻¹ Σ c_j^-k` and `t_k1k2 = J⁻¹ Σ [Π_{k=1}^{k2} (c_j - k)]_+ / c_j^k1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolConstants {
    /// Indexed `[k1][k2]` for `k1, k2 ∈ 0..=3`; column 0 holds `t_k0`.
    table: [[f64; 4]; 4],
}

impl PoolConstants {
    pub fn t(&self, k1: usize, k2: usize) -> f64 {
        self.table[k1][k2]
    }
}

pub fn pool_constants(pool_sizes: &[usize]) -> Result<PoolConstants> {
    if pool_sizes.is_empty() || pool_sizes.contains(&0) {
        return Err(Error::InvalidPoolSize);
    }
    let j = pool_sizes.len() as f64;
    let mut table = [[0.0; 4]; 4];
    for (k1, row) in table.iter_mut().enumerate() {
        for (k2, entry) in row.iter_mut().enumerate() {
            *entry = pool_sizes
                .iter()
                .map(|&c| {
                    let c = c as f64;
                    let prod: f64 = (1..=k2).map(|k| c - k as f64).product();
                    prod.max(0.0) / c.powi(k1 as i32)
                })
                .sum::<f64>()
                / j;
        }
    }
    Ok(PoolConstants { table })
}

/// Kernel moment vectors and matrices for a local polynomial of order `p`.
#[derive(Debug, Clone)]
pub struct MomentMatrices {
    pub p: usize,
    table: Arc<MomentTable>,
}

impl MomentMatrices {
    pub fn plain(kernel: KernelKind, p: usize) -> Result<Self> {
        Ok(Self { p, table: MomentTable::plain(kernel, 2 * p + 3)? })
    }

    /// Moments of `K† = K^c`.
    pub fn dagger(kernel: KernelKind, p: usize, c: usize) -> Result<Self> {
        Ok(Self { p, table: MomentTable::dagger(kernel, 2 * p + 3, c as u32)? })
    }

    pub fn mu(&self, l: usize) -> f64 {
        self.table.mu[l]
    }

    /// `μ*_ℓ = (μ_ℓ, ..., μ_{ℓ+p})`
    pub fn mu_star(&self, l: usize) -> Vec<f64> {
        (l..=l + self.p).map(|k| self.table.mu[k]).collect()
    }

    /// `μ̃_ℓ = [μ_{ℓ1+ℓ2+ℓ}]`
    pub fn mu_tilde(&self, l: usize) -> Matrix {
        Matrix::from_fn(self.p + 1, self.p + 1, |i, j| self.table.mu[i + j + l])
    }

    /// `ν̃_0 = [ν_{ℓ1+ℓ2}]`
    pub fn nu_tilde(&self) -> Matrix {
        Matrix::from_fn(self.p + 1, self.p + 1, |i, j| self.table.nu[i + j])
    }

    /// `e₁ᵀ μ̃₀⁻¹ ν̃₀ μ̃₀⁻¹ e₁`
    pub fn sandwich(&self) -> Result<f64> {
        let inv = checked_inverse(&self.mu_tilde(0))?;
        Ok((&(&inv * &self.nu_tilde()) * &inv)[(0, 0)])
    }
}

fn checked_inverse(m: &Matrix) -> Result<Matrix> {
    let lu = m.lu().ok_or(Error::SingularMomentMatrix)?;
    if !(lu.rcond(m.norm_one()) >= MOMENT_RCOND_MIN) {
        return Err(Error::SingularMomentMatrix);
    }
    Ok(lu.inverse())
}

fn e1_dot(v: &[f64]) -> f64 {
    v[0]
}

#[derive(Debug, Clone, PartialEq)]
pub enum VarianceTerm {
    /// Approximate conditional variance.
    Value(f64),
    /// Only the rate is available.
    Order(String),
}

impl VarianceTerm {
    pub fn value(&self) -> Option<f64> {
        match self {
            Self::Value(v) => Some(*v),
            Self::Order(_) => None,
        }
    }
}

impl fmt::Display for VarianceTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Value(v) => write!(f, "{v}"),
            Self::Order(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticSummary {
    pub estimator: EstimatorTag,
    pub x: f64,
    pub p: usize,
    pub h: f64,
    /// Part of the bias that does not vanish as `h → 0`.
    pub persistent_bias: f64,
    /// All displayed bias terms, persistent part included.
    pub leading_bias: f64,
    /// Local-constant closed form, when one exists.
    pub closed_form_bias: Option<f64>,
    pub variance: VarianceTerm,
    pub notes: Vec<String>,
}

fn check_h(h: f64) -> Result<()> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::NonPositiveBandwidth(h));
    }
    Ok(())
}

/// Bias shared by `M0`, `M3` and the homogeneous-design estimators:
/// `h^{p+1} β_{p+1} e₁ᵀμ̃₀⁻¹μ*_{p+1}
///  + h^{p+2} f⁻¹ [(β_{p+2} f + β_{p+1} f') e₁ᵀμ̃₀⁻¹μ*_{p+2} - β_{p+1} f' e₁ᵀμ̃₀⁻¹μ̃₁μ̃₀⁻¹μ*_{p+1}]`.
pub fn individual_bias(mm: &MomentMatrices, beta: &[f64], density: [f64; 3], h: f64) -> Result<f64> {
    let p = mm.p;
    let [f, f1, _] = density;
    let inv = checked_inverse(&mm.mu_tilde(0))?;
    let a_next = inv.mul_vec(&mm.mu_star(p + 1));
    let a_next2 = inv.mul_vec(&mm.mu_star(p + 2));
    let sandwich = inv.mul_vec(&mm.mu_tilde(1).mul_vec(&a_next));
    let (b1, b2) = (beta[p + 1], beta[p + 2]);
    let lead = h.powi(p as i32 + 1) * b1 * e1_dot(&a_next);
    let corr = h.powi(p as i32 + 2) / f * ((b2 * f + b1 * f1) * e1_dot(&a_next2) - b1 * f1 * e1_dot(&sandwich));
    Ok(lead + corr)
}

fn n_check(n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(n as f64)
}

/// Classical local polynomial fit on `N` individuals.
pub fn m0_asymptotics(ctx: &TheoryContext, x: f64, p: usize, h: f64, n: usize) -> Result<AsymptoticSummary> {
    check_h(h)?;
    let n = n_check(n)?;
    let density = ctx.density(x)?;
    let mm = MomentMatrices::plain(ctx.kernel, p)?;
    let beta = ctx.mean.taylor(x, p + 3);
    let bias = individual_bias(&mm, &beta, density, h)?;
    let variance = ctx.sigma2.eval(x) / (n * h * density[0]) * mm.sandwich()?;
    Ok(AsymptoticSummary {
        estimator: EstimatorTag::M0,
        x,
        p,
        h,
        persistent_bias: 0.0,
        leading_bias: bias,
        closed_form_bias: None,
        variance: VarianceTerm::Value(variance),
        notes: Vec::new(),
    })
}

/// Ingredients of the average-weighted expansion under random pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct AverageWeightedTerms {
    pub m0: Matrix,
    pub m1: Matrix,
    pub m2: Matrix,
    pub l0: Vec<f64>,
    pub l1: Vec<f64>,
    pub l2: Vec<f64>,
    pub l3: Vec<f64>,
}

pub fn average_weighted_terms(ctx: &TheoryContext, x: f64, p: usize) -> Result<AverageWeightedTerms> {
    let t = pool_constants(&ctx.pool_sizes)?;
    let mm = MomentMatrices::plain(ctx.kernel, p)?;
    let cov = covariate_moments(ctx, x, 2 * p)?;
    let rem = remainder_moments(ctx, x, p, p)?;
    let [f, f1, f2] = ctx.law.density_derivatives(x);
    let beta = ctx.mean.taylor(x, p + 3);
    let (t10, t20, t21, t22) = (t.t(1, 0), t.t(2, 0), t.t(2, 1), t.t(2, 2));
    let mu2 = mm.mu(2);
    let dim = p + 1;

    let ds = cov.delta_star(p);
    let dt = cov.delta_tilde(p);
    let dd = Matrix::outer(&ds, &ds);
    let cross = |l: usize| {
        let ms = mm.mu_star(l);
        &Matrix::outer(&ds, &ms) + &Matrix::outer(&ms, &ds)
    };

    let m0 = &(&mm.mu_tilde(0).scale(t20) + &(&dt + &cross(0)).scale(t21)) + &dd.scale(t22);
    let m1 = &mm.mu_tilde(1).scale(t20) + &cross(1).scale(t21);
    let m2 = &(&mm.mu_tilde(2).scale(t20) + &(&dt.scale(mu2) + &cross(2)).scale(t21)) + &dd.scale(t22 * mu2);

    let r0 = rem.r[0];
    let rs = rem.r_star();
    let unit = |i: usize| -> Vec<f64> { (0..dim).map(|k| if k == i { 1.0 } else { 0.0 }).collect() };
    let l0: Vec<f64> = (0..dim).map(|i| t21 * (r0 * unit(0)[i] + rs[i]) + t22 * r0 * ds[i]).collect();
    let mut l1 = vec![0.0; dim];
    l1[0] = t10 * (if p == 0 { beta[1] * f1 } else { 0.0 } + if p <= 1 { beta[2] * f } else { 0.0 });
    let mut l2 = vec![0.0; dim];
    l2[0] = t21 * r0 * 0.5 * f2;
    if p >= 1 {
        l2[1] = t21 * r0 * f1;
    }
    if p >= 2 {
        l2[2] = t21 * r0 * f;
    }
    let l3: Vec<f64> = (0..dim).map(|i| t21 * rs[i] + t22 * r0 * ds[i]).collect();
    Ok(AverageWeightedTerms { m0, m1, m2, l0, l1, l2, l3 })
}

/// Average-weighted estimator under random pooling.
///
/// `bias = e₁ᵀM₀⁻¹[L₀ - h (f'/f) M₁M₀⁻¹L₀
///   + h² {(f'/f)² M₁M₀⁻¹M₁M₀⁻¹L₀ - ½ (f''/f) M₂M₀⁻¹L₀ + f⁻¹ μ₂ (L₁ + L₂ + ½ f'' L₃)}]`,
/// with persistent part `e₁ᵀM₀⁻¹L₀`. For `p = 0` the closed form
/// `t₁₁ E{m(X) - m(x)} + t₁₀ h² μ₂ (β₁ f'/f + β₂)` is reported as well.
pub fn m1_random_asymptotics(ctx: &TheoryContext, x: f64, p: usize, h: f64) -> Result<AsymptoticSummary> {
    check_h(h)?;
    let [f, f1, f2] = ctx.density(x)?;
    let terms = average_weighted_terms(ctx, x, p)?;
    let mu2 = MomentMatrices::plain(ctx.kernel, p)?.mu(2);
    let inv = checked_inverse(&terms.m0)?;

    let a = inv.mul_vec(&terms.l0);
    let m1a = terms.m1.mul_vec(&a);
    let m1_inv_m1a = terms.m1.mul_vec(&inv.mul_vec(&m1a));
    let m2a = terms.m2.mul_vec(&a);
    let ratio = f1 / f;
    let inner: Vec<f64> = (0..=p)
        .map(|i| {
            let second = ratio * ratio * m1_inv_m1a[i] - 0.5 * (f2 / f) * m2a[i]
                + mu2 / f * (terms.l1[i] + terms.l2[i] + 0.5 * f2 * terms.l3[i]);
            terms.l0[i] - h * ratio * m1a[i] + h * h * second
        })
        .collect();
    let persistent = e1_dot(&a);
    let leading = e1_dot(&inv.mul_vec(&inner));

    let closed_form = if p == 0 {
        let t = pool_constants(&ctx.pool_sizes)?;
        let beta = ctx.mean.taylor(x, 2);
        let shift = ctx.expect(|s| ctx.mean.eval(s))? - ctx.mean.eval(x);
        Some(t.t(1, 1) * shift + t.t(1, 0) * h * h * mu2 * (beta[1] * ratio + beta[2]))
    } else {
        None
    };
    Ok(AsymptoticSummary {
        estimator: EstimatorTag::M1,
        x,
        p,
        h,
        persistent_bias: persistent,
        leading_bias: leading,
        closed_form_bias: closed_form,
        variance: VarianceTerm::Order("O(c/(N*h))".into()),
        notes: vec!["random pooling; stochastic term sqrt(c)*O_P(1/sqrt(N*h))".into()],
    })
}

/// Product-weighted estimator under random pooling with common pool size `c`.
pub fn m2_random_bias(ctx: &TheoryContext, x: f64, p: usize, h: f64, c: usize) -> Result<AsymptoticSummary> {
    check_h(h)?;
    if c == 0 {
        return Err(Error::InvalidPoolSize);
    }
    let [f, f1, _] = ctx.density(x)?;
    let mm = MomentMatrices::plain(ctx.kernel, p)?;
    let beta = ctx.mean.taylor(x, p + 3);
    let k = (c - 1) as f64;
    let m0s = mm.mu_star(0);
    let m1s = mm.mu_star(1);
    let a = &mm.mu_tilde(0) + &Matrix::outer(&m0s, &m0s).scale(k);
    let b = |l: usize| -> Vec<f64> { mm.mu_star(l).iter().zip(&m0s).map(|(s, z)| s + k * mm.mu(l) * z).collect() };
    let b1 = &mm.mu_tilde(1) + &(&Matrix::outer(&m0s, &m1s) + &Matrix::outer(&m1s, &m0s)).scale(k);
    let inv = checked_inverse(&a)?;
    let a_next = inv.mul_vec(&b(p + 1));
    let a_next2 = inv.mul_vec(&b(p + 2));
    let sandwich = inv.mul_vec(&b1.mul_vec(&a_next));
    let (bp1, bp2) = (beta[p + 1], beta[p + 2]);
    let lead = h.powi(p as i32 + 1) * bp1 * e1_dot(&a_next);
    let corr = h.powi(p as i32 + 2) / f * ((bp2 * f + bp1 * f1) * e1_dot(&a_next2) - bp1 * f1 * e1_dot(&sandwich));
    Ok(AsymptoticSummary {
        estimator: EstimatorTag::M2,
        x,
        p,
        h,
        persistent_bias: 0.0,
        leading_bias: lead + corr,
        closed_form_bias: None,
        variance: VarianceTerm::Order("O(1/(J*h^c))".into()),
        notes: vec!["random pooling; variance constants not evaluated".into()],
    })
}

/// Marginal-integration estimator under random pooling on `N` individuals.
///
/// Bias equals the individual-data bias; the variance is
/// `{σ²(x) + σ̄² N⁻¹Σ_j c_j(c_j - 1)} / (N h f(x)) · e₁ᵀμ̃₀⁻¹ν̃₀μ̃₀⁻¹e₁`.
pub fn m3_random_asymptotics(ctx: &TheoryContext, x: f64, p: usize, h: f64, n: usize) -> Result<AsymptoticSummary> {
    let base = m0_asymptotics(ctx, x, p, h, n)?;
    let density = ctx.density(x)?;
    let mm = MomentMatrices::plain(ctx.kernel, p)?;
    let total: f64 = ctx.pool_sizes.iter().map(|&c| c as f64).sum();
    let excess: f64 = ctx.pool_sizes.iter().map(|&c| (c * (c - 1)) as f64).sum::<f64>() / total;
    let nf = n as f64;
    let variance = (ctx.sigma2.eval(x) + ctx.sigma2_bar()? * excess) / (nf * h * density[0]) * mm.sandwich()?;
    Ok(AsymptoticSummary {
        estimator: EstimatorTag::M3,
        variance: VarianceTerm::Value(variance),
        notes: vec!["random pooling".into()],
        ..base
    })
}

/// `M1` or `M2` under homogeneous pooling with common pool size `c`.
///
/// `M2` uses the moments of `K† = K^c`. Requires a compact kernel.
pub fn homogeneous_asymptotics(
    ctx: &TheoryContext,
    tag: EstimatorTag,
    x: f64,
    p: usize,
    h: f64,
    n: usize,
    c: usize,
) -> Result<AsymptoticSummary> {
    check_h(h)?;
    if !ctx.kernel.is_compact() {
        return Err(Error::UnsupportedKernel(ctx.kernel.name()));
    }
    if c == 0 {
        return Err(Error::InvalidPoolSize);
    }
    let nf = n_check(n)?;
    let mm = match tag {
        EstimatorTag::M1 => MomentMatrices::plain(ctx.kernel, p)?,
        EstimatorTag::M2 => MomentMatrices::dagger(ctx.kernel, p, c)?,
        other => {
            return Err(Error::InvalidArgument(format!("homogeneous-design theory covers m1 and m2, not {other}")))
        }
    };
    let density = ctx.density(x)?;
    let beta = ctx.mean.taylor(x, p + 3);
    let bias = individual_bias(&mm, &beta, density, h)?;
    let variance = ctx.sigma2.eval(x) / (nf * h * density[0]) * mm.sandwich()?;
    Ok(AsymptoticSummary {
        estimator: tag,
        x,
        p,
        h,
        persistent_bias: 0.0,
        leading_bias: bias,
        closed_form_bias: None,
        variance: VarianceTerm::Value(variance),
        notes: vec!["homogeneous pooling".into()],
    })
}

/// `{μ - m(x)}(c - 1)/N` with `μ = E m(X)`.
pub fn pseudo_mean_shift(ctx: &TheoryContext, x: f64, c: usize, n: usize) -> Result<f64> {
    if c == 0 {
        return Err(Error::InvalidPoolSize);
    }
    let nf = n_check(n)?;
    let mu = ctx.expect(|s| ctx.mean.eval(s))?;
    Ok((mu - ctx.mean.eval(x)) * (c as f64 - 1.0) / nf)
}
