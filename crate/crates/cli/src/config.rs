//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use poolsmooth::bandwidth::{geometric_grid, CvOptions, PseudoCriterion};
use poolsmooth::data::PoolingDesign;
use poolsmooth::estimators::{linear_grid, EstimatorTag, FitConfig, DEFAULT_RCOND_MIN};
use poolsmooth::io::format_f64;
use poolsmooth::kernels::KernelKind;
use poolsmooth::models::{CovariateLaw, MeanFunction, NoiseVariance};
use poolsmooth::simulation::{BandwidthPolicy, Dgp, IseReference};

use crate::CliError;

const KEYS: &[&str] = &[
    "dgp",
    "mean",
    "covariate",
    "sigma",
    "N",
    "c",
    "design",
    "estimators",
    "p",
    "kernel",
    "h",
    "cv",
    "cv_criterion",
    "cv_grid_min",
    "cv_grid_max",
    "cv_grid_count",
    "grid_min",
    "grid_max",
    "grid_count",
    "replications",
    "bootstrap_resamples",
    "seed",
    "trim",
    "ise_reference",
    "rcond_min",
    "output_dir",
    "individual_data",
    "pools_data",
    "members_data",
];

/// Mean function written as `poly:a0,a1,...` or a built-in name `D1`..`D4`.
#[derive(Debug, Clone, PartialEq)]
pub enum MeanSpec {
    Builtin(String),
    Polynomial(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum LawSpec {
    Uniform(f64, f64),
    Normal(f64, f64),
    Mixture,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dgp: String,
    pub mean: Option<MeanSpec>,
    pub covariate: Option<LawSpec>,
    pub sigma: Option<f64>,
    pub n: usize,
    pub c: usize,
    pub design: PoolingDesign,
    pub estimators: Vec<EstimatorTag>,
    pub p: usize,
    pub kernel: KernelKind,
    pub h: Option<f64>,
    pub cv: bool,
    pub cv_criterion: PseudoCriterion,
    pub cv_grid: Option<(f64, f64, usize)>,
    pub grid: (f64, f64, usize),
    pub replications: usize,
    pub bootstrap_resamples: usize,
    pub seed: u64,
    pub trim: bool,
    pub ise_reference: IseReference,
    pub rcond_min: f64,
    pub output_dir: PathBuf,
    pub individual_data: Option<PathBuf>,
    pub pools_data: Option<PathBuf>,
    pub members_data: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dgp: "D2".into(),
            mean: None,
            covariate: None,
            sigma: None,
            n: 600,
            c: 2,
            design: PoolingDesign::Random,
            estimators: EstimatorTag::ALL.to_vec(),
            p: 1,
            kernel: KernelKind::Epanechnikov,
            h: None,
            cv: false,
            cv_criterion: PseudoCriterion::Prss,
            cv_grid: None,
            grid: (-1.0, 1.0, 21),
            replications: 500,
            bootstrap_resamples: 200,
            seed: 1,
            trim: false,
            ise_reference: IseReference::Observed,
            rcond_min: DEFAULT_RCOND_MIN,
            output_dir: PathBuf::from("out"),
            individual_data: None,
            pools_data: None,
            members_data: None,
        }
    }
}

fn bad(key: &str, value: &str, why: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("key `{key}`: cannot use `{value}`: {why}"))
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| bad(key, value, e))
}

fn finite(key: &str, value: &str) -> Result<f64, CliError> {
    let v: f64 = num(key, value)?;
    if !v.is_finite() {
        return Err(bad(key, value, "not a finite number"));
    }
    Ok(v)
}

fn flag(key: &str, value: &str) -> Result<bool, CliError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(bad(key, value, "expected true or false")),
    }
}

fn number_list(key: &str, value: &str) -> Result<Vec<f64>, CliError> {
    value.split(',').map(|v| finite(key, v.trim())).collect()
}

fn parse_mean(value: &str) -> Result<MeanSpec, CliError> {
    if let Some(rest) = value.strip_prefix("poly:") {
        return Ok(MeanSpec::Polynomial(number_list("mean", rest)?));
    }
    let up = value.to_ascii_uppercase();
    match up.as_str() {
        "D1" | "D2" | "D3" | "D4" => Ok(MeanSpec::Builtin(up)),
        _ => Err(bad("mean", value, "expected D1..D4 or poly:a0,a1,...")),
    }
}

fn parse_law(value: &str) -> Result<LawSpec, CliError> {
    let lower = value.to_ascii_lowercase();
    if lower == "mixture" {
        return Ok(LawSpec::Mixture);
    }
    let (name, args) = lower.split_once(':').ok_or_else(|| bad("covariate", value, "expected uniform:a,b, normal:m,s or mixture"))?;
    let args = number_list("covariate", args)?;
    match (name, args.as_slice()) {
        ("uniform", [a, b]) => Ok(LawSpec::Uniform(*a, *b)),
        ("normal", [m, s]) => Ok(LawSpec::Normal(*m, *s)),
        _ => Err(bad("covariate", value, "expected uniform:a,b, normal:m,s or mixture")),
    }
}

fn parse_grid(key: &str, value: &str) -> Result<usize, CliError> {
    let n: usize = num(key, value)?;
    if n == 0 {
        return Err(bad(key, value, "must be at least 1"));
    }
    Ok(n)
}

impl RunConfig {
    /// Parses a configuration file body; unspecified keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut raw: BTreeMap<String, String> = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(CliError::Config(format!("line {}: unknown key `{key}`", lineno + 1)));
            }
            if raw.insert(key.to_string(), value.to_string()).is_some() {
                return Err(CliError::Config(format!("line {}: key `{key}` given twice", lineno + 1)));
            }
        }
        let mut cfg = Self::default();
        let mut cv_grid: [Option<String>; 3] = Default::default();
        for (key, value) in &raw {
            let v = value.as_str();
            match key.as_str() {
                "dgp" => {
                    let up = v.to_ascii_uppercase();
                    if !matches!(up.as_str(), "D1" | "D2" | "D3" | "D4" | "CUSTOM") {
                        return Err(bad(key, v, "expected D1, D2, D3, D4 or custom"));
                    }
                    cfg.dgp = up;
                }
                "mean" => cfg.mean = Some(parse_mean(v)?),
                "covariate" => cfg.covariate = Some(parse_law(v)?),
                "sigma" => {
                    let s = finite(key, v)?;
                    if s < 0.0 {
                        return Err(bad(key, v, "must be non-negative"));
                    }
                    cfg.sigma = Some(s);
                }
                "N" => cfg.n = num(key, v)?,
                "c" => cfg.c = num(key, v)?,
                "design" => cfg.design = v.parse().map_err(|e| bad(key, v, e))?,
                "estimators" => {
                    cfg.estimators = v
                        .split(',')
                        .map(|t| t.parse::<EstimatorTag>().map_err(|e| bad(key, v, e)))
                        .collect::<Result<_, _>>()?;
                }
                "p" => cfg.p = num(key, v)?,
                "kernel" => cfg.kernel = v.parse().map_err(|e| bad(key, v, e))?,
                "h" => cfg.h = Some(finite(key, v)?),
                "cv" => cfg.cv = flag(key, v)?,
                "cv_criterion" => cfg.cv_criterion = v.parse().map_err(|e| bad(key, v, e))?,
                "cv_grid_min" => cv_grid[0] = Some(v.to_string()),
                "cv_grid_max" => cv_grid[1] = Some(v.to_string()),
                "cv_grid_count" => cv_grid[2] = Some(v.to_string()),
                "grid_min" => cfg.grid.0 = finite(key, v)?,
                "grid_max" => cfg.grid.1 = finite(key, v)?,
                "grid_count" => cfg.grid.2 = parse_grid(key, v)?,
                "replications" => cfg.replications = num(key, v)?,
                "bootstrap_resamples" => cfg.bootstrap_resamples = num(key, v)?,
                "seed" => cfg.seed = num(key, v)?,
                "trim" => cfg.trim = flag(key, v)?,
                "ise_reference" => {
                    cfg.ise_reference = match v.to_ascii_lowercase().as_str() {
                        "observed" => IseReference::Observed,
                        "true_mean" => IseReference::TrueMean,
                        _ => return Err(bad(key, v, "expected observed or true_mean")),
                    }
                }
                "rcond_min" => cfg.rcond_min = finite(key, v)?,
                "output_dir" => cfg.output_dir = PathBuf::from(v),
                "individual_data" => cfg.individual_data = Some(PathBuf::from(v)),
                "pools_data" => cfg.pools_data = Some(PathBuf::from(v)),
                "members_data" => cfg.members_data = Some(PathBuf::from(v)),
                _ => unreachable!("key list checked above"),
            }
        }
        cfg.cv_grid = match cv_grid {
            [None, None, None] => None,
            [Some(lo), Some(hi), Some(n)] => {
                Some((finite("cv_grid_min", &lo)?, finite("cv_grid_max", &hi)?, parse_grid("cv_grid_count", &n)?))
            }
            _ => return Err(CliError::Config("keys `cv_grid_min`, `cv_grid_max`, `cv_grid_count` must be given together".into())),
        };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), CliError> {
        if self.c == 0 {
            return Err(bad("c", "0", "pool size must be at least 1"));
        }
        if self.n == 0 {
            return Err(bad("N", "0", "need at least one individual"));
        }
        if self.estimators.is_empty() {
            return Err(CliError::Config("key `estimators`: empty list".into()));
        }
        if self.pools_data.is_some() != self.members_data.is_some() {
            return Err(CliError::Config("keys `pools_data` and `members_data` must be given together".into()));
        }
        if self.grid.2 > 1 && !(self.grid.0 < self.grid.1) {
            return Err(CliError::Config("key `grid_max`: must exceed `grid_min`".into()));
        }
        if let Some((lo, hi, _)) = self.cv_grid {
            if !(lo > 0.0 && hi > lo) {
                return Err(CliError::Config("key `cv_grid_max`: need 0 < cv_grid_min < cv_grid_max".into()));
            }
        }
        if self.dgp == "CUSTOM" && (self.mean.is_none() || self.covariate.is_none() || self.sigma.is_none()) {
            return Err(CliError::Config("key `dgp`: custom needs `mean`, `covariate` and `sigma`".into()));
        }
        Ok(())
    }

    /// Data-generating process after applying `mean`, `covariate` and `sigma` overrides.
    pub fn dgp(&self) -> Result<Dgp, CliError> {
        let base: Option<Dgp> = if self.dgp == "CUSTOM" { None } else { Some(self.dgp.parse()?) };
        if self.mean.is_none() && self.covariate.is_none() && self.sigma.is_none() {
            return Ok(base.expect("custom is checked to carry overrides"));
        }
        let mean = match &self.mean {
            Some(MeanSpec::Builtin(name)) => name.parse::<Dgp>()?.mean,
            Some(MeanSpec::Polynomial(coef)) => MeanFunction::Polynomial(coef.clone()),
            None => base.as_ref().expect("checked").mean.clone(),
        };
        let law = match &self.covariate {
            Some(LawSpec::Uniform(a, b)) => CovariateLaw::Uniform { lower: *a, upper: *b },
            Some(LawSpec::Normal(m, s)) => CovariateLaw::Normal { mean: *m, sd: *s },
            Some(LawSpec::Mixture) => CovariateLaw::QuadraticUniformMixture,
            None => base.as_ref().expect("checked").law,
        };
        let sigma = match (self.sigma, &base) {
            (Some(s), _) => s,
            (None, Some(d)) => match d.noise {
                NoiseVariance::Constant(v) => v.sqrt(),
                NoiseVariance::Function(_) => unreachable!("built-in models are homoscedastic"),
            },
            (None, None) => unreachable!("checked"),
        };
        Ok(Dgp::custom(mean, sigma, law)?)
    }

    pub fn grid(&self) -> Vec<f64> {
        linear_grid(self.grid.0, self.grid.1, self.grid.2)
    }

    pub fn cv_options(&self) -> CvOptions {
        CvOptions {
            grid: self.cv_grid.map(|(lo, hi, n)| geometric_grid(lo, hi, n)),
            trim: self.trim,
            pseudo_criterion: self.cv_criterion,
        }
    }

    /// Fixed `h` unless `cv = true`.
    pub fn bandwidth_policy(&self) -> Result<BandwidthPolicy, CliError> {
        if self.cv {
            return Ok(BandwidthPolicy::CrossValidation(self.cv_options()));
        }
        self.h.map(BandwidthPolicy::Fixed).ok_or_else(|| CliError::Config("key `h`: required unless `cv = true`".into()))
    }

    pub fn require_h(&self) -> Result<f64, CliError> {
        self.h.ok_or_else(|| CliError::Config("key `h`: required for this command".into()))
    }

    /// Fit settings; `h` is a placeholder of 1 under cross-validation.
    pub fn fit_config(&self) -> Result<FitConfig, CliError> {
        let h = if self.cv { 1.0 } else { self.require_h()? };
        Ok(FitConfig::new(self.p, h)?.with_kernel(self.kernel).with_rcond_min(self.rcond_min)?)
    }

    /// Every effective value in the input format.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        line("dgp", self.dgp.clone());
        if let Some(m) = &self.mean {
            line(
                "mean",
                match m {
                    MeanSpec::Builtin(n) => n.clone(),
                    MeanSpec::Polynomial(c) => format!("poly:{}", join(c)),
                },
            );
        }
        if let Some(l) = &self.covariate {
            line(
                "covariate",
                match l {
                    LawSpec::Uniform(a, b) => format!("uniform:{}", join(&[*a, *b])),
                    LawSpec::Normal(m, s) => format!("normal:{}", join(&[*m, *s])),
                    LawSpec::Mixture => "mixture".into(),
                },
            );
        }
        if let Some(s) = self.sigma {
            line("sigma", format_f64(s));
        }
        line("N", self.n.to_string());
        line("c", self.c.to_string());
        line("design", self.design.to_string());
        line("estimators", self.estimators.iter().map(|t| t.name()).collect::<Vec<_>>().join(","));
        line("p", self.p.to_string());
        line("kernel", self.kernel.name().to_string());
        if let Some(h) = self.h {
            line("h", format_f64(h));
        }
        line("cv", self.cv.to_string());
        line("cv_criterion", self.cv_criterion.to_string());
        if let Some((lo, hi, n)) = self.cv_grid {
            line("cv_grid_min", format_f64(lo));
            line("cv_grid_max", format_f64(hi));
            line("cv_grid_count", n.to_string());
        }
        line("grid_min", format_f64(self.grid.0));
        line("grid_max", format_f64(self.grid.1));
        line("grid_count", self.grid.2.to_string());
        line("replications", self.replications.to_string());
        line("bootstrap_resamples", self.bootstrap_resamples.to_string());
        line("seed", self.seed.to_string());
        line("trim", self.trim.to_string());
        line(
            "ise_reference",
            match self.ise_reference {
                IseReference::Observed => "observed",
                IseReference::TrueMean => "true_mean",
            }
            .into(),
        );
        line("rcond_min", format_f64(self.rcond_min));
        line("output_dir", self.output_dir.display().to_string());
        for (k, v) in [
            ("individual_data", &self.individual_data),
            ("pools_data", &self.pools_data),
            ("members_data", &self.members_data),
        ] {
            if let Some(path) = v {
                line(k, path.display().to_string());
            }
        }
        out
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format_f64(*x)).collect::<Vec<_>>().join(",")
}
