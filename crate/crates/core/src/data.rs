//! Individual and pooled datasets, the two pooling designs, and ingestion of
//! externally supplied pooled data.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unpooled `(x, y)` records.
#[derive(Debug, Clone, PartialEq)]
pub struct IndividualDataset {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl IndividualDataset {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::InvalidArgument(format!(
                "covariate and response lengths differ ({} vs {})",
                x.len(),
                y.len()
            )));
        }
        if x.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if let Some(i) = x.iter().zip(&y).position(|(a, b)| !a.is_finite() || !b.is_finite()) {
            return Err(Error::NonFiniteValue { context: format!("record {i}") });
        }
        Ok(Self { x, y })
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let (x, y) = pairs.into_iter().unzip();
        Self::new(x, y)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.x.iter().copied().zip(self.y.iter().copied())
    }

    /// Applies `y -> a y + b` to every response.
    pub fn map_responses(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.x.clone(), self.y.iter().map(|&v| f(v)).collect())
    }
}

/// One assay: the member covariates and their averaged response.
#[derive(Debug, Clone, PartialEq)]
pub struct Pool {
    covariates: Vec<f64>,
    response: f64,
}

impl Pool {
    pub fn new(covariates: Vec<f64>, response: f64) -> Result<Self> {
        if covariates.is_empty() {
            return Err(Error::InvalidPoolSize);
        }
        if !response.is_finite() || covariates.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { context: "pool".into() });
        }
        Ok(Self { covariates, response })
    }

    pub fn size(&self) -> usize {
        self.covariates.len()
    }

    pub fn covariates(&self) -> &[f64] {
        &self.covariates
    }

    pub fn response(&self) -> f64 {
        self.response
    }

    pub fn mean_covariate(&self) -> f64 {
        self.covariates.iter().sum::<f64>() / self.size() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PoolingDesign {
    Random,
    Homogeneous,
    External,
}

impl fmt::Display for PoolingDesign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PoolingDesign::Random => "random",
            PoolingDesign::Homogeneous => "homogeneous",
            PoolingDesign::External => "external",
        })
    }
}

impl FromStr for PoolingDesign {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "random" => Ok(PoolingDesign::Random),
            "homogeneous" | "sorted" => Ok(PoolingDesign::Homogeneous),
            "external" => Ok(PoolingDesign::External),
            other => Err(Error::InvalidArgument(format!("unknown pooling design `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PooledDataset {
    pools: Vec<Pool>,
    ids: Vec<String>,
    design: PoolingDesign,
}

impl PooledDataset {
    pub fn new(pools: Vec<Pool>, design: PoolingDesign) -> Result<Self> {
        let ids = (1..=pools.len()).map(|i| i.to_string()).collect();
        Self::with_ids(pools, ids, design)
    }

    pub fn with_ids(pools: Vec<Pool>, ids: Vec<String>, design: PoolingDesign) -> Result<Self> {
        if pools.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if ids.len() != pools.len() {
            return Err(Error::InvalidArgument("one id per pool is required".into()));
        }
        if design == PoolingDesign::Homogeneous {
            let sorted = pools.windows(2).all(|w| {
                let hi = w[0].covariates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lo = w[1].covariates.iter().copied().fold(f64::INFINITY, f64::min);
                hi <= lo
            });
            if !sorted {
                return Err(Error::InvalidArgument("homogeneous pools must be sorted chunks".into()));
            }
        }
        Ok(Self { pools, ids, design })
    }

    pub fn pools(&self) -> &[Pool] {
        &self.pools
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn design(&self) -> PoolingDesign {
        self.design
    }

    pub fn num_pools(&self) -> usize {
        self.pools.len()
    }

    /// Total number of individuals, `N = Σ c_j`.
    pub fn num_individuals(&self) -> usize {
        self.pools.iter().map(Pool::size).sum()
    }

    pub fn all_covariates(&self) -> impl Iterator<Item = f64> + '_ {
        self.pools.iter().flat_map(|p| p.covariates.iter().copied())
    }

    /// Same pools in a different order (`order[i]` is the source index).
    pub fn reordered(&self, order: &[usize]) -> Result<Self> {
        let pools = order.iter().map(|&i| self.pools[i].clone()).collect();
        let ids = order.iter().map(|&i| self.ids[i].clone()).collect();
        let design = if self.design == PoolingDesign::Homogeneous {
            PoolingDesign::External
        } else {
            self.design
        };
        Self::with_ids(pools, ids, design)
    }

    /// Applies `z -> f(z)` to every pooled response.
    pub fn map_responses(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let pools = self
            .pools
            .iter()
            .map(|p| Pool::new(p.covariates.clone(), f(p.response)))
            .collect::<Result<_>>()?;
        Self::with_ids(pools, self.ids.clone(), self.design)
    }

    /// Shifts every covariate by `s`.
    pub fn shift_covariates(&self, s: f64) -> Result<Self> {
        let pools = self
            .pools
            .iter()
            .map(|p| Pool::new(p.covariates.iter().map(|v| v + s).collect(), p.response))
            .collect::<Result<_>>()?;
        Self::with_ids(pools, self.ids.clone(), self.design)
    }

    /// Every individual as its own pool of size one.
    pub fn singletons(data: &IndividualDataset) -> Self {
        let pools = data
            .iter()
            .map(|(x, y)| Pool { covariates: vec![x], response: y })
            .collect();
        Self::new(pools, PoolingDesign::External).expect("individual dataset is nonempty")
    }
}

/// Chunks records (already in pool order) into consecutive groups of `c`.
fn chunk_into_pools(x: &[f64], y: &[f64], order: &[usize], c: usize) -> Vec<Pool> {
    order
        .chunks(c)
        .map(|chunk| {
            let covariates = chunk.iter().map(|&i| x[i]).collect();
            let response = chunk.iter().map(|&i| y[i]).sum::<f64>() / chunk.len() as f64;
            Pool { covariates, response }
        })
        .collect()
}

/// Fails unless `N` is a multiple of `c`.
pub fn check_divisible(n: usize, c: usize) -> Result<()> {
    if c == 0 || !n.is_multiple_of(c) {
        return Err(Error::InvalidArgument(format!("N = {n} is not a multiple of pool size {c}")));
    }
    Ok(())
}

/// Random pooling: uniform permutation, then consecutive chunks of size `c`
/// (the last pool holds the remainder when `c` does not divide `N`).
pub fn pool_random<R: Rng + ?Sized>(data: &IndividualDataset, c: usize, rng: &mut R) -> Result<PooledDataset> {
    if c == 0 {
        return Err(Error::InvalidPoolSize);
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    PooledDataset::new(chunk_into_pools(&data.x, &data.y, &order, c), PoolingDesign::Random)
}

/// Homogeneous pooling: stable sort on the covariate, then consecutive chunks.
pub fn pool_homogeneous(data: &IndividualDataset, c: usize) -> Result<PooledDataset> {
    if c == 0 {
        return Err(Error::InvalidPoolSize);
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| data.x[a].total_cmp(&data.x[b]));
    PooledDataset::new(chunk_into_pools(&data.x, &data.y, &order, c), PoolingDesign::Homogeneous)
}

/// Builds a dataset from long-format member rows `(pool_id, x)` and a
/// response table `(pool_id, z)`. Pools appear in the order their ids first
/// occur among the member rows.
pub fn ingest_pooled(members: &[(String, f64)], responses: &[(String, f64)]) -> Result<PooledDataset> {
    let mut z_by_id: HashMap<&str, f64> = HashMap::with_capacity(responses.len());
    for (id, z) in responses {
        if !z.is_finite() {
            return Err(Error::NonFiniteValue { context: format!("response of pool `{id}`") });
        }
        if z_by_id.insert(id.as_str(), *z).is_some() {
            return Err(Error::Parse(format!("pool `{id}` has more than one response")));
        }
    }
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut ids: Vec<String> = Vec::new();
    let mut covariates: Vec<Vec<f64>> = Vec::new();
    for (id, x) in members {
        if !x.is_finite() {
            return Err(Error::NonFiniteValue { context: format!("covariate in pool `{id}`") });
        }
        let slot = *index.entry(id.as_str()).or_insert_with(|| {
            ids.push(id.clone());
            covariates.push(Vec::new());
            ids.len() - 1
        });
        covariates[slot].push(*x);
    }
    if let Some((id, _)) = responses.iter().find(|(id, _)| !index.contains_key(id.as_str())) {
        return Err(Error::OrphanPool(id.clone()));
    }
    let pools = ids
        .iter()
        .zip(covariates)
        .map(|(id, cov)| {
            let z = *z_by_id.get(id.as_str()).ok_or_else(|| Error::OrphanPool(id.clone()))?;
            Pool::new(cov, z)
        })
        .collect::<Result<Vec<_>>>()?;
    PooledDataset::with_ids(pools, ids, PoolingDesign::External)
}
