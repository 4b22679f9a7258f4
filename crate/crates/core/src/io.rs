//! CSV ingestion and export.
//!
//! Schemas (UTF-8, header row required):
//! * individual data: `x,y`
//! * pooled data: `pools.csv` with `pool_id,z` and `members.csv` with `pool_id,x`
//!
//! Numbers are written with 17 significant digits so a write/read cycle is
//! bit-exact.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::Deserialize;

use crate::data::{ingest_pooled, IndividualDataset, PooledDataset};
use crate::error::{Error, Result};

/// Formats a float with 17 significant digits; non-finite values become `NaN`.
pub fn format_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        "NaN".to_string()
    }
}

fn parse_f64(field: &str, context: &str) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("{context}: `{field}` is not a number")))?;
    if !v.is_finite() {
        return Err(Error::NonFiniteValue { context: context.to_string() });
    }
    Ok(v)
}

#[derive(Deserialize)]
struct XyRow {
    x: String,
    y: String,
}

#[derive(Deserialize)]
struct ResponseRow {
    pool_id: String,
    z: String,
}

#[derive(Deserialize)]
struct MemberRow {
    pool_id: String,
    x: String,
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(r)
}

pub fn read_individual<R: Read>(r: R) -> Result<IndividualDataset> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (i, row) in reader(r).deserialize::<XyRow>().enumerate() {
        let row = row?;
        x.push(parse_f64(&row.x, &format!("row {}", i + 1))?);
        y.push(parse_f64(&row.y, &format!("row {}", i + 1))?);
    }
    IndividualDataset::new(x, y)
}

pub fn read_pooled<R1: Read, R2: Read>(pools: R1, members: R2) -> Result<PooledDataset> {
    let responses = reader(pools)
        .deserialize::<ResponseRow>()
        .map(|row| {
            let row = row?;
            let z = parse_f64(&row.z, &format!("pool `{}`", row.pool_id))?;
            Ok((row.pool_id, z))
        })
        .collect::<Result<Vec<_>>>()?;
    let member_rows = reader(members)
        .deserialize::<MemberRow>()
        .map(|row| {
            let row = row?;
            let x = parse_f64(&row.x, &format!("member of pool `{}`", row.pool_id))?;
            Ok((row.pool_id, x))
        })
        .collect::<Result<Vec<_>>>()?;
    if member_rows.is_empty() && responses.is_empty() {
        return Err(Error::EmptyDataset);
    }
    ingest_pooled(&member_rows, &responses)
}

pub fn read_individual_file(path: &Path) -> Result<IndividualDataset> {
    read_individual(File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?)
}

pub fn read_pooled_files(pools: &Path, members: &Path) -> Result<PooledDataset> {
    let open = |p: &Path| File::open(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())));
    read_pooled(open(pools)?, open(members)?)
}

pub fn write_individual<W: Write>(data: &IndividualDataset, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["x", "y"])?;
    for (x, y) in data.iter() {
        out.write_record([format_f64(x), format_f64(y)])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_pooled<W1: Write, W2: Write>(data: &PooledDataset, pools: W1, members: W2) -> Result<()> {
    let mut p = csv::Writer::from_writer(pools);
    let mut m = csv::Writer::from_writer(members);
    p.write_record(["pool_id", "z"])?;
    m.write_record(["pool_id", "x"])?;
    for (id, pool) in data.ids().iter().zip(data.pools()) {
        p.write_record([id.clone(), format_f64(pool.response())])?;
        for &x in pool.covariates() {
            m.write_record([id.clone(), format_f64(x)])?;
        }
    }
    p.flush()?;
    m.flush()?;
    Ok(())
}

pub fn write_pooled_files(data: &PooledDataset, pools: &Path, members: &Path) -> Result<()> {
    write_pooled(data, File::create(pools)?, File::create(members)?)
}
