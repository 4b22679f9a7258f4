//! Nonparametric regression with pooled (aggregated) responses.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bandwidth;
pub mod data;
pub mod error;
pub mod estimators;
pub mod io;
pub mod kernels;
pub mod linalg;
pub mod models;
pub mod quadrature;
pub mod simulation;
pub mod stats;
pub mod theory;

pub use error::{Error, Result};
