#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod budget;
pub mod cavity;
pub mod config;
pub mod dispersion;
pub mod error;
pub mod montecarlo;
pub mod reproduce;
pub mod spdc;
pub mod units;

pub use error::{Error, Result};
