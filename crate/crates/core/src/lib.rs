//! Per-field feature selection for embedding + MLP click-through models.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod controller;
pub mod data;
pub mod diff;
pub mod error;
pub mod ledger;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod retrain;
pub mod search;
pub use error::{Error, Result};
