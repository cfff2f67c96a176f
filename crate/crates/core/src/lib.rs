//! Probabilistic forecasting and forecast evaluation for infectious-disease
//! surveillance time series.

pub mod cli;
pub mod ensemble;
pub mod error;
pub mod forecast;
pub mod harness;
pub mod ingest;
pub mod models;
pub mod nowcast;
pub mod scoring;
pub mod series;

pub use error::{Error, Result};
