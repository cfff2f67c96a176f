use thiserror::Error;

use crate::forecast::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("time index {index} is outside the series range 1..={len}")]
    Range { index: i64, len: usize },

    #[error("season '{0}' is not defined for this series")]
    UnknownSeason(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("reference errors sum to zero; relative measure is undefined")]
    DegenerateReference,

    #[error("loss differential has non-positive long-run variance; test is inapplicable")]
    DegenerateVariance,

    #[error("training failed: {0}")]
    Training(String),

    #[error("target at step {step} is beyond the supported horizon of {max}")]
    Horizon { step: i64, max: usize },

    #[error("bin grids differ between forecasts")]
    Grid,

    #[error("invalid forecast: {}", summarize(.0))]
    InvalidForecast(Vec<Violation>),

    #[error("reporting completeness of zero makes the true count unidentifiable")]
    Unidentifiable,

    #[error("no finalized counts in the training events; completeness profile undefined")]
    DegenerateProfile,

    #[error("unknown {kind} '{name}'")]
    UnknownName { kind: &'static str, name: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn summarize(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| v.message.as_str())
        .collect::<Vec<_>>()
        .join("; ")
}
