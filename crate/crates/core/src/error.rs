use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("bandwidth must be positive and finite, got {0}")]
    InvalidBandwidth(f64),

    #[error("beta must be finite and greater than 1, got {0}")]
    InvalidBeta(f64),

    #[error("sample needs at least 2 observations, got {0}")]
    SampleTooSmall(usize),

    #[error("non-finite observation {value} at position {index}")]
    NonFiniteObservation { index: usize, value: f64 },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid quadrature spec: {0}")]
    InvalidQuadrature(String),

    #[error("integrand is not finite at x = {x} (value {value})")]
    NonFiniteIntegrand { x: f64, value: f64 },

    #[error("clipped density region carries {relative_mass:e} of the integral (limit 1e-10)")]
    ClippedMass { relative_mass: f64 },

    #[error("scale estimate is zero: sample is constant or degenerate")]
    DegenerateScale,

    #[error("fourth-derivative functional is zero, bandwidth is unbounded")]
    UnboundedBandwidth,

    #[error("estimate is non-positive everywhere at h = {0}, objective undefined")]
    DegenerateObjective(f64),

    #[error("invalid search: {0}")]
    InvalidSearch(String),

    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),

    #[error("no completed records for group {0}")]
    MissingGroup(String),

    #[error("{path}: {reason}")]
    Input { path: PathBuf, reason: String },

    #[error("row {row}: cannot parse {text:?} as a number")]
    ParseRow { row: u64, text: String },

    #[error("row {row}: value {value} is not finite")]
    NonFiniteRow { row: u64, value: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
