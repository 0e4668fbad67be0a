//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by ingestion, model fitting, and sampling.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied setting is unusable (bad grid size, invalid prior
    /// constant, iteration counts that contradict each other, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data violate a documented contract.
    #[error("validation error: {0}")]
    Validation(String),

    /// The regression design matrix does not have full column rank.
    #[error("design matrix is rank deficient; near-collinear columns: {}", columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    /// An MCMC invariant failed mid-run; carries the sweep index and a dump
    /// of the last good state.
    #[error("chain invariant violated at sweep {sweep}: {message}")]
    ChainInvariant { sweep: usize, message: String },

    /// A linear solve or other numeric kernel failed beyond recovery.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Input file could not be read.
    #[error("input error: {0}")]
    Io(#[from] std::io::Error),

    /// Input CSV is malformed (wrong header, unparseable cell, ...).
    #[error("malformed CSV input: {0}")]
    Csv(String),
}

pub type Result<T> = std::result::Result<T, Error>;
