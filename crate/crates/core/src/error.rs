use std::io;

use thiserror::Error;

/// Errors produced anywhere in the post-processing chain.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty request: {0}")]
    EmptyRequest(&'static str),

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate spectrum: {0}")]
    DegenerateSpectrum(String),

    #[error("frequency grids do not match ({0})")]
    GridMismatch(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("ill-conditioned equalizer design: {0}; try more taps or a narrower band")]
    IllConditioned(String),

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("fit did not converge after {iterations} iterations (gradient norm {gradient_norm:.3e})")]
    NonConvergence { iterations: usize, gradient_norm: f64 },

    #[error("size mismatch: expected {expected}, got {actual}")]
    SizeMismatch { expected: usize, actual: usize },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Broad classes used by the command line for its exit-code contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Numerical,
    Io,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::EmptyRequest(_)
            | Error::InvalidSpec(_)
            | Error::Domain(_)
            | Error::InvalidInput(_)
            | Error::GridMismatch(_)
            | Error::SizeMismatch { .. } => ErrorClass::Validation,
            Error::DegenerateSpectrum(_)
            | Error::Singular(_)
            | Error::IllConditioned(_)
            | Error::Optimization(_)
            | Error::NonConvergence { .. } => ErrorClass::Numerical,
            Error::Format(_) | Error::Io(_) | Error::Json(_) => ErrorClass::Io,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
