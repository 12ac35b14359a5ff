use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("reflection denominator vanishes at omega = {omega} ueV (|den| = {modulus:e})")]
    DegenerateDenominator { omega: f64, modulus: f64 },

    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),

    #[error("background fraction {b} too close to 1 (amplification {amplification:e} exceeds 1e6)")]
    BackgroundNotInvertible { b: f64, amplification: f64 },

    #[error("visibility baseline is not positive ({0})")]
    NonPositiveBaseline(f64),

    #[error("no background fraction reproduces visibility {observed}: intrinsic visibility is only {intrinsic}")]
    NoBackgroundSolution { observed: f64, intrinsic: f64 },

    #[error("no dip found: depth {depth:e} is below 3x residual scatter {scatter:e}")]
    NoDip { depth: f64, scatter: f64 },

    #[error("splitting not resolved: found {0} local minima")]
    UnresolvedSplitting(usize),

    #[error("invalid fit problem: {0}")]
    InvalidProblem(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
