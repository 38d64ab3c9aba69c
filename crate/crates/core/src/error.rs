use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("projection matrix is rank deficient")]
    DegenerateMatrix,
    #[error("source positions coincide (baseline length {0:.3e} mm)")]
    DegenerateBaseline(f64),
    #[error("plane projects to the line at infinity")]
    LineAtInfinity,
    #[error("invalid Radon grid: {0}")]
    InvalidGrid(String),
    #[error("length mismatch: expected {expected}, got {actual} ({what})")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("query {q} outside spline domain [{lo}, {hi}]")]
    OutOfDomain { q: f64, lo: f64, hi: f64 },
    #[error("spline nodes must be strictly increasing and at least two")]
    NonMonotonicNodes,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("unknown phantom preset `{0}` (expected tibia-like, single-sphere or two-spheres)")]
    UnknownPreset(String),
    #[error("invalid scan geometry: {0}")]
    InvalidGeometry(String),
    #[error("reconstruction grid exceeds the field of view: {0}")]
    GridOutsideFov(String),
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch([usize; 3], [usize; 3]),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown scenario `{0}` (expected one of oop, ip, full)")]
    UnknownScenario(String),
    #[error("missing artifact {path}: {hint}")]
    MissingArtifact { path: PathBuf, hint: String },
    #[error("malformed file {path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// True for errors caused by bad user input (configuration, arguments,
    /// missing or malformed files) rather than by a failed computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::UnknownScenario(_)
                | Error::UnknownPreset(_)
                | Error::MissingArtifact { .. }
                | Error::Format { .. }
                | Error::InvalidGeometry(_)
                | Error::InvalidGrid(_)
                | Error::GridOutsideFov(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
