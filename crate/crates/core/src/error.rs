use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = LslError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LslError {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: String,
        found: String,
    },

    /// A matrix that must be positive definite was not. Usually means the
    /// Gramian truncation threshold is too small for the data.
    #[error("breakdown in {context}: eigenvalue {eigenvalue:e} is not positive")]
    Breakdown { context: &'static str, eigenvalue: f64 },

    #[error("block Lanczos breakdown at step {step}: normalization block eigenvalue {eigenvalue:e}")]
    LanczosBreakdown { step: usize, eigenvalue: f64 },

    #[error("invalid coefficient: {0}")]
    Coefficient(String),

    #[error("spectral points {first} and {second} coincide")]
    RepeatedSpectralPoint { first: usize, second: usize },

    #[error("truncation threshold {alpha:e} exceeds the largest Gramian eigenvalue {sigma_max:e}; no modes retained")]
    EmptyModel { alpha: f64, sigma_max: f64 },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error in {path}: line {line}: {message}")]
    Parse { path: String, line: usize, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl LslError {
    /// Short machine-readable category, printed by the CLI on failure.
    pub fn category(&self) -> &'static str {
        match self {
            LslError::Dimension { .. } => "dimension",
            LslError::Breakdown { .. } | LslError::LanczosBreakdown { .. } => "breakdown",
            LslError::Coefficient(_) => "coefficient",
            LslError::RepeatedSpectralPoint { .. } => "repeated-lambda",
            LslError::EmptyModel { .. } => "empty-model",
            LslError::Singular(_) => "singular",
            LslError::Config(_) => "config",
            LslError::Parse { .. } => "parse",
            LslError::Io { .. } => "io",
        }
    }

    pub(crate) fn dims(context: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        LslError::Dimension {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LslError::Io {
            path: path.into(),
            source,
        }
    }
}
