use thiserror::Error;

use crate::capacity::CapacityResult;

pub type Result<T, E = LabError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LabError {
    /// A configuration value is missing, malformed or out of range.
    #[error("invalid `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("point {point:?} lies outside the domain of the mapping")]
    OutsideDomain { point: Vec<f64> },

    #[error("unsupported differentiation scheme: {0}")]
    UnsupportedScheme(String),

    #[error("mapping has no closed-form inverse: {0}")]
    NoInverse(String),

    #[error("degenerate domain: {0}")]
    DegenerateDomain(String),

    #[error("mapping is singular at {point:?}")]
    Singular { point: Vec<f64> },

    #[error("resolution too coarse: {0}")]
    ResolutionTooCoarse(String),

    /// The capacity solver ran out of iterations; the best iterate is attached.
    #[error("capacity solver did not converge within {iterations} iterations")]
    Convergence {
        iterations: usize,
        partial: Box<CapacityResult>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl LabError {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        LabError::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        LabError::Io {
            path: path.into(),
            source,
        }
    }
}
