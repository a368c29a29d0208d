use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DsrlError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("singular linear system (pivot {pivot:.3e} at column {column})")]
    Singular { column: usize, pivot: f64 },
    #[error("degenerate active set: {0}")]
    Degenerate(String),
    #[error("non-finite value in {context}")]
    NonFinite { context: String },
    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: usize },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("free-fall singularity: thrust {0:.3e} too small to recover attitude")]
    FreeFall(f64),
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("io error: {0}")]
    Io(String),
    #[error("parse error: {0}")]
    Parse(String),
}

impl DsrlError {
    pub fn non_finite(context: impl Into<String>) -> Self {
        DsrlError::NonFinite { context: context.into() }
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        DsrlError::Config { field: field.into(), message: message.into() }
    }

    /// True for failures caused by numerics rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            DsrlError::Singular { .. }
                | DsrlError::Degenerate(_)
                | DsrlError::NonFinite { .. }
                | DsrlError::NonFiniteGradient { .. }
                | DsrlError::FreeFall(_)
        )
    }
}

impl From<std::io::Error> for DsrlError {
    fn from(e: std::io::Error) -> Self {
        DsrlError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for DsrlError {
    fn from(e: serde_json::Error) -> Self {
        DsrlError::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, DsrlError>;
