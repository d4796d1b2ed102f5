use thiserror::Error;

/// Errors surfaced by the hemm library.
#[derive(Debug, Error)]
pub enum HemmError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate posterior: all {0} components have zero density")]
    DegeneratePosterior(usize),

    #[error("degenerate responsibilities for sample {0}")]
    DegenerateResponsibility(usize),

    #[error("non-finite objective in parameter block `{block}`: {detail}")]
    NonFinite { block: String, detail: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HemmError>;
