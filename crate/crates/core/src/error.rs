use thiserror::Error;

/// Errors raised by the analysis library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("catalog is empty")]
    EmptyCatalog,

    #[error("need at least {needed} events, got {got}")]
    TooFewEvents { needed: usize, got: usize },

    #[error("quadrature grid of degree {degree} cannot resolve band limit {band_limit}")]
    GridTooSmall { degree: usize, band_limit: usize },

    #[error("scale {scale} exceeds the frame's maximum scale {max_scale}")]
    ScaleOutOfRange { scale: usize, max_scale: usize },

    #[error("unsupported norm p = {0}")]
    UnsupportedNorm(String),

    #[error("null table mismatch: {0}")]
    TableMismatch(String),

    #[error("coverage density vanishes everywhere; nothing can be sampled")]
    ZeroCoverage,

    #[error("asymptotic calibration requires uniform coverage")]
    AsymptoticRequiresUniform,

    #[error("malformed table file: {0}")]
    TableFormat(String),

    #[error("catalog parse error at line {line}: {message}")]
    CatalogParse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
