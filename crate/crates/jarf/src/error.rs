use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv parse error at line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not symmetric (max relative asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("jacobi sweep cap reached without convergence")]
    NoConvergence,
    #[error("model format error: {0}")]
    ModelFormat(String),
    #[error("model format_version {found} unsupported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("model checksum mismatch")]
    ChecksumMismatch,
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Other(String),
}

pub type Result<T> = std::result::Result<T, Error>;
