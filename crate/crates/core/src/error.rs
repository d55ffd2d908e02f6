use thiserror::Error;

/// Errors produced by the library. Each variant carries a stable short code
/// (see [`QpgpError::code`]) used by the CLI and in machine-readable output.
#[derive(Debug, Error)]
pub enum QpgpError {
    #[error("matern-nu-unsupported: nu = {0} (supported: 0.5, 1.5, 2.5)")]
    MaternNuUnsupported(f64),

    #[error("kernel-not-positive-definite: {0}")]
    KernelNotPositiveDefinite(String),

    #[error("bad-search-spec: {0}")]
    BadSearchSpec(String),

    #[error("dense-cov-not-pd: dense covariance of size {0} is not positive definite")]
    DenseCovNotPd(usize),

    #[error("partial-block-unsupported-naive: series has a partial tail of length {0}")]
    PartialBlockUnsupportedNaive(usize),

    #[error("insufficient-blocks: need at least {needed} complete blocks, have {have}")]
    InsufficientBlocks { needed: usize, have: usize },

    #[error("insufficient-blocks-for-bootstrap: need at least 3 complete blocks, have {0}")]
    InsufficientBlocksForBootstrap(usize),

    #[error("empty-series")]
    EmptySeries,

    #[error("invalid-parameter: {0}")]
    InvalidParameter(String),

    #[error("period-mismatch: model period {model} but {other} requested")]
    PeriodMismatch { model: usize, other: usize },

    #[error("parse-error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("bench-mismatch: {0}")]
    BenchMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl QpgpError {
    pub fn code(&self) -> &'static str {
        match self {
            QpgpError::MaternNuUnsupported(_) => "matern-nu-unsupported",
            QpgpError::KernelNotPositiveDefinite(_) => "kernel-not-positive-definite",
            QpgpError::BadSearchSpec(_) => "bad-search-spec",
            QpgpError::DenseCovNotPd(_) => "dense-cov-not-pd",
            QpgpError::PartialBlockUnsupportedNaive(_) => "partial-block-unsupported-naive",
            QpgpError::InsufficientBlocks { .. } => "insufficient-blocks",
            QpgpError::InsufficientBlocksForBootstrap(_) => "insufficient-blocks-for-bootstrap",
            QpgpError::EmptySeries => "empty-series",
            QpgpError::InvalidParameter(_) => "invalid-parameter",
            QpgpError::PeriodMismatch { .. } => "period-mismatch",
            QpgpError::Parse { .. } => "parse-error",
            QpgpError::BenchMismatch(_) => "bench-mismatch",
            QpgpError::Io(_) => "io-error",
            QpgpError::Csv(_) => "csv-error",
            QpgpError::Json(_) => "json-error",
        }
    }
}

pub type Result<T> = std::result::Result<T, QpgpError>;
