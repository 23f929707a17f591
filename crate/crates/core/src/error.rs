use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("timestep {t} out of range 1..={max}")]
    TimestepOutOfRange { t: usize, max: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("degenerate basis: Gram determinant {det:e} below tolerance {tol:e}")]
    DegenerateBasis { det: f64, tol: f64 },

    #[error("condition id {cond} out of range (num_conds = {num_conds})")]
    ConditionOutOfRange { cond: usize, num_conds: usize },

    #[error("non-finite training loss at step {step}: {loss}")]
    NonFiniteLoss { step: usize, loss: f64 },

    #[error("bad magic in {path}: expected {expected:?}")]
    BadMagic { path: PathBuf, expected: String },

    #[error("unsupported format version {found} in {path} (expected {expected})")]
    VersionMismatch { path: PathBuf, found: u32, expected: u32 },

    #[error("truncated file {path}: needed {needed} bytes at offset {offset}, file has {len}")]
    Truncated { path: PathBuf, offset: usize, needed: usize, len: usize },

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short stable tag used in machine-readable error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Schedule(_) => "schedule",
            Error::TimestepOutOfRange { .. } => "timestep_out_of_range",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Degenerate(_) => "degenerate",
            Error::DegenerateBasis { .. } => "degenerate_basis",
            Error::ConditionOutOfRange { .. } => "condition_out_of_range",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::BadMagic { .. } => "bad_magic",
            Error::VersionMismatch { .. } => "version_mismatch",
            Error::Truncated { .. } => "truncated",
            Error::Config { .. } => "config",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub(crate) fn check_dims(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}
