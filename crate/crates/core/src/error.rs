use std::path::PathBuf;

use crate::riccati::RiccatiError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Riccati(#[from] RiccatiError),
    #[error("Riccati solve failed at state (xi={xi}, xbar={xbar}): {source}")]
    RiccatiAt {
        xi: f64,
        xbar: f64,
        #[source]
        source: RiccatiError,
    },
    #[error("state leaves the opinion domain: {0}")]
    DomainViolation(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("schema error in {path}: {reason}")]
    Schema { path: PathBuf, reason: String },
    #[error("stored labels disagree with recomputed SDRE labels at row {row} (deviation {deviation:.3e})")]
    LabelMismatch { row: usize, deviation: f64 },
    #[error("training diverged at epoch {epoch}")]
    DivergedTraining { epoch: usize, history: Vec<crate::neural::EpochRecord> },
    #[error("rejection sampling stalled: acceptance rate {rate:.4}")]
    RejectionStall { rate: f64 },
    #[error("model mismatch: {0}")]
    ModelMismatch(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn schema(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Schema { path: path.into(), reason: reason.into() }
    }

    /// Numerical failures as opposed to validation or I/O problems.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Riccati(_)
                | Error::RiccatiAt { .. }
                | Error::NonFinite(_)
                | Error::DivergedTraining { .. }
                | Error::LabelMismatch { .. }
                | Error::RejectionStall { .. }
        )
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
