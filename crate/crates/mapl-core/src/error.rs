//! Crate-wide error type.

use crate::train::TrainingTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Bad run configuration: missing keys, out-of-range values, unknown names.
    #[error("{0}")]
    Config(String),

    /// A dataset violated its structural invariants.
    #[error("invalid dataset: {0}")]
    Data(String),

    /// Malformed persisted artifact (CSV/JSON) that prevents loading.
    #[error("parse error: {0}")]
    Parse(String),

    /// A requested covariance matrix is not positive semi-definite.
    #[error("covariance is not positive semi-definite: {0}")]
    NonPsdCovariance(String),

    /// Dimension disagreement between parameters, data, and configuration.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Optimizer received a non-finite gradient or parameter.
    #[error("non-finite {what} at step {step}")]
    NonFinite { what: &'static str, step: u64 },

    /// Training produced a non-finite loss; the partial trace is preserved so
    /// the failure can be inspected.
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged {
        epoch: usize,
        loss: f64,
        trace: Box<TrainingTrace>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of numerical origin (as opposed to configuration or
    /// I/O problems); the CLI maps these to a dedicated exit code.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::Diverged { .. })
    }
}
