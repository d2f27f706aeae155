use thiserror::Error;

use crate::lasso::LassoFit;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Leading pivot at the given 1-based position fell below the scale-aware guard.
    #[error("matrix is not positive definite (pivot {0})")]
    NotPositiveDefinite(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("non-numeric cell at row {row}, column `{column}`")]
    NonNumericCell { row: usize, column: String },
    #[error("column mismatch: {0}")]
    ColumnMismatch(String),
    #[error("column {0} has zero variance")]
    ConstantColumn(usize),
    #[error("bad fold count {k} for {n} observations")]
    BadFoldCount { n: usize, k: usize },

    #[error("lasso did not converge after {} sweeps", .0.iterations)]
    NotConverged(Box<LassoFit>),

    #[error("working Gram matrix is singular for set {0:?}")]
    SingularWorkingGram(Vec<usize>),
    #[error("working set of size {size} needs more than {rows} rows")]
    WorkingSetTooLarge { size: usize, rows: usize },
    #[error("augmentation size {d} exceeds the {available} available coordinates")]
    BadAugmentationSize { d: usize, available: usize },

    #[error("bad count {count} for {p} coordinates")]
    BadCount { count: usize, p: usize },
    #[error("joint covariance block is singular for targets {0:?}")]
    SingularCovariance(Vec<usize>),
    #[error("nodewise tau^2 for coordinate {0} is degenerate")]
    DegenerateTau(usize),

    #[error("dimension {p} is not a multiple of block size {k}")]
    BadBlocking { p: usize, k: usize },
    #[error("dimension {0} is too small for the signal layout (needs p >= 26)")]
    DimensionTooSmall(usize),
    #[error("campaign aborted: {failed} of {total} replicates failed")]
    CampaignAborted { failed: usize, total: usize },

    #[error("{} coordinate(s) failed: {}", .0.len(), describe_failures(.0))]
    CoordinateFailures(Vec<(usize, Box<Error>)>),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("config: {0}")]
    Config(String),
}

impl Error {
    /// Errors raised by factorizations, solvers, or degenerate estimates as
    /// opposed to malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite(_)
                | Error::NotConverged(_)
                | Error::SingularWorkingGram(_)
                | Error::SingularCovariance(_)
                | Error::DegenerateTau(_)
                | Error::CampaignAborted { .. }
        ) || matches!(self, Error::CoordinateFailures(f) if f.iter().any(|(_, e)| e.is_numerical()))
    }
}

fn describe_failures(f: &[(usize, Box<Error>)]) -> String {
    f.iter()
        .map(|(j, e)| format!("[{j}] {e}"))
        .collect::<Vec<_>>()
        .join("; ")
}
