use thiserror::Error;

/// Errors raised across the crate.
///
/// Budget errors are kept distinct from validation errors so that callers
/// (the CLI in particular) can map them to different exit statuses.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("malformed input: {0}")]
    Malformed(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid Gram matrix: {0}")]
    Gram(GramViolation),
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error("lifted matrix rejected: {0}")]
    LiftInfeasible(GramViolation),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("budget exceeded: {what} needs {required}, limit is {limit}")]
    Budget {
        what: &'static str,
        required: u128,
        limit: u128,
    },
    #[error("optimizer failed: {0}")]
    Optimizer(String),
}

impl Error {
    pub fn is_budget(&self) -> bool {
        matches!(self, Error::Budget { .. })
    }
}

/// The first invariant a candidate Gram matrix failed.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GramViolation {
    #[error("asymmetric: |m[{row}][{col}] - m[{col}][{row}]| = {gap:e}")]
    Asymmetric { row: usize, col: usize, gap: f64 },
    #[error("not positive semidefinite: smallest eigenvalue {eigenvalue:e}")]
    NegativeEigenvalue { eigenvalue: f64 },
    #[error("negative entry m[{row}][{col}] = {value:e}")]
    NegativeEntry { row: usize, col: usize, value: f64 },
    #[error("state-size constraint violated at row {row}: {lhs} != {rhs}")]
    ConstraintMismatch { row: usize, lhs: f64, rhs: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
