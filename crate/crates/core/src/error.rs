use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("payoff matrix contains a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("complementary pivoting did not terminate after {pivots} pivots")]
    PivotCycle { pivots: usize },
    #[error("zero-sum solver stopped with duality gap {gap:e} above tolerance {tol:e}")]
    NotConverged { gap: f64, tol: f64 },
    #[error("invalid tree: {0}")]
    InvalidTree(String),
}
