use thiserror::Error;

use crate::expr::ExprError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Expr(#[from] ExprError),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("expected a {expected} tensor field")]
    WrongVariance { expected: &'static str },

    #[error("degenerate tensor: |det| = {det:e} is below the threshold {threshold:e}")]
    Degenerate { det: f64, threshold: f64 },

    #[error("cannot invert an antisymmetric tensor of odd dimension {0}")]
    OddDimension(usize),

    #[error("coordinate `{name}` = {value} lies outside the chart [{lo}, {hi}]")]
    OutsideChart {
        name: String,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("matrix `{0}` is not positive definite")]
    NotPositiveDefinite(&'static str),

    #[error("singular linear system in {0}")]
    Singular(&'static str),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("integration failed at t = {time}: {source}")]
    Integration {
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{0}")]
    Config(String),
}

impl Error {
    pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
        if expected == found {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected, found })
        }
    }
}
