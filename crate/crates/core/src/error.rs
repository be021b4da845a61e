use thiserror::Error;

use crate::expr::ParseError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("expression error in entry ({row},{col}): {source}")]
    Expression {
        row: usize,
        col: usize,
        #[source]
        source: ParseError,
    },

    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is degenerate at {point:?}: |det| = {det:e}")]
    Degenerate { point: Vec<f64>, det: f64 },

    #[error("singular matrix")]
    Singular,

    #[error("quadrature did not converge: refinement ratio {ratio:.3}")]
    QuadratureDiverged { ratio: f64 },

    #[error("fit refused: {0}")]
    FitRefused(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
