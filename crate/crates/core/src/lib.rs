//! Simulation and Monte Carlo estimation for `dX = A(X−) dZ`, where `Z` is a
//! vector of independent one-dimensional symmetric α-stable processes.

pub mod checks;
pub mod engine;
pub mod error;
pub mod estimate;
pub mod expr;
pub mod field;
pub mod harnack;
pub mod quad;
pub mod rng;
pub mod stable;
pub mod stats;
pub mod steering;

pub use error::{Error, Result};
pub use expr::{parse_entry_expression, Expr, ParseError};
pub use field::{MatrixField, QuadratureSpec, Region, ScalarFunction};
pub use stable::{choose_beta, sample_large_jumps, JumpEvent, StableParams, TruncationScheme};
