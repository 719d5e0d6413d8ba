//! Error type shared by every module.

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// The lattice dimension is outside the supported range.
    #[error("invalid dimension {0}: expected 2 <= d <= {max}", max = crate::lattice::MAX_DIM)]
    InvalidDimension(usize),
    /// A cube center is not a multiple of the cube side.
    #[error("invalid cube center: coordinates must be multiples of {side}")]
    InvalidCenter { side: i64 },
    /// A probability parameter is outside `[0, 1]`.
    #[error("invalid probability {0}")]
    InvalidProbability(f64),
    /// An edge ordinal is out of range or repeated.
    #[error("invalid edge {0}")]
    InvalidEdge(usize),
    /// A level-0 cube was asked for its successors.
    #[error("no successors: cube has level 0")]
    NoSuccessors,
    /// A region does not fit the geometry it was used with.
    #[error("invalid region: {0}")]
    InvalidRegion(String),
    /// The linear solver did not reach its tolerance.
    #[error("solve failed after {iterations} iterations (relative residual {residual:e})")]
    SolveFailed { iterations: usize, residual: f64 },
    /// An enumeration would exceed its configured budget.
    #[error("{what} too large: requested {requested}, limit {limit}")]
    BudgetExceeded {
        what: &'static str,
        requested: usize,
        limit: usize,
    },
    /// The base cube is not well-connected, so its maximal cluster is undefined.
    #[error("maximal cluster undefined: base cube is not well-connected")]
    MaximalClusterUndefined,
    /// A local partition was requested for a cube that fails its predicate.
    #[error("parent not good")]
    ParentNotGood,
    /// A pyramid partition could not be completed.
    #[error("pyramid obstructed at level {level}: cell centered at {center:?} with side {side}")]
    PyramidObstructed {
        level: usize,
        center: Vec<i64>,
        side: i64,
    },
    /// A formula was evaluated outside its domain of validity.
    #[error("{0}")]
    OutOfDomain(String),
    /// A walk was started at a vertex outside the cube.
    #[error("invalid start")]
    InvalidStart,
    /// A sampled configuration has no usable cluster.
    #[error("subcritical-looking sample: {0}")]
    Subcritical(String),
    /// A serialized configuration could not be decoded.
    #[error("format error: {0}")]
    Format(String),
    /// A generic invalid argument.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Result alias for the library.
pub type Result<T> = std::result::Result<T, Error>;

/// Checks that `p` lies in `[0, 1]`.
pub(crate) fn check_probability(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidProbability(p))
    }
}
