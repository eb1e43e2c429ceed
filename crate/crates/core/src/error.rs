use thiserror::Error;

use crate::pipeline::PlacementRun;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix has a NaN or infinite entry")]
    NonFinite,
    #[error("rank-1 update is singular (denominator {denominator:e})")]
    SingularUpdate { denominator: f64 },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("trace must be positive, got {0}")]
    NonPositiveTrace(f64),

    #[error("anchor centroid is {norm:e} m from the origin")]
    NotCentered { norm: f64 },
    #[error("anchor matrix C is singular; anchors may be coplanar (try 2D mode)")]
    SingularC,
    #[error("horizontal block E of C⁻¹ is singular")]
    SingularE,
    #[error("geometry matrix HᵀH is numerically singular")]
    DegenerateGeometry,
    #[error("target coincides with anchor {index}")]
    TargetAtAnchor { index: usize },
    #[error("need at least {needed} anchors, got {got}")]
    TooFewAnchors { needed: usize, got: usize },
    #[error("angular region is empty")]
    EmptyRegion,
    #[error("quadrature needs at least 8 points per axis, got {0}")]
    CoarseQuadrature(usize),

    #[error("box lower corner must be strictly below upper corner")]
    InvalidBox,
    #[error("eigenvector ray admits only the origin inside the box")]
    ZeroFeasible,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no separation-feasible point found at iteration {iteration}")]
    Infeasible {
        iteration: usize,
        partial: Box<PlacementRun>,
    },
    #[error("initial anchors are degenerate: {0}")]
    DegenerateInitial(String),
    #[error("redundant-anchor cap reached with {valid} of {wanted} valid anchors")]
    CapExhausted {
        valid: usize,
        wanted: usize,
        partial: Box<PlacementRun>,
    },

    #[error("no initial anchor set satisfied the separation threshold")]
    NoFeasibleInit,
    #[error("need at least {needed} records, got {got}")]
    TooFewRecords { needed: usize, got: usize },
    #[error("timing fit needs at least 3 distinct anchor counts, got {0}")]
    InsufficientSweep(usize),
}
