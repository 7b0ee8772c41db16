use thiserror::Error;

use crate::ode::OdeError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error("invariant violated: {what} at {at}")]
    InvariantViolation { what: String, at: f64 },
    #[error("psi has a second turning point near y = {y}")]
    ShapeViolation { y: f64 },
    #[error("trajectory has {nodes} nodes, need at least {needed}")]
    TooFewNodes { nodes: usize, needed: usize },
    #[error("trajectory reaches y = {reached}, need at least {needed}")]
    InsufficientRange { reached: f64, needed: f64 },
    #[error("y = {y} is beyond the psi trajectory span ending at {span_end}")]
    RangeMismatch { y: f64, span_end: f64 },
    #[error("value {x} outside the span [{start}, {end}]")]
    OutOfSpan { x: f64, start: f64, end: f64 },
    #[error("trajectories were computed for different p or in the wrong order")]
    MismatchedParams,
    #[error("no crossing parameter found up to a = {a}")]
    BracketFailure { a: f64 },
    #[error("decaying label at a = {decaying} exceeds crossing label at a = {crossing}")]
    InconsistentClassification { decaying: f64, crossing: f64 },
    #[error("a = {a} stays undecided down to margin {margin}")]
    Unresolved { a: f64, margin: f64 },
    #[error("tail quantity not converged: {0}")]
    NotConverged(String),
    #[error("label does not fit this profile: {0}")]
    WrongLabel(String),
}

pub type Result<T> = std::result::Result<T, Error>;
