use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("cannot construct {kind} rule with {n} points")]
    InvalidRule { kind: &'static str, n: usize },
    #[error("duplicate abscissa {0} in point set")]
    DuplicatePoints(f64),
    #[error("size mismatch: expected {expected}, got {got}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("point ({0}, {1}) is the collapsed vertex of the triangle")]
    SingularVertex(f64, f64),
    #[error("{0} has no boundary/interior decomposition; use the full bwd_trans path")]
    NoBoundaryInterior(String),
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error("element {element} has non-positive Jacobian {jac:e}")]
    NonPositiveJacobian { element: usize, jac: f64 },
    #[error("order map has {0} distinct order levels; at most two are supported")]
    TooManyLevels(usize),
    #[error("face grid of element {element} face {face} is not part of the element grid and no interpolation is configured")]
    NotGatherable { element: usize, face: usize },
    #[error("interface {0} has no interpolation configured")]
    MissingInterp(usize),
    #[error("mortar is not aligned with the local face")]
    MisalignedMortar,
    #[error("trace buffer has not been published for this evaluation")]
    UnpublishedTrace,
    #[error("no boundary condition for tag {0:?}")]
    MissingBoundaryCondition(String),
    #[error("probe size {n} exceeds limit {limit}")]
    ProbeLimit { n: usize, limit: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
