use thiserror::Error;

/// Errors raised by the meshing, solver and filtering layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate domain: extent along axis {axis} is {extent}")]
    DegenerateDomain { axis: usize, extent: f64 },

    #[error("resolution must be at least 2 vertices per axis, got {0}")]
    InvalidResolution(usize),

    #[error("point {point:?} lies outside the mesh domain")]
    OutOfDomain { point: Vec<f64> },

    #[error("matrix is not symmetric positive definite (eigenvalue {eigenvalue})")]
    NotSpd { eigenvalue: f64 },

    #[error("element {element} is singular (volume {volume})")]
    SingularElement { element: usize, volume: f64 },

    #[error("mesh tangled: element {element} has non-positive volume {volume}")]
    MeshTangled { element: usize, volume: f64 },

    #[error("time step {dt} exceeds the CFL limit {limit}; use a smaller step")]
    CflViolation { dt: f64, limit: f64 },

    #[error("mass not conserved: relative drift {drift:e}")]
    MassDrift { drift: f64 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("ensemble transform is not positive definite (eigenvalue {eigenvalue})")]
    NonSpdTransform { eigenvalue: f64 },

    #[error("innovation covariance is singular")]
    SingularInnovation,

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
