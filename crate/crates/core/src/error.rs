use thiserror::Error;

use crate::geometry::Point;

#[derive(Debug, Error)]
pub enum Error {
    #[error("spacing {spacing} does not tile the domain")]
    NonConformingSpacing { spacing: f64 },

    #[error("could not place {placed} of {requested} points with separation {min_separation} after {attempts} attempts")]
    SeparationUnsatisfiable {
        placed: usize,
        requested: usize,
        min_separation: f64,
        attempts: usize,
    },

    #[error("degenerate node cloud: {0}")]
    DegenerateCloud(String),

    #[error("point {0:?} is not on the domain boundary")]
    NotOnBoundary(Point),

    #[error("outward normal is ambiguous at corner {0:?}")]
    NormalAmbiguous(Point),

    #[error("no quadrature rule of degree {0}")]
    UnsupportedDegree(usize),

    #[error("reference point {0:?} lies outside the reference triangle")]
    OutsideReferenceElement(Point),

    #[error("no pressure node at {0:?}")]
    PinNodeNotFound(Point),

    #[error("velocity and pressure meshes do not share vertices: {0}")]
    MeshMismatch(String),

    #[error("kernel derivative is singular at offset {0:?}")]
    SingularDerivative(Point),

    #[error("pressure is undetermined: no pin and no natural boundary")]
    MissingPressureClosure,

    #[error("empty matrix")]
    EmptyMatrix,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("triangles cover area {covered}, domain area is {expected}")]
    UncoveredDomain { covered: f64, expected: f64 },

    #[error("every shape parameter candidate produced an unusable system")]
    AllSolvesFailed,

    #[error("point {0:?} lies outside the example domain")]
    OutsideDomain(Point),

    #[error("trend fit needs at least 3 points, got {0}")]
    InsufficientPoints(usize),

    #[error("log-log fit requires positive values, got {0}")]
    NonPositiveValue(f64),

    #[error("invalid time configuration: {0}")]
    InvalidTimeConfig(String),

    #[error("invalid case: {0}")]
    InvalidCase(String),

    #[error("config parse error at line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
