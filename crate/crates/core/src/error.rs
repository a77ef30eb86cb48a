use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EbrError {
    #[error("dimension must be at least 2, got {0}")]
    DimensionTooSmall(usize),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not Hermitian (max deviation {0:e})")]
    NotHermitian(f64),

    #[error("trace must be 1, got {0}")]
    TraceNotOne(f64),

    #[error("matrix is not positive semidefinite (min eigenvalue {0:e})")]
    NotPositive(f64),

    #[error("vector must have unit norm, got {0}")]
    NotUnitNorm(f64),

    #[error("Bloch vector does not correspond to a state (min eigenvalue {0:e})")]
    NotBonaFide(f64),

    #[error("angle {0} outside [0, pi]")]
    AngleOutOfRange(f64),

    #[error(
        "observable has a degenerate spectrum (eigenvalues {0} and {1} coincide); use degenerate_group"
    )]
    DegenerateSpectrum(f64, f64),

    #[error("barycentric coordinate {index} is {value:e}, point lies outside the membrane")]
    OutsideMembrane { index: usize, value: f64 },

    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("rejection sampling gave up after {attempts} attempts; density bound {bound} is likely far above the density's typical value")]
    RejectionCapExceeded { attempts: u64, bound: f64 },

    #[error("density value {value} exceeds declared bound {bound}")]
    DensityBoundViolated { value: f64, bound: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, EbrError>;
