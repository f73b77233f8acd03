use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not square: {0}x{1}")]
    NonSquare(usize, usize),

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not Hermitian (defect {0:e})")]
    NonHermitian(f64),

    #[error("matrix has a non-finite entry")]
    NonFinite,

    #[error("negative eigenvalue {0:e} below the clamp tolerance")]
    NegativeEigenvalue(f64),

    #[error("not a density matrix: {0}")]
    NotDensityMatrix(String),

    #[error("amplitudes are not normalized (sum of squares {0})")]
    NotNormalized(f64),

    #[error("reliability eta = {0} is outside [0, 1]")]
    EtaOutOfRange(f64),

    #[error("index {index} out of range 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("basis vectors are not orthonormal (defect {0:e})")]
    NotOrthonormal(f64),

    #[error("requested order {requested} exceeds the supported maximum {max}")]
    NMaxTooLarge { requested: usize, max: usize },

    #[error("derivative has weight {0:e} outside the support of the state")]
    SupportViolation(f64),

    #[error("alpha = {0} is outside the series convergence domain")]
    AlphaOutOfConvergenceDomain(f64),

    #[error("exponential form is undefined at eta = {0}")]
    EtaEndpoint(f64),

    #[error("finite-difference step {0} outside [1e-4, 1e-1]")]
    StepOutOfRange(f64),

    #[error("matrix is not orthogonal (defect {0:e})")]
    NotOrthogonal(f64),

    #[error("singular information: eigenvalue {0:e} at or below tolerance")]
    SingularInformation(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
