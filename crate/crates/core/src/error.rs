use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("operator is not Hermitian (max deviation {deviation:e})")]
    NotHermitian { deviation: f64 },

    #[error("state is not normalized (norm {norm})")]
    NotNormalized { norm: f64 },

    #[error("invalid density operator: {0}")]
    InvalidDensity(String),

    #[error("ground convention mismatch: <G_{eta}|H0|G_{eta}> = {energy} exceeds minimum eigenvalue {min_eigenvalue}")]
    ConventionMismatch { eta: char, energy: f64, min_eigenvalue: f64 },

    #[error("eigensolver failed to converge for a {dim}x{dim} matrix")]
    EigensolverFailure { dim: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("step size too coarse: norm drift {drift:e} at step {step}")]
    StepSizeTooCoarse { step: usize, drift: f64 },

    #[error("density operator lost positivity at t = {time}: min eigenvalue {min_eigenvalue:e}")]
    PositivityViolation { time: f64, min_eigenvalue: f64 },

    #[error("probability {value} outside [0, 1] beyond tolerance")]
    ProbabilityExcursion { value: f64 },

    #[error("inner product {0} outside [0, 1]")]
    InvalidOverlap(f64),

    #[error("Gram matrix is not positive semidefinite: min eigenvalue {min_eigenvalue:e}")]
    PsdViolation { min_eigenvalue: f64 },

    #[error("training labels contain a single class")]
    SingleClassDataset,

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("{0} must not be empty")]
    EmptyInput(&'static str),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("schema error at row {row}, column {column}: {message}")]
    Schema { row: usize, column: String, message: String },

    #[error("validation error at row {row}: {message}")]
    Validation { row: usize, message: String },

    #[error("fingerprint mismatch: expected {expected}, found {found}")]
    FingerprintMismatch { expected: String, found: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::EigensolverFailure { .. }
                | Error::StepSizeTooCoarse { .. }
                | Error::PositivityViolation { .. }
                | Error::ProbabilityExcursion { .. }
                | Error::PsdViolation { .. }
                | Error::NotHermitian { .. }
                | Error::NotNormalized { .. }
                | Error::ConventionMismatch { .. }
        )
    }
}
