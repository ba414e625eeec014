use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("invalid coefficients: {0}")]
    InvalidCoefficients(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("index {index} out of range (1..={len})")]
    IndexOutOfRange { index: usize, len: usize },

    /// Positive definiteness fails: `((N-2)/2)^2 + mu <= 0`.
    #[error("indefinite form: ((N-2)/2)^2 + mu = {discriminant:e} <= 0")]
    IndefiniteForm { discriminant: f64 },

    #[error("degenerate indicial equation (sigma+ = sigma- = {sigma}); the logarithmic branch is not supported")]
    DegenerateIndicial { sigma: f64 },

    #[error("forcing too singular: fitted log-log slope {slope:.6} does not exceed {bound:.6}")]
    ForcingTooSingular { slope: f64, bound: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("angular grid under-resolved: {nodes} nodes, need more than {required}")]
    Aliasing { nodes: usize, required: usize },

    #[error("fixed-point iteration did not converge after {iterations} iterations (last residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("radius {r:e} outside grid [{lo:e}, {hi:e}]")]
    RadiusOutOfRange { r: f64, lo: f64, hi: f64 },

    #[error("gradient samples are required but missing")]
    MissingGradient,

    #[error("power-law tail fit failed: {0}")]
    TailFit(String),

    #[error("degenerate solution: H(r) = {height:e} at r = {r:e} (H must stay positive for a nontrivial solution)")]
    DegenerateSolution { r: f64, height: f64 },

    #[error("degenerate exponent: {0}")]
    DegenerateExponent(String),

    #[error("exponent {gamma} matches no eigenvalue block within {tol:e}")]
    NoEigenvalueMatch { gamma: f64, tol: f64 },

    #[error("test function does not vanish outside the declared support radius {0}")]
    SupportViolation(f64),

    #[error("scenario validation: {0}")]
    Validation(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error at line {line}, column {column}: {message}")]
    Json {
        line: usize,
        column: usize,
        message: String,
    },
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}
