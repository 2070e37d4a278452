use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported dimension {0} (builtin tori support n = 2 or 3)")]
    UnsupportedDimension(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degree {degree} out of range for this operation (allowed {min}..={max})")]
    DegreeOutOfRange {
        degree: usize,
        min: usize,
        max: usize,
    },

    #[error("degree mismatch: {left} vs {right}")]
    DegreeMismatch { left: usize, right: usize },

    #[error("cochain length {got} does not match {expected} simplices of degree {degree}")]
    LengthMismatch {
        degree: usize,
        expected: usize,
        got: usize,
    },

    #[error("mesh parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("non-manifold mesh: {0}")]
    NonManifold(String),

    #[error("non-orientable mesh: {0}")]
    NonOrientable(String),

    #[error("degenerate mesh: {0}")]
    DegenerateMesh(String),

    #[error("mass matrix of degree {0} is not positive definite")]
    SingularMass(usize),

    #[error("eigensolver failure: {0}")]
    EigenSolve(String),

    #[error("insufficient spectral truncation: {0}")]
    Truncation(String),

    #[error("cochain is not coclosed (relative residual {0:.3e})")]
    NotCoclosed(f64),

    #[error("growth exponent p = {p} outside the admissible window ]2, {upper}[")]
    ExponentWindow { p: f64, upper: f64 },

    #[error("zero-mass model cannot be minimized directly; perturb it first")]
    ZeroMass,

    #[error("inner solver did not converge after {iterations} steps (gradient norm {gradient_norm:.3e})")]
    InnerMaxIterations {
        iterations: usize,
        gradient_norm: f64,
    },

    #[error("inner line search failed at step {iteration}: {reason}")]
    LineSearch { iteration: usize, reason: String },

    #[error("outer solver stagnated: {0}")]
    Stagnation(String),

    #[error("critical value {value:.6e} outside band [{lower:.6e}, {upper:.6e}]")]
    BandEscape { value: f64, lower: f64, upper: f64 },

    #[error("continuation failure: {0}")]
    Continuation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code: 1 for validation problems, 2 for solver failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::SingularMass(_)
            | Error::EigenSolve(_)
            | Error::InnerMaxIterations { .. }
            | Error::LineSearch { .. }
            | Error::Stagnation(_)
            | Error::BandEscape { .. }
            | Error::Continuation(_) => 2,
            _ => 1,
        }
    }
}
