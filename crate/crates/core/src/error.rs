use thiserror::Error;

/// Errors produced by the plate library and its harness.
#[derive(Debug, Error)]
pub enum VkError {
    #[error("configuration error at `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("numeric error: {0}")]
    Numeric(String),

    /// The e3-stretch minimizer of a reduced quadratic form is not identically zero.
    /// `a_map` is the linear map G (Voigt) -> a, row-major.
    #[error("zero-Poisson assumption violated: argmin over e3 stretches is nonzero (|a_map|_max = {max_entry:.3e})")]
    AssumptionViolation { a_map: [[f64; 3]; 3], max_entry: f64 },

    #[error("matrix is singular: smallest eigenvalue {min_eig:.3e}, largest {max_eig:.3e}")]
    Singular { min_eig: f64, max_eig: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error(
        "minimizing-movement step failed after {iterations} iterations: line search exhausted \
         {halvings} halvings (objective {objective:.6e}, gradient sup-norm {grad_norm:.3e})"
    )]
    StepFailure {
        iterations: usize,
        halvings: usize,
        objective: f64,
        grad_norm: f64,
    },

    #[error("conjugate gradients did not converge in {iterations} iterations (final relative residual {final_residual:.3e})")]
    SolverFailure {
        iterations: usize,
        final_residual: f64,
        residual_history: Vec<f64>,
    },

    #[error("direction has zero dissipation norm")]
    DegenerateDirection,

    #[error("slope evaluation requires a vanishing load field")]
    UnsupportedWithLoad,

    #[error("thickness h = {h} too large: dist(grad_h y, SO(3)) = {dist:.3} at x = ({:.4}, {:.4}, {:.4})", point[0], point[1], point[2])]
    ThicknessTooLarge { h: f64, dist: f64, point: [f64; 3] },

    #[error("polar factor undefined at x' = ({:.4}, {:.4}): det = {det:.3e}", point[0], point[1])]
    DegeneratePolar { point: [f64; 2], det: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl VkError {
    pub fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        VkError::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, VkError>;
