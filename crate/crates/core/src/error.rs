use thiserror::Error;

/// Errors raised by oracles, models, subsolvers and drivers.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum OptError {
    /// A derivative order or feature the source cannot provide.
    #[error("capability error: {0}")]
    Capability(String),

    /// Argument outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    /// The model gradient was requested where the `δ₁‖s‖` term is not differentiable.
    #[error("model is not differentiable at s = 0 when delta_1 > 0")]
    NonsmoothPoint,

    /// The subproblem model has negative curvature the regularization does not dominate.
    #[error("model is not convex: {0}")]
    ModelConvexity(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The lambda search could not land in the acceptance window.
    #[error("lambda bracket search failed after {iterations} trials at outer iteration {outer} (last lambda {last_lambda:e}, ratio {last_ratio:e})")]
    BracketFailure {
        outer: usize,
        iterations: usize,
        last_lambda: f64,
        last_ratio: f64,
        observed: Vec<(f64, f64)>,
    },

    #[error("reference certification failed: {0}")]
    Certification(String),

    #[error("invalid value for key `{key}`: {message}")]
    Parse { key: String, message: String },

    #[error("missing key `{0}`")]
    MissingKey(String),
}

pub type Result<T> = std::result::Result<T, OptError>;
