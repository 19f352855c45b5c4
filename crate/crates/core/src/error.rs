use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{what}: series did not converge within {terms} terms")]
    NonConvergent { what: &'static str, terms: usize },

    #[error("invalid modulus {0}: imaginary part must be positive")]
    InvalidModulus(String),

    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error("pole hit in {factor}")]
    PoleHit { factor: String },

    #[error("ill-conditioned collocation system (condition estimate {cond:.3e})")]
    IllConditioned { cond: f64 },

    #[error("least-squares residual {residual:.3e} exceeds tolerance")]
    ResidualTooLarge { residual: f64 },

    #[error("highest weight {0} is not a nonnegative integer")]
    NotIntegral(String),

    #[error("factor index {index} out of range for n = {n}")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("no feasible contour: {0}")]
    PlanInfeasible(String),

    #[error("quadrature not converged: estimate {estimate:.3e} > tolerance {tol:.3e}")]
    NotConverged { estimate: f64, tol: f64 },

    #[error("divergent entry ({row}, {col}): admissibility sets intersect")]
    DivergentEntry { row: String, col: String },

    #[error("xi is not periodic: {0}")]
    NotPeriodic(String),
}

pub type Result<T> = std::result::Result<T, Error>;
