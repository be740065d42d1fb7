use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("extended propensity {value:.3e} is below the positivity floor {floor:.1e}")]
    PositivityViolation { value: f64, floor: f64 },

    #[error("non-finite value produced during finite-difference evaluation")]
    NonFiniteEvaluation,

    #[error("solver did not converge after {iterations} iterations (best residual {residual:.3e})")]
    NoConvergence {
        best: Vec<f64>,
        residual: f64,
        iterations: usize,
    },

    #[error("singular Jacobian")]
    SingularJacobian,

    #[error("no sign change found on [{lo}, {hi}] after bracket expansion")]
    NoSignChange { lo: f64, hi: f64 },

    #[error("maximum likelihood estimate does not exist for {model} (separation)")]
    Separation { model: String },

    #[error("sandwich bread matrix is numerically singular (condition number {condition:.3e})")]
    SingularBread { condition: f64 },

    #[error("one-step update derivative {derivative:.3e} is too close to zero")]
    SingularUpdate { derivative: f64 },

    #[error("construction leaves the parameter space: {0}")]
    OutOfParameterSpace(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error at line {line}, column `{column}`: {message}")]
    Parse {
        line: usize,
        column: String,
        message: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("row {row}: {message}")]
    Consistency { row: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerical machinery rather than of the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::PositivityViolation { .. }
                | Error::NonFiniteEvaluation
                | Error::NoConvergence { .. }
                | Error::SingularJacobian
                | Error::NoSignChange { .. }
                | Error::Separation { .. }
                | Error::SingularBread { .. }
                | Error::SingularUpdate { .. }
                | Error::OutOfParameterSpace(_)
        )
    }
}
