use thiserror::Error;

/// Errors raised by landscape constructions, spectra and flows.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid selection: {0}")]
    InvalidSelection(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("point is not critical: gradient norm {grad_norm:.3e} exceeds {threshold:.3e}")]
    NotCritical { grad_norm: f64, threshold: f64 },

    #[error("rank of W is ambiguous at the tolerance boundary (candidates {lower} and {upper})")]
    RankAmbiguous { lower: usize, upper: usize },

    #[error("not a strict saddle: {0}")]
    NotASaddle(String),

    #[error("group element is singular")]
    SingularGroupElement,

    #[error("dense Hessian of dimension {dim} exceeds the limit {limit}")]
    TooLarge { dim: usize, limit: usize },

    #[error("integrator step size underflow at t = {t:.6e} (h = {h:.3e})")]
    StiffnessFailure { t: f64, h: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by malformed or inconsistent user input.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_)
                | Error::Dimension(_)
                | Error::InvalidSelection(_)
                | Error::Io(_)
                | Error::Csv(_)
                | Error::TooLarge { .. }
                | Error::SingularGroupElement
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err(what: impl Into<String>) -> Error {
    Error::Dimension(what.into())
}
