use thiserror::Error;

/// Which boundary of the log-scale support a tail error refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailSide {
    Left,
    Right,
}

impl std::fmt::Display for TailSide {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TailSide::Left => write!(f, "left"),
            TailSide::Right => write!(f, "right"),
        }
    }
}

/// Errors produced by the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty analysis subsample (censor bound too high or all-dry record)")]
    EmptySubsample,

    /// The fitted log-density cannot be normalized: the named boundary
    /// slope has a non-integrable sign. Usually a symptom of too little
    /// data near that boundary or an overly small smoothing parameter.
    #[error("non-integrable {side} tail: boundary slope {slope:.6} has the wrong sign")]
    NonIntegrableTail { side: TailSide, slope: f64 },

    /// IRLS failed to decrease the penalized objective. Carries the
    /// objective trace for diagnosis.
    #[error("IRLS diverged after {iterations} iterations (objective trace attached)")]
    Divergence {
        iterations: usize,
        trace: Vec<f64>,
    },

    #[error("optimizer failed to converge: {0}")]
    NonConvergence(String),

    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by bad or missing data rather than by a
    /// numerical method breaking down. The CLI maps this to exit code 3
    /// versus 4.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Io(_)
                | Error::Parse { .. }
                | Error::InvalidInput(_)
                | Error::EmptySubsample
        )
    }
}
