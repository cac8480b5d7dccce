use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("non-finite derivative of output {output} with respect to input {input}")]
    NonFiniteDerivative { output: usize, input: usize },
    #[error("integration produced a non-finite state")]
    IntegrationFailure,
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("improper transfer function entry ({row}, {col}): {reason}")]
    ImproperTransferFunction {
        row: usize,
        col: usize,
        reason: String,
    },
    #[error("Riccati iteration diverged; (A, C) is likely not detectable")]
    RiccatiDivergence,
    #[error("Riccati iteration did not converge in {0} iterations")]
    RiccatiNoConvergence(usize),
    #[error("pole placement failed: {0}")]
    PolePlacement(String),
    #[error("estimator call order violated: {0}")]
    CallOrder(&'static str),
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    #[error("unstable model: {0}")]
    Unstable(String),
    #[error("Cholesky factorization failed after regularization")]
    Cholesky,
    #[error("optimizer failed: {0}")]
    Solver(String),
    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(what: &'static str, expected: usize, got: usize) -> Self {
        Error::Dimension { what, expected, got }
    }

    pub(crate) fn at_step(self, step: usize) -> Self {
        Error::AtStep { step, source: Box::new(self) }
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::dim(what, expected, got))
    }
}
