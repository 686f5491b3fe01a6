use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("layer interfaces {upper} and {lower} cross at ({x}, {y})")]
    InterfaceCrossing {
        upper: usize,
        lower: usize,
        x: f64,
        y: f64,
    },

    #[error("element {element} is inverted or degenerate (volume {volume:e})")]
    InvertedElement { element: usize, volume: f64 },

    #[error("spring direction set spans rank {rank}, need {required}")]
    RankDeficient { rank: usize, required: usize },

    #[error("solver did not converge in {iterations} iterations (relative residual {residual:e})")]
    MaxIterations { iterations: usize, residual: f64 },

    #[error("conjugate gradient breakdown at iteration {iteration}: p'Ap = {curvature:e}")]
    Indefinite { iteration: usize, curvature: f64 },

    #[error("preconditioner failure: {0}")]
    Preconditioner(String),

    #[error("non-finite value detected at step {step}")]
    NonFinite { step: usize },

    #[error("solver failure at step {step}: {source}")]
    StepFailed {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("fast-tier capacity exceeded: requested {requested} bytes for {what}, {available} of {capacity} available")]
    Capacity {
        what: String,
        requested: u64,
        available: u64,
        capacity: u64,
    },

    #[error("residency violation: {0}")]
    Residency(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Coarse classification used for process exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::MaxIterations { .. }
            | Error::Indefinite { .. }
            | Error::Preconditioner(_)
            | Error::NonFinite { .. } => ErrorKind::Solver,
            Error::StepFailed { source, .. } => source.kind(),
            Error::Capacity { .. } | Error::Residency(_) => ErrorKind::Capacity,
            Error::Io(_) => ErrorKind::Io,
            _ => ErrorKind::Input,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Input,
    Solver,
    Capacity,
    Io,
}
