use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("backprop requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("empty attention set")]
    EmptyAttention,

    #[error("task-step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("training step {step}: {source}")]
    TrainStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("{kind} is not supported for model kind {model}")]
    Unsupported { kind: &'static str, model: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("linear algebra: {0}")]
    LinAlg(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    /// Attaches the 1-based task-step index to an error.
    pub fn at_step(self, step: usize) -> Self {
        match self {
            e @ Error::AtStep { .. } => e,
            e => Error::AtStep { step, source: Box::new(e) },
        }
    }
}
