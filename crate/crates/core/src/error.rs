use thiserror::Error;

/// Errors raised across the crate.
#[derive(Error, Debug)]
pub enum Error {
    /// An argument is outside the domain of the operation.
    #[error("input domain: {0}")]
    InputDomain(String),
    /// The label cannot be produced by any CTC path of the given length.
    #[error("infeasible label: {label_len} labels ({required} steps required) over {steps} time steps")]
    Infeasible {
        label_len: usize,
        required: usize,
        steps: usize,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid config: {0}")]
    Config(String),
    /// API misuse, e.g. running backward twice on the same tape.
    #[error("usage: {0}")]
    Usage(String),
    #[error("format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable kind, used by the CLI error object.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InputDomain(_) => "input_domain",
            Error::Infeasible { .. } => "infeasible",
            Error::Shape(_) => "shape",
            Error::Config(_) => "config",
            Error::Usage(_) => "usage",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InputDomain(msg.into()))
}
