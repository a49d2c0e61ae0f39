use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid uncertainty class: {0}")]
    InvalidClass(String),

    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),

    #[error("numerical blow-up: non-finite state before t = {time}")]
    NumericalBlowup { time: f64 },

    #[error("no synchronization with control strength up to the cap {cap}")]
    NoSynchronization { cap: f64 },

    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("OED step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("weight bundle tensor `{tensor}`: {reason}")]
    TensorShape { tensor: String, reason: String },

    #[error("unsupported weight bundle format version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerical pipeline (as opposed to bad input or files).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NumericalBlowup { .. } | Error::NoSynchronization { .. } => true,
            Error::Sample { source, .. } | Error::Step { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    /// True for malformed or incompatible files.
    pub fn is_format(&self) -> bool {
        match self {
            Error::TensorShape { .. }
            | Error::FormatVersion { .. }
            | Error::Format(_)
            | Error::Json(_)
            | Error::InvalidClass(_) => true,
            Error::Sample { source, .. } | Error::Step { source, .. } => source.is_format(),
            _ => false,
        }
    }
}
