use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("resource mapping error: {0}")]
    Mapping(String),

    #[error("scheduling error: {0}")]
    Scheduling(String),

    #[error("acquisition failed after {attempts} attempt(s), {elapsed_ms} ms of simulated time")]
    AcquisitionFailed { attempts: u32, elapsed_ms: u64 },

    #[error("detection failed: {0}")]
    DetectionFailed(String),

    #[error("scenario parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

pub(crate) fn arg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
