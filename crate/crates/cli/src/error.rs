use loopdet::ModelError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// Process exit status for this error.
    ///
    /// 1 i/o, 2 usage, 3 config, 4 model domain, 5 data.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Config(_) => 3,
            CliError::Data(_) => 5,
            CliError::Model(e) => match e {
                ModelError::InvalidParameter { .. } | ModelError::InvalidSource(_) => 3,
                ModelError::InsufficientData(_)
                | ModelError::InconsistentMeasurement { .. }
                | ModelError::NoAcceptance => 5,
                _ => 4,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
