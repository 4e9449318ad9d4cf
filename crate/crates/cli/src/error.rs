//! Error categories and their process exit codes.

use ndt_atlas::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flag values or combinations.
    #[error("usage: {0}")]
    Usage(String),

    #[error("{0}")]
    Config(CoreError),

    /// Missing, unreadable or malformed input files.
    #[error("input: {0}")]
    Input(CoreError),

    /// Inputs were read but could not be processed.
    #[error("processing: {0}")]
    Processing(CoreError),

    #[error("output: {0}")]
    Output(CoreError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Config(_) => 3,
            CliError::Input(_) => 4,
            CliError::Processing(_) => 5,
            CliError::Output(_) => 6,
        }
    }

    /// Categorizes an error raised while reading inputs or computing.
    pub fn from_core(e: CoreError) -> Self {
        match e {
            CoreError::Config(_) => CliError::Config(e),
            CoreError::Io { .. } | CoreError::Parse { .. } | CoreError::MissingColumn { .. } => CliError::Input(e),
            CoreError::InvalidArgument(ref m) => CliError::Usage(m.clone()),
            _ => CliError::Processing(e),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::from_core(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;
