use floc::FlocError;

/// Exit status for bad arguments or invalid settings.
pub const EXIT_USAGE: u8 = 2;
/// Exit status for unreadable, unwritable or malformed files.
pub const EXIT_IO: u8 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: u64, msg: String },
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn parse(source: &str, line: u64, msg: impl Into<String>) -> Self {
        CliError::Parse {
            file: source.to_string(),
            line,
            msg: msg.into(),
        }
    }

    pub fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io(_) | CliError::Parse { .. } => EXIT_IO,
        }
    }
}

impl From<FlocError> for CliError {
    fn from(e: FlocError) -> Self {
        match e {
            FlocError::Decode(msg) => CliError::Io(msg),
            other => CliError::Usage(other.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
