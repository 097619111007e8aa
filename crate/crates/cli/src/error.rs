use forcedual::Error as CoreError;
use forcedual_live::SessionError;
use thiserror::Error;

/// Failure of a CLI command, carrying the process exit code class.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration, schedule or input file.
    #[error("{0}")]
    Input(String),
    /// Factorization, eigensolver or time-stepping failure.
    #[error("{0}")]
    Numerical(String),
    /// One or more validation thresholds were missed.
    #[error("{0}")]
    Validation(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Input(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    /// Prefixes the message with where it happened.
    pub fn context(self, what: &str) -> Self {
        match self {
            CliError::Input(m) => CliError::Input(format!("{what}: {m}")),
            CliError::Numerical(m) => CliError::Numerical(format!("{what}: {m}")),
            CliError::Validation(m) => CliError::Validation(format!("{what}: {m}")),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::Io { .. }
            | CoreError::Parse { .. }
            | CoreError::IndexOutOfRange { .. }
            | CoreError::InvertedElements(_)
            | CoreError::NonManifold(_)
            | CoreError::InvalidInput(_)
            | CoreError::SizeCap { .. }
            | CoreError::Container(_)
            | CoreError::RankDeficient { .. } => CliError::Input(msg),
            CoreError::Factorization(_)
            | CoreError::NotPositiveSemidefinite(_)
            | CoreError::NoConvergence { .. }
            | CoreError::LineSearch(_) => CliError::Numerical(msg),
        }
    }
}

impl From<SessionError> for CliError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Numerical(m) => CliError::Numerical(m),
            other => CliError::Input(other.to_string()),
        }
    }
}

/// I/O failure on a named path.
pub fn io_error(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}
