use std::fmt;

/// A failed command, carrying the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config, or input files (exit 2).
    Usage(String),
    /// NaN, infinity, or divergence during computation (exit 3).
    Numeric(String),
    /// A broken internal invariant (exit 4).
    Internal(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Internal(_) => 4,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Numeric(m) | CliError::Internal(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<tabimpute::Error> for CliError {
    fn from(e: tabimpute::Error) -> Self {
        use tabimpute::Error as E;
        let msg = e.to_string();
        match e {
            E::NonFinite(_) | E::Diverged { .. } => CliError::Numeric(msg),
            E::ShapeMismatch { .. } | E::InvalidShape { .. } | E::TimeStepOutOfRange { .. } => CliError::Internal(msg),
            E::InvalidArgument(_)
            | E::InvalidConfig(_)
            | E::UndefinedMetric(_)
            | E::Io { .. }
            | E::Parse { .. }
            | E::Checkpoint(_) => CliError::Usage(msg),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
