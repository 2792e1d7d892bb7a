use nlwalk::Error;

/// Failures of a run, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("model condition violated: {0}")]
    Condition(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Condition(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::InvalidProfile(_)
            | Error::InvalidParams(_)
            | Error::InvalidWindow(_)
            | Error::InvalidMeasure(_)
            | Error::InvalidArgument(_)
            | Error::NonConstantPath
            | Error::OutsidePath { .. } => CliError::Config(msg),
            Error::NotMeanReverting { .. }
            | Error::NoFixedPoint { .. }
            | Error::CNotOne { .. }
            | Error::WindowTooNarrow { .. } => CliError::Condition(msg),
            Error::Io(_) => CliError::Io(msg),
            _ => CliError::Numerical(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
