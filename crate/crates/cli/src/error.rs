use spatialrl_core::error::{ConfigError, LayoutError};
use spatialrl_core::ops::OpError;
use spatialrl_core::trajectory::DumpError;
use thiserror::Error;

/// Failures split by exit code: bad input exits 2, engine failures exit 1.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Engine(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Engine(_) => 1,
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Input(format!("{}: {e}", path.display()))
    }
}

impl From<OpError> for CliError {
    fn from(e: OpError) -> Self {
        if e.is_input() {
            CliError::Input(e.to_string())
        } else {
            CliError::Engine(e.to_string())
        }
    }
}

impl From<LayoutError> for CliError {
    fn from(e: LayoutError) -> Self {
        OpError::from(e).into()
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        OpError::from(e).into()
    }
}

impl From<DumpError> for CliError {
    fn from(e: DumpError) -> Self {
        OpError::from(e).into()
    }
}
