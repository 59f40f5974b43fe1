use std::path::Path;

use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad invocation: missing inputs, conflicting or malformed settings.
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] bldclass::Error),
    #[error(transparent)]
    Model(#[from] bldclass_model::Error),
    #[error("{path}: {message}")]
    File { path: String, message: String },
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    pub fn usage(msg: impl Into<String>) -> CliError {
        CliError::Usage(msg.into())
    }

    pub fn file(path: &Path, err: impl std::fmt::Display) -> CliError {
        CliError::File { path: path.display().to_string(), message: err.to_string() }
    }

    pub fn exit_code(&self) -> i32 {
        fn core(e: &bldclass::Error) -> i32 {
            match e {
                bldclass::Error::InvalidConfig(_) => EXIT_USAGE,
                _ => EXIT_DATA,
            }
        }
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(e) => core(e),
            CliError::Model(bldclass_model::Error::Divergence { .. }) => EXIT_DIVERGENCE,
            CliError::Model(bldclass_model::Error::Core(e)) => core(e),
            CliError::Model(_) => EXIT_DATA,
            CliError::File { .. } => EXIT_DATA,
        }
    }
}
