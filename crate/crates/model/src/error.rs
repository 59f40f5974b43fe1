use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] bldclass::Error),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("{}", divergence_message(.epoch, .message))]
    Divergence { epoch: Option<usize>, message: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

fn divergence_message(epoch: &Option<usize>, message: &str) -> String {
    match epoch {
        Some(e) => format!("training diverged at epoch {e}: {message}"),
        None => format!("training diverged: {message}"),
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn config(message: impl Into<String>) -> Error {
        Error::Core(bldclass::Error::InvalidConfig(message.into()))
    }

    pub fn invalid_input(message: impl Into<String>) -> Error {
        Error::Core(bldclass::Error::InvalidInput(message.into()))
    }

    pub fn invalid_state(message: impl Into<String>) -> Error {
        Error::Core(bldclass::Error::InvalidState(message.into()))
    }

    pub fn is_divergence(&self) -> bool {
        matches!(self, Error::Divergence { .. })
    }
}
