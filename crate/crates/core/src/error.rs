use thiserror::Error;

/// Errors raised by estimation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum MmdError {
    /// Malformed or inconsistent input data.
    #[error("input error: {0}")]
    Input(String),
    /// Invalid model, kernel or optimizer configuration.
    #[error("configuration error: {0}")]
    Config(String),
    /// The requested quantity does not exist for this model (no density, no closed form, ...).
    #[error("capability error: {0}")]
    Capability(String),
    /// The requested optimization method cannot be used for this model.
    #[error("dispatch error: {0}")]
    Dispatch(String),
    /// The objective is not finite at the starting point.
    #[error("initialization error: {0}")]
    Initialization(String),
    /// The O(n^2) estimator exceeds the configured sample-size budget.
    #[error("budget error: {0}")]
    Budget(String),
}

pub type Result<T> = std::result::Result<T, MmdError>;

pub(crate) fn input<S: Into<String>>(msg: S) -> MmdError {
    MmdError::Input(msg.into())
}

pub(crate) fn config<S: Into<String>>(msg: S) -> MmdError {
    MmdError::Config(msg.into())
}

pub(crate) fn capability<S: Into<String>>(msg: S) -> MmdError {
    MmdError::Capability(msg.into())
}
