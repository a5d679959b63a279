use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Sizes of two collaborating objects disagree (environment vs policy, vector lengths).
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller-supplied argument is outside the operation's domain.
    #[error("argument error: {0}")]
    Argument(String),

    /// The operation needs an explicit transition model the environment does not provide.
    #[error("unsupported environment: {0}")]
    Unsupported(String),

    /// The gradient estimate overflowed during training.
    #[error("non-finite gradient at episode {episode}")]
    NonFiniteGradient {
        episode: usize,
        /// Records for every episode that completed before the abort.
        log: Box<crate::trainer::RunLog>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

pub(crate) fn arg_err(msg: impl Into<String>) -> Error {
    Error::Argument(msg.into())
}
