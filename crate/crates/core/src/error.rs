use std::fmt;

use thiserror::Error;

/// Which term of the composite objective produced a non-finite value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossTerm {
    Forward,
    Supervised,
    Unsupervised,
    Contrastive,
    Total,
    Update,
}

impl fmt::Display for LossTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            LossTerm::Forward => "forward activation",
            LossTerm::Supervised => "supervised loss",
            LossTerm::Unsupervised => "unsupervised loss",
            LossTerm::Contrastive => "contrastive loss",
            LossTerm::Total => "total loss",
            LossTerm::Update => "parameter update",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite {term} at iteration {iteration}")]
    NonFinite { term: LossTerm, iteration: u64 },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit status for this error: 1 configuration, 2 numerical,
    /// 3 I/O or file format.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Contract(_) => 1,
            Error::Degenerate(_) | Error::NonFinite { .. } => 2,
            Error::Format(_) | Error::Io(_) | Error::Csv(_) => 3,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
