use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by network evaluation, the trainers and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("gradient descent diverged: non-finite loss at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),

    #[error("r-squared is undefined: observations have zero variance")]
    UndefinedRSquared,

    #[error("assimilation step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("ES-MDA iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("seed {seed}: {source}")]
    Seed {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config file: {0}")]
    ConfigFile(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: usize, found: usize) -> Self {
        Error::Dimension {
            context,
            expected,
            found,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    /// Short machine-readable tag for the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::InvalidConfig(_) | Error::ConfigFile(_) => "config",
            Error::Divergence { .. } => "divergence",
            Error::LinearAlgebra(_) => "linalg",
            Error::UndefinedRSquared => "metric",
            Error::Step { source, .. }
            | Error::Iteration { source, .. }
            | Error::Seed { source, .. } => source.kind(),
            Error::Io { .. } => "io",
            Error::Csv(_) | Error::Json(_) => "serialization",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
