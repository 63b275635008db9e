use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Core {
        context: String,
        source: bmpursuit::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    /// 3 for numerical failures, 2 for everything a user can fix in the
    /// inputs or configuration.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numeric(_) => 3,
            CliError::Core {
                source: bmpursuit::Error::Numeric(_),
                ..
            } => 3,
            _ => 2,
        }
    }
}

impl From<bmpursuit::Error> for CliError {
    fn from(source: bmpursuit::Error) -> Self {
        CliError::Core {
            context: "error".into(),
            source,
        }
    }
}

/// Attaches a context string to core errors.
pub trait Context<T> {
    fn context(self, what: impl Into<String>) -> Result<T>;
}

impl<T> Context<T> for bmpursuit::Result<T> {
    fn context(self, what: impl Into<String>) -> Result<T> {
        self.map_err(|source| CliError::Core {
            context: what.into(),
            source,
        })
    }
}
