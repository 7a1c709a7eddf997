use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("schema error at row {row}: {msg}")]
    Schema { row: usize, msg: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("cannot read {path}: {source}")]
    Input {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn schema(row: usize, msg: impl Into<String>) -> Self {
        Error::Schema {
            row,
            msg: msg.into(),
        }
    }

    /// True for errors caused by invalid user input rather than by a fault
    /// of the program or its environment.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::Numeric(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
