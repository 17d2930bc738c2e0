use std::path::PathBuf;

use thiserror::Error;

/// Errors raised while reading corpora, knowledge-base files and run inputs.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("document `{document_id}` has no #document_date")]
    MissingDate { document_id: String },

    #[error("invalid document: {0}")]
    InvalidDocument(String),

    #[error("knowledge base: {0}")]
    Kb(String),

    #[error("property {property}: cannot parse date `{value}`")]
    Date { property: String, value: String },

    #[error("embeddings: {0}")]
    Embeddings(String),

    #[error("game: {0}")]
    Game(String),

    #[error("evaluation: {0}")]
    Eval(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// True for errors caused by the content of input data rather than by configuration.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Config(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
