use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid language code {0:?}: expected two lowercase ASCII letters")]
    InvalidLanguageCode(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("corpus: {0}")]
    Corpus(String),

    #[error("corpus: question {question_id:?} is missing languages {missing:?}")]
    PartialRow {
        question_id: String,
        missing: Vec<String>,
    },

    #[error("langid: {0}")]
    LangId(String),

    #[error("matcher: {0}")]
    Matcher(String),

    #[error("metrics: {0}")]
    Metrics(String),

    #[error("checkpoint {path}: {kind}")]
    Container {
        path: PathBuf,
        kind: ContainerErrorKind,
    },

    #[error("tensor {name:?}: {message}")]
    Tensor { name: String, message: String },

    #[error("naming scheme: {0}")]
    Scheme(String),

    #[error("plan: {0}")]
    Plan(String),

    #[error("report: {0}")]
    Report(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
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
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContainerErrorKind {
    #[error("file is {file_len} bytes, too short for the 8-byte header length")]
    Truncated { file_len: u64 },
    #[error("header declares {declared} bytes but only {available} follow the length prefix")]
    HeaderLength { declared: u64, available: u64 },
    #[error("header is not a valid tensor table: {0}")]
    HeaderJson(String),
    #[error("tensor {tensor:?} has unknown dtype {dtype:?}")]
    UnknownDtype { tensor: String, dtype: String },
    #[error("tensor {tensor:?} spans {begin}..{end}, outside the {data_len}-byte data region")]
    OutOfBounds {
        tensor: String,
        begin: u64,
        end: u64,
        data_len: u64,
    },
    #[error("tensor {tensor:?} occupies {actual} bytes but dtype and shape need {expected}")]
    ByteLength {
        tensor: String,
        expected: u64,
        actual: u64,
    },
    #[error("tensors {first:?} and {second:?} overlap")]
    Overlap { first: String, second: String },
}
