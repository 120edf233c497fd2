use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] cnma::CnmaError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}, line {line}: {message}")]
    MalformedRow { path: PathBuf, line: u64, message: String },
    #[error("{0}: file has no data rows")]
    EmptyTable(PathBuf),
    #[error("{path}: header must be '{expected}'")]
    BadHeader { path: PathBuf, expected: String },
    #[error("study '{0}' has several contrast rows but no se_baseline")]
    MissingBaselineSe(String),
    #[error("study '{study}' mixes baseline treatments '{first}' and '{second}'")]
    MixedBaseline { study: String, first: String, second: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    ConfigParse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error(transparent)]
    ConfigWrite(#[from] toml::ser::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }
}
