use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("runs cannot be compared: {0}")]
    IncompatibleRuns(String),
    #[error("run directory problem: {0}")]
    RunDir(String),
    #[error(transparent)]
    Core(#[from] grnn::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
