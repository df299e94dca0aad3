use std::path::PathBuf;

use locrand_core::ErrorClass;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("cannot read config {path}: {source}")]
    ConfigIo {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("refusing to overwrite {0} (pass --force to replace existing outputs)")]
    Overwrite(PathBuf),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("render: table \"{0}\" is missing or empty")]
    MissingTable(String),
    #[error("render: table \"{table}\" is malformed: {detail}")]
    BadTable { table: String, detail: String },
    #[error(transparent)]
    Core(#[from] locrand_core::Error),
}

impl CliError {
    /// 2 for configuration problems, 3 for data problems, 4 for degenerate
    /// inference.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::ConfigIo { .. } | CliError::Overwrite(_) => 2,
            CliError::Write { .. } | CliError::MissingTable(_) | CliError::BadTable { .. } => 3,
            CliError::Core(e) => match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Data => 3,
                ErrorClass::Degenerate => 4,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
