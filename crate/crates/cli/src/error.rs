use std::path::Path;

use thiserror::Error;

/// Process exit status for each failure class.
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] gensep::Error),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data(_) => EXIT_DATA,
            CliError::Core(e) => match e {
                gensep::Error::Config(_) | gensep::Error::Usage(_) => EXIT_CONFIG,
                gensep::Error::Numerical(_) => EXIT_NUMERICAL,
                _ => EXIT_DATA,
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub(crate) fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Core(gensep::Error::Io { path: path.to_owned(), source })
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}
