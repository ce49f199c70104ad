use std::path::PathBuf;

use drm_core::DrmError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),
    #[error("parse error on line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("region `{0}` does not occur in the input")]
    UnknownRegion(String),
    #[error("period `{0}` does not occur in the input")]
    UnknownPeriod(String),
    #[error("region `{0}` has no usable rows after filtering")]
    EmptyAfterFilter(String),
    #[error("{0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Core(#[from] DrmError),
}

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;

impl CliError {
    /// True when the reader of our output went away, e.g. a closed pipe.
    pub fn is_broken_pipe(&self) -> bool {
        let io = match self {
            CliError::Io(e) => Some(e),
            CliError::Csv(e) => match e.kind() {
                csv::ErrorKind::Io(e) => Some(e),
                _ => None,
            },
            _ => None,
        };
        io.is_some_and(|e| e.kind() == std::io::ErrorKind::BrokenPipe)
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Core(e) => core_exit_code(e),
            _ => EXIT_INPUT,
        }
    }
}

fn core_exit_code(e: &DrmError) -> i32 {
    if e.is_numerical() {
        return EXIT_NUMERICAL;
    }
    match e {
        DrmError::Neighbor { source, .. } => core_exit_code(source),
        DrmError::InvalidOption(_)
        | DrmError::ArityMismatch { .. }
        | DrmError::DuplicateBasis { .. }
        | DrmError::UnknownBasis(_) => EXIT_CONFIG,
        _ => EXIT_INPUT,
    }
}
