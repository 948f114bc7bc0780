use std::fmt;
use std::path::Path;

/// Exit status 1: bad arguments, missing or malformed input.
pub const EXIT_INVALID: i32 = 1;
/// Exit status 2: the computation itself failed (NaN loss, failed verification).
pub const EXIT_NUMERIC: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    Invalid(String),
    Numeric(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        CliError::Invalid(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        CliError::Numeric(msg.into())
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Invalid(format!("{}: {err}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => EXIT_INVALID,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Invalid(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<cgl_core::Error> for CliError {
    fn from(e: cgl_core::Error) -> Self {
        match e {
            cgl_core::Error::Numeric(_) => CliError::Numeric(e.to_string()),
            other => CliError::Invalid(other.to_string()),
        }
    }
}
