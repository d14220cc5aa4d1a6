use std::fmt;
use std::process::ExitCode;

/// A failure with its process exit status.
#[derive(Debug)]
pub enum CliError {
    /// I/O, parse or argument problems (exit 1).
    Io(String),
    /// Image content unusable for estimation (exit 2).
    Domain(String),
    /// A requested self-check failed (exit 3).
    Verification(String),
}

impl CliError {
    pub fn io(msg: impl Into<String>) -> Self {
        CliError::Io(msg.into())
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Io(_) => ExitCode::from(1),
            CliError::Domain(_) => ExitCode::from(2),
            CliError::Verification(_) => ExitCode::from(3),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Io(m) | CliError::Domain(m) | CliError::Verification(m) => f.write_str(m),
        }
    }
}

impl From<stainreg::Error> for CliError {
    fn from(e: stainreg::Error) -> Self {
        if e.is_domain() {
            CliError::Domain(e.to_string())
        } else {
            CliError::Io(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
