use std::fmt;
use std::process::ExitCode;

use dualhand::Error;

/// A command failure, classified by what the user has to fix.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Data(String),
    Numerical(String),
}

impl Failure {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            Failure::Config(_) => 3,
            Failure::Data(_) => 4,
            Failure::Numerical(_) => 5,
        })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Failure::Config(_) => "config",
            Failure::Data(_) => "data",
            Failure::Numerical(_) => "numerical",
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) | Failure::Data(m) | Failure::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::InvalidParameter(_) | Error::ConfigMismatch { .. } => Failure::Config(msg),
            Error::NonFiniteLoss { .. }
            | Error::InitializationFailed { .. }
            | Error::Degenerate(_)
            | Error::DegenerateMean(_) => Failure::Numerical(msg),
            Error::InvalidInput(_)
            | Error::Io { .. }
            | Error::Format(_)
            | Error::VersionMismatch { .. }
            | Error::Checksum
            | Error::TemplateMismatch { .. } => Failure::Data(msg),
        }
    }
}

pub type Outcome<T = ()> = Result<T, Failure>;

/// Tags an output-side I/O error as a data failure.
pub fn io_failure(path: &std::path::Path, e: std::io::Error) -> Failure {
    Failure::Data(format!("I/O error on {}: {e}", path.display()))
}
