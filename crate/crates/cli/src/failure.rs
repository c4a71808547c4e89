//! Command failures and their exit codes.

use std::fmt;

use serde::Serialize;

/// Failure of a command run.
#[derive(Debug)]
pub enum Failure {
    /// Unreadable, malformed or inconsistent configuration (exit 2).
    Config(String),
    /// Invalid model or parameter rejected by the library (exit 2).
    Input(orbitlab::Error),
    /// Numerical failure inside the library (exit 3).
    Numeric(orbitlab::Error),
    /// Output could not be written (exit 3).
    Io(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) | Failure::Input(_) => 2,
            Failure::Numeric(_) | Failure::Io(_) => 3,
        }
    }

    pub fn artifact(&self) -> ErrorArtifact {
        let (category, kind) = match self {
            Failure::Config(_) => ("config", "config"),
            Failure::Input(e) => ("config", e.kind()),
            Failure::Numeric(e) => ("numeric", e.kind()),
            Failure::Io(_) => ("io", "io"),
        };
        ErrorArtifact {
            exit_code: self.exit_code(),
            category,
            kind,
            message: self.to_string(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "{m}"),
            Failure::Input(e) | Failure::Numeric(e) => write!(f, "{e}"),
            Failure::Io(m) => write!(f, "{m}"),
        }
    }
}

impl From<orbitlab::Error> for Failure {
    /// Input errors raised while building models count as configuration
    /// errors; everything else is numerical.
    fn from(e: orbitlab::Error) -> Self {
        use orbitlab::Error as E;
        match e {
            E::Syntax { .. }
            | E::UnknownIdentifier { .. }
            | E::VariableOutOfRange { .. }
            | E::Model(_)
            | E::InvalidParameter(_) => Failure::Input(e),
            other => Failure::Numeric(other),
        }
    }
}

/// Machine-readable error written to `error.json`.
#[derive(Debug, Serialize)]
pub struct ErrorArtifact {
    pub exit_code: i32,
    pub category: &'static str,
    pub kind: &'static str,
    pub message: String,
}
