//! Exit codes and the one-line error format.
//!
//! Every failure is printed to stderr as
//! `rainlane: error[<kind>]: <message>` where kind is `usage`, `data` or
//! `numerical`, matching exit codes 1, 2 and 3.

use std::fmt;

use rainlane_core::Error as CoreError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Numerical => 3,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ErrorKind::Usage => "usage",
            ErrorKind::Data => "data",
            ErrorKind::Numerical => "numerical",
        }
    }
}

/// A bad flag combination or value caught by the CLI itself.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Kind of the first classifiable cause in the chain; data by default.
pub fn classify(err: &anyhow::Error) -> ErrorKind {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return ErrorKind::Usage;
        }
        if let Some(core) = cause.downcast_ref::<CoreError>() {
            return match core {
                CoreError::Config(_) => ErrorKind::Usage,
                CoreError::Numerical(_) => ErrorKind::Numerical,
                _ => ErrorKind::Data,
            };
        }
    }
    ErrorKind::Data
}

/// The single stderr line for `err`.
pub fn error_line(err: &anyhow::Error) -> String {
    let kind = classify(err);
    let msg = format!("{err:#}").replace(['\n', '\r'], " ");
    format!("rainlane: error[{}]: {}", kind.label(), msg.trim())
}
