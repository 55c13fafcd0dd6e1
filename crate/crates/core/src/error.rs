// SPDX-License-Identifier: Apache-2.0

use std::fmt;

/// Errors raised anywhere in the library.
///
/// The variants are coarse on purpose: callers (the CLI in particular) map
/// them onto exit codes, so each one names a class of failure rather than a
/// specific call site. The message carries the specifics.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure classes, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn dim(msg: impl fmt::Display) -> Self {
        Error::Dimension(msg.to_string())
    }

    pub fn config(msg: impl fmt::Display) -> Self {
        Error::Config(msg.to_string())
    }

    pub fn usage(msg: impl fmt::Display) -> Self {
        Error::Usage(msg.to_string())
    }

    pub fn numeric(msg: impl fmt::Display) -> Self {
        Error::Numeric(msg.to_string())
    }

    pub fn format(offset: u64, msg: impl fmt::Display) -> Self {
        Error::Format {
            offset,
            message: msg.to_string(),
        }
    }

    /// I/O failure annotated with the file involved.
    pub fn io_at(path: &std::path::Path, e: std::io::Error) -> Self {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    }

    /// Prefix the message with a layer or component path.
    pub fn at(self, path: &str) -> Self {
        match self {
            Error::Dimension(m) => Error::Dimension(format!("{path}: {m}")),
            Error::Config(m) => Error::Config(format!("{path}: {m}")),
            Error::Usage(m) => Error::Usage(format!("{path}: {m}")),
            Error::Numeric(m) => Error::Numeric(format!("{path}: {m}")),
            Error::UndefinedMetric(m) => Error::UndefinedMetric(format!("{path}: {m}")),
            Error::Format { offset, message } => Error::Format {
                offset,
                message: format!("{path}: {message}"),
            },
            other => other,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Usage(_) | Error::Config(_) => ErrorClass::Usage,
            Error::Dimension(_) | Error::Format { .. } | Error::Io(_) => ErrorClass::Data,
            Error::Numeric(_) | Error::UndefinedMetric(_) => ErrorClass::Numeric,
        }
    }
}
