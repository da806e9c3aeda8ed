use std::fmt;

use fairst::Error as CoreError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numeric => 4,
        }
    }

    fn name(self) -> &'static str {
        match self {
            ErrorKind::Config => "config",
            ErrorKind::Data => "data",
            ErrorKind::Numeric => "numeric",
        }
    }
}

/// A failure reported as one machine-parsable line:
/// `error code=<n> kind=<kind> [key=<dotted.key>] message="<text>"`.
#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub kind: ErrorKind,
    pub key: Option<String>,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Config,
            key: None,
            message: message.into(),
        }
    }

    pub fn config_key(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Config,
            key: Some(key.into()),
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Data,
            key: None,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "error code={} kind={}",
            self.exit_code(),
            self.kind.name()
        )?;
        if let Some(k) = &self.key {
            write!(f, " key={k}")?;
        }
        let msg = self
            .message
            .replace('\\', "\\\\")
            .replace('"', "\\\"")
            .replace('\n', " ");
        write!(f, " message=\"{msg}\"")
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let kind = match e {
            CoreError::NonFinite { .. } | CoreError::UndefinedCorrelation(_) => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        };
        Self {
            kind,
            key: None,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
