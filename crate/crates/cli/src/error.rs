use std::fmt;
use std::process::ExitCode;

use gull_core::bitstream::BitstreamError;
use gull_core::{ConfigError, GullError};

/// Failure classes, each with its own process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Internal,
    Usage,
    Io,
    Weights,
    Stream,
    Audio,
    ModelMismatch,
}

impl ErrorKind {
    pub fn exit_status(self) -> u8 {
        match self {
            ErrorKind::Internal => 1,
            ErrorKind::Usage => 2,
            ErrorKind::Io => 3,
            ErrorKind::Weights => 4,
            ErrorKind::Stream => 5,
            ErrorKind::Audio => 6,
            ErrorKind::ModelMismatch => 7,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn new(kind: ErrorKind, error: impl Into<anyhow::Error>) -> Self {
        Self {
            kind,
            error: error.into(),
        }
    }

    pub fn msg(kind: ErrorKind, message: impl fmt::Display) -> Self {
        Self::new(kind, anyhow::anyhow!("{message}"))
    }

    pub fn context(self, context: impl fmt::Display + Send + Sync + 'static) -> Self {
        Self {
            kind: self.kind,
            error: self.error.context(context),
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.kind.exit_status())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl From<GullError> for CliError {
    fn from(e: GullError) -> Self {
        let kind = match &e {
            GullError::Weights(_) => ErrorKind::Weights,
            GullError::Bitstream(BitstreamError::SampleRateNotSupported { .. }) => ErrorKind::Audio,
            GullError::Bitstream(_) => ErrorKind::Stream,
            GullError::Config(ConfigError::UnsupportedSampleRate { .. }) => ErrorKind::Audio,
            GullError::Config(ConfigError::Parse(_)) => ErrorKind::Weights,
            GullError::Config(ConfigError::HierarchyOutOfRange { .. }) | GullError::OutOfRange { .. } => {
                ErrorKind::Usage
            }
            GullError::Audio(_) | GullError::ZeroEnergy(_) => ErrorKind::Audio,
            GullError::Config(ConfigError::Invalid(_)) | GullError::Shape(_) | GullError::Fixture(_) => {
                ErrorKind::Internal
            }
        };
        Self::new(kind, e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new(ErrorKind::Io, e)
    }
}

impl From<hound::Error> for CliError {
    fn from(e: hound::Error) -> Self {
        match e {
            hound::Error::IoError(io) => Self::new(ErrorKind::Io, io),
            other => Self::new(ErrorKind::Audio, other),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
