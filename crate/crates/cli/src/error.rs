use std::fmt;

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Usage = 1,
    Data = 2,
    Runtime = 3,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn code(&self) -> u8 {
        self.kind as u8
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Tag an error with the exit code it should produce.
pub trait Classify<T> {
    fn usage(self) -> CliResult<T>;
    fn data(self) -> CliResult<T>;
    fn runtime(self) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn usage(self) -> CliResult<T> {
        self.map_err(|e| CliError { kind: ExitKind::Usage, error: e.into() })
    }
    fn data(self) -> CliResult<T> {
        self.map_err(|e| CliError { kind: ExitKind::Data, error: e.into() })
    }
    fn runtime(self) -> CliResult<T> {
        self.map_err(|e| CliError { kind: ExitKind::Runtime, error: e.into() })
    }
}
