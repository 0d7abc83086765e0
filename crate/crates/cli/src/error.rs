use std::fmt;

use hom_core::correlators::CorrelatorError;
use hom_core::estimators::{EstimatorError, FitError};
use hom_core::mc::{EventsError, SimError};

#[derive(Debug)]
pub enum CliError {
    Config { origin: String, line: Option<usize>, message: String },
    Data(String),
    Fit(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config { .. } => 2,
            CliError::Data(_) => 3,
            CliError::Fit(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config { origin, line: Some(line), message } => {
                write!(f, "config error in {origin}, line {line}: {message}")
            }
            CliError::Config { origin, line: None, message } => write!(f, "config error in {origin}: {message}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Fit(m) => write!(f, "fit error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

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

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<EventsError> for CliError {
    fn from(e: EventsError) -> Self {
        match e {
            EventsError::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        CliError::Fit(e.to_string())
    }
}

impl From<EstimatorError> for CliError {
    fn from(e: EstimatorError) -> Self {
        match e {
            EstimatorError::Fit(f) => f.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Config { origin: "scenario".into(), line: None, message: e.to_string() }
    }
}

impl From<CorrelatorError> for CliError {
    fn from(e: CorrelatorError) -> Self {
        CliError::Data(e.to_string())
    }
}
