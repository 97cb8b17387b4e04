use thiserror::Error;

/// Failures, split by exit status.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration, flags or missing calibration (exit 2).
    #[error("{0}")]
    Config(String),
    /// Unreadable or invalid input data (exit 3).
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
        }
    }
}

impl From<needlet_core::Error> for CliError {
    fn from(e: needlet_core::Error) -> Self {
        use needlet_core::Error as E;
        match e {
            E::CatalogParse { .. }
            | E::EmptyCatalog
            | E::TooFewEvents { .. }
            | E::TableFormat(_)
            | E::Io(_)
            | E::Json(_) => CliError::Data(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}
