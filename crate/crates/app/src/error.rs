use faceprotect::Error;

/// Exit codes. Detection outcomes (0/1) are never reused for failures.
pub const EXIT_REAL: u8 = 0;
pub const EXIT_FAKE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_TRAINING: u8 = 4;
pub const EXIT_NO_FACE: u8 = 5;

#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    /// Failure while reading or using input data.
    pub fn data(e: Error) -> Self {
        Self::from(e)
    }

    /// Any failure while loading checkpoints counts as a configuration error.
    pub fn checkpoint(e: Error) -> Self {
        Self::new(EXIT_CONFIG, format!("checkpoint: {e}"))
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::Checkpoint { .. } | Error::SchemaMismatch(_) => EXIT_CONFIG,
            Error::TrainingAborted(_) => EXIT_TRAINING,
            Error::NoFaceFound(_) => EXIT_NO_FACE,
            _ => EXIT_DATA,
        };
        Self::new(code, e.to_string())
    }
}
