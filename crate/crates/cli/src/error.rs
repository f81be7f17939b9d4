use std::path::Path;

use serde::Serialize;

/// Process exit codes.
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_SCHEMA: i32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorKind {
    Config,
    Numerical,
    Schema,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => EXIT_CONFIG,
            ErrorKind::Numerical => EXIT_NUMERICAL,
            ErrorKind::Schema => EXIT_SCHEMA,
        }
    }
}

/// A stage failure with the category that selects the exit code.
#[derive(Debug, Clone, Serialize, thiserror::Error)]
#[error("{stage} failed ({reason}): {message}")]
pub struct CliError {
    pub kind: ErrorKind,
    pub stage: String,
    /// Short machine-readable reason, e.g. `coverage` or `band-clipping`.
    pub reason: String,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn new(kind: ErrorKind, stage: &str, reason: &str, message: impl Into<String>) -> Self {
        Self {
            kind,
            stage: stage.to_string(),
            reason: reason.to_string(),
            message: message.into(),
        }
    }

    pub fn config(stage: &str, message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Config, stage, "config", message)
    }

    pub fn io(stage: &str, path: &Path, err: std::io::Error) -> Self {
        Self::new(ErrorKind::Config, stage, "io", format!("{}: {err}", path.display()))
    }

    /// Categorises a library error raised while running `stage`.
    pub fn from_core(stage: &str, err: dotspec::Error) -> Self {
        use dotspec::Error as E;
        let (kind, reason) = match &err {
            E::Config(_) | E::InvalidArgument(_) | E::NegativeField(_) => (ErrorKind::Config, "config"),
            E::Io(_) => (ErrorKind::Config, "io"),
            E::Schema { .. } => (ErrorKind::Schema, "schema"),
            E::Parse(_) => (ErrorKind::Schema, "parse"),
            E::TimeOutOfRange { .. } | E::SingularPoint(_) => (ErrorKind::Numerical, "domain"),
            E::ClippedPower { .. } => (ErrorKind::Numerical, "clipped-power"),
            E::BandClipping { .. } => (ErrorKind::Numerical, "band-clipping"),
            E::TooFewModes(_) => (ErrorKind::Numerical, "too-few-modes"),
            E::NonConvergence { .. } => (ErrorKind::Numerical, "non-convergence"),
            E::DegenerateFit(_) => (ErrorKind::Numerical, "degenerate-fit"),
            E::NoDecay(_) => (ErrorKind::Numerical, "no-decay"),
            E::Coverage(_) => (ErrorKind::Numerical, "coverage"),
        };
        Self::new(kind, stage, reason, err.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }

    /// One-line JSON record for stderr.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).unwrap_or_else(|_| format!("{{\"message\":{:?}}}", self.message))
    }
}

/// Attaches a stage name to library results.
pub trait StageExt<T> {
    fn stage(self, stage: &str) -> CliResult<T>;
}

impl<T> StageExt<T> for dotspec::Result<T> {
    fn stage(self, stage: &str) -> CliResult<T> {
        self.map_err(|e| CliError::from_core(stage, e))
    }
}
