use std::path::Path;

use serde_json::json;

/// Exit status 1.
pub const EXIT_VALIDATION: i32 = 1;
/// Exit status 2.
pub const EXIT_IO: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{path}: line {line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn validation(e: impl std::fmt::Display) -> Self {
        CliError::Validation(e.to_string())
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::Parse { .. } => EXIT_VALIDATION,
            CliError::Io { .. } => EXIT_IO,
        }
    }

    /// One-line JSON error report for stderr.
    pub fn report(&self) -> String {
        let v = match self {
            CliError::Validation(m) => json!({ "error": "validation", "message": m }),
            CliError::Parse { path, line, message } => {
                json!({ "error": "parse", "path": path, "line": line, "message": message })
            }
            CliError::Io { path, source } => json!({ "error": "io", "path": path, "message": source.to_string() }),
        };
        v.to_string()
    }
}

macro_rules! validation_from {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::validation(e)
            }
        })*
    };
}

validation_from!(
    langadapt_core::corpus::CorpusError,
    langadapt_core::sft::SftError,
    langadapt_core::metrics::MetricError,
    langadapt_core::metrics::PerplexityError,
    langadapt_core::adapter::AdapterError,
    langadapt_core::adapter::TrainError,
    langadapt_core::kv::KvError,
    langadapt_core::tokenize::TokenizeError
);
