use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}: csv error: {source}")]
    Csv {
        file: String,
        #[source]
        source: csv::Error,
    },

    /// Ingestion or referential-integrity failure. `row` is the 1-based data
    /// row (header excluded) when the problem is tied to a single row.
    #[error("{file}{}: {message}", row.map(|r| format!(" row {r}")).unwrap_or_default())]
    Validation { file: String, row: Option<usize>, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("score undefined: {0}")]
    UndefinedScore(String),

    #[error("degenerate distribution: {0}")]
    Degenerate(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite parameters: {0}")]
    NonFinite(String),

    #[error("no responses to fit{}", .0.as_ref().map(|s| format!(" for source {s}")).unwrap_or_default())]
    EmptyResponses(Option<String>),

    #[error("unknown codec {codec} for source {source_id}")]
    UnknownCodec { source_id: String, codec: String },

    #[error("unknown source {0}")]
    UnknownSource(String),

    #[error(
        "optimizer did not converge after {iterations} iterations \
         (nll {nll:.6}, gradient norm {grad_norm:.3e})"
    )]
    NotConverged { iterations: usize, nll: f64, grad_norm: f64, best: Vec<f64> },

    #[error("bootstrap: {failed} of {requested} replicate fits failed")]
    BootstrapFailures { failed: usize, requested: usize },
}

impl Error {
    pub(crate) fn validation(file: &str, row: Option<usize>, message: impl Into<String>) -> Self {
        Error::Validation { file: file.to_string(), row, message: message.into() }
    }

    /// True for input/ingestion failures, false for numerical ones.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Csv { .. }
                | Error::Validation { .. }
                | Error::Config(_)
                | Error::UnknownSource(_)
                | Error::UnknownCodec { .. }
        )
    }

    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Csv { .. } => "csv",
            Error::Validation { .. } => "validation",
            Error::Config(_) => "config",
            Error::UndefinedScore(_) => "undefined_score",
            Error::Degenerate(_) => "degenerate",
            Error::UndefinedCorrelation(_) => "undefined_correlation",
            Error::Domain(_) => "domain",
            Error::NonFinite(_) => "non_finite",
            Error::EmptyResponses(_) => "empty_responses",
            Error::UnknownCodec { .. } => "unknown_codec",
            Error::UnknownSource(_) => "unknown_source",
            Error::NotConverged { .. } => "not_converged",
            Error::BootstrapFailures { .. } => "bootstrap_failures",
        }
    }
}
