use thiserror::Error;

use crate::analysis::AnalysisError;
use crate::codebook::CodebookError;
use crate::corpus::CorpusError;
use crate::gateway::GatewayError;
use crate::metrics::MetricsError;
use crate::prompt::PromptError;
use crate::review::ReviewError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ENDPOINT: i32 = 3;
pub const EXIT_VALIDATION: i32 = 4;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Codebook(#[from] CodebookError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Review(#[from] ReviewError),
    #[error("run {run_id} incomplete: {failures} of {unit_count} units failed (first: {first})")]
    Incomplete {
        run_id: String,
        failures: usize,
        unit_count: usize,
        first: String,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.as_ref().display().to_string();
        move |source| Error::Io { path, source }
    }

    pub fn context(self, context: impl Into<String>) -> Error {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => EXIT_CONFIG,
            Error::Codebook(CodebookError::Io { .. }) => EXIT_OTHER,
            Error::Codebook(_) => EXIT_VALIDATION,
            Error::Corpus(CorpusError::Io { .. }) => EXIT_OTHER,
            Error::Corpus(CorpusError::SampleTooLarge { .. }) => EXIT_CONFIG,
            Error::Corpus(_) => EXIT_VALIDATION,
            Error::Gateway(GatewayError::Io { .. }) => EXIT_OTHER,
            Error::Gateway(_) => EXIT_CONFIG,
            Error::Prompt(PromptError::Io { .. }) => EXIT_OTHER,
            Error::Prompt(_) => EXIT_CONFIG,
            Error::Metrics(_) | Error::Analysis(_) => EXIT_VALIDATION,
            Error::Review(ReviewError::Io { .. }) => EXIT_OTHER,
            Error::Review(_) => EXIT_VALIDATION,
            Error::Incomplete { .. } => EXIT_ENDPOINT,
            Error::Io { .. } => EXIT_OTHER,
            Error::Context { source, .. } => source.exit_code(),
        }
    }
}
