use std::path::PathBuf;

use herbnmt_core::analysis::AnalysisError;
use herbnmt_core::arnn::ArnnError;
use herbnmt_core::balance::BalanceError;
use herbnmt_core::corpus::CorpusError;
use herbnmt_core::nn::NnError;
use herbnmt_core::roundtrip::RoundTripError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error("missing input {0}; run the producing stage first")]
    MissingInput(PathBuf),
    #[error("invalid argument: {0}")]
    Usage(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Balance(#[from] BalanceError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Arnn(#[from] ArnnError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    RoundTrip(#[from] RoundTripError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Config(_) => "config",
            Error::Checkpoint { .. } => "checkpoint",
            Error::MissingInput(_) => "missing_input",
            Error::Usage(_) => "usage",
            Error::Corpus(_) => "corpus",
            Error::Balance(_) => "balance",
            Error::Nn(_) => "nn",
            Error::Arnn(_) => "arnn",
            Error::Analysis(_) => "analysis",
            Error::RoundTrip(_) => "roundtrip",
            Error::Csv(_) => "csv",
        }
    }

    /// One line of JSON for stderr.
    pub fn to_json_line(&self, stage: &str) -> String {
        serde_json::json!({ "error": self.kind(), "stage": stage, "message": self.to_string() }).to_string()
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
