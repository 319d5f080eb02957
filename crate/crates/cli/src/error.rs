use std::path::PathBuf;

use qfuse_core::fusion::FusionError;
use qfuse_core::ingest::IngestError;
use qfuse_core::metrics::MetricError;
use qfuse_core::provider::ProviderError;
use qfuse_core::rbsim::SimError;
use qfuse_core::retrieval::RetrievalError;
use qfuse_core::textproc::TextError;
use qfuse_core::ValidationError;
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("missing artifact {artifact} at {}", path.display())]
    MissingArtifact { artifact: String, path: PathBuf },
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Backend(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::MissingArtifact { .. } | CliError::Input(_) | CliError::Io { .. } => 3,
            CliError::Backend(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::MissingArtifact { .. } => "missing_artifact",
            CliError::Input(_) => "input",
            CliError::Backend(_) => "backend",
            CliError::Io { .. } => "io",
        }
    }

    /// Single-line JSON description for stderr.
    pub fn to_json_line(&self) -> String {
        let mut v = json!({
            "error": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        });
        if let CliError::MissingArtifact { artifact, path } = self {
            v["artifact"] = json!(artifact);
            v["path"] = json!(path.display().to_string());
        }
        v.to_string()
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

macro_rules! input_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Input(e.to_string())
            }
        }
    )*};
}

input_error!(IngestError, FusionError, MetricError, RetrievalError, TextError, ValidationError);

impl From<ProviderError> for CliError {
    fn from(e: ProviderError) -> Self {
        match e {
            ProviderError::InvalidRequest(m) => CliError::Usage(m),
            ProviderError::Fixture(e) => e.into(),
            e @ (ProviderError::BackendUnavailable { .. } | ProviderError::BadResponse(_)) => {
                CliError::Backend(e.to_string())
            }
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Usage(e.to_string())
    }
}
