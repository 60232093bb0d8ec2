use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] qsm_core::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("snapshot checksum mismatch (file corrupt or truncated)")]
    Checksum,

    #[error("malformed snapshot: {0}")]
    Format(String),

    #[error("scalar-curvature audit failed: max residual {residual:e} exceeds {tolerance:e}")]
    Audit { residual: f64, tolerance: f64 },

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.code(),
            CliError::Config(_) => "E_CONFIG",
            CliError::Io { .. } => "E_IO",
            CliError::Checksum => "E_CHECKSUM",
            CliError::Format(_) => "E_FORMAT",
            CliError::Audit { .. } => "E_AUDIT",
            CliError::Json(_) => "E_JSON",
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// `error[CODE]: message` on one line.
    pub fn line(&self) -> String {
        let msg = self.to_string().replace('\n', " ");
        format!("error[{}]: {}", self.code(), msg)
    }
}
