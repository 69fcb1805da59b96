use std::path::PathBuf;

use supericl_core::eval::EvalError;
use supericl_core::{LlmError, PluginError, PromptError, SampleError, SchemaError};

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: malformed record: {reason}", path.display())]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{}:{line}: unknown label {value:?}", path.display())]
    UnknownLabel {
        path: PathBuf,
        line: usize,
        value: String,
    },
    #[error("{}:{line}: missing field {key:?}", path.display())]
    MissingField {
        path: PathBuf,
        line: usize,
        key: String,
    },
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Plugin(#[from] PluginError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("output directory {} already holds a run; pass --overwrite to replace it", .0.display())]
    OutputExists(PathBuf),
    #[error("example {id:?}: {source}")]
    Example {
        id: String,
        #[source]
        source: Box<HarnessError>,
    },
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 config, 2 data, 3 provider failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            HarnessError::Llm(_) => 3,
            HarnessError::Plugin(PluginError::Transport(_) | PluginError::BadResponse(_)) => 3,
            HarnessError::Example { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}
