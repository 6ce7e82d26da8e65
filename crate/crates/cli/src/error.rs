use std::path::PathBuf;

use drmoe_core::Error as CoreError;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// A flag or config value failed validation.
    #[error("invalid value for {name}: {reason}")]
    Invalid { name: String, reason: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Malformed input file; `line` is 1-based.
    #[error("{}:{line}: {reason}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("config {}: {reason}", path.display())]
    Config { path: PathBuf, reason: String },
    #[error("checkpoint {}: {reason}", path.display())]
    Checkpoint { path: PathBuf, reason: String },
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        CliError::Invalid {
            name: name.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Renames a core config error after the flag that carries the field.
    pub fn from_flag_field(err: CoreError) -> Self {
        match err {
            CoreError::InvalidConfig { field, reason } => {
                CliError::invalid(format!("--{}", field.replace('_', "-")), reason)
            }
            other => CliError::Core(other),
        }
    }

    /// 2 for validation failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid { .. } | CliError::Config { .. } => 2,
            CliError::Core(CoreError::InvalidConfig { .. }) => 2,
            _ => 1,
        }
    }
}
