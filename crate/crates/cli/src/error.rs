use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// The config parsed but some values are unusable; `keys` names them.
    #[error("invalid config ({}): {message}", keys.join(", "))]
    Config { keys: Vec<String>, message: String },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("not found: {}", path.display())]
    NotFound { path: PathBuf },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed file {}: {message}", path.display())]
    Malformed { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] greenfn_core::Error),
}

impl CliError {
    pub(crate) fn config(keys: &[&str], message: impl Into<String>) -> CliError {
        CliError::Config {
            keys: keys.iter().map(|k| k.to_string()).collect(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> CliError {
        if source.kind() == std::io::ErrorKind::NotFound {
            CliError::NotFound { path: path.to_path_buf() }
        } else {
            CliError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
