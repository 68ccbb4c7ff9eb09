use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] dris_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed input file.
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("config: {0}")]
    Config(String),

    /// A file that parses but does not follow the expected schema or version.
    #[error("schema: {0}")]
    Schema(String),

    #[error("seed {seed}: {source}")]
    Seed {
        seed: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.to_string(),
        }
    }

    /// Process exit status: 1 for numerical or statistical failures, 2 for
    /// anything the caller can fix by changing its input.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Core(e) => match e {
                dris_core::Error::Parameter { .. } | dris_core::Error::Dimension { .. } => 2,
                _ => 1,
            },
            Error::Seed { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}
