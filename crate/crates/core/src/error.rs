use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A malformed line in a corpus, docstore, model or other artifact file.
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    /// Bad configuration or CLI arguments.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// An upstream artifact required by a stage is missing.
    #[error("missing artifact {path}: run the `{stage}` stage first")]
    MissingArtifact { stage: &'static str, path: PathBuf },

    /// An artifact's recorded input digests no longer match the files on disk.
    #[error("stale artifact {path}: {msg}")]
    StaleArtifact { path: PathBuf, msg: String },

    /// Input data that parses but cannot be processed (empty vocabulary,
    /// k larger than the number of points, dimension mismatches...).
    #[error("{0}")]
    InvalidInput(String),
}

impl Error {
    pub fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), line, msg: msg.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code for the CLI: 2 for configuration errors, 3 for
    /// missing or stale upstream artifacts, 4 for data errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::MissingArtifact { .. } | Error::StaleArtifact { .. } => 3,
            Error::Io { .. } | Error::Parse { .. } | Error::InvalidInput(_) => 4,
        }
    }
}
