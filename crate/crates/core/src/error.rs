use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing manifest in {0}")]
    MissingManifest(PathBuf),

    #[error("malformed header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("truncated payload in {path}: expected {expected} bytes, found {found}")]
    TruncatedPayload {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("manifest/file mismatch for {path}: {reason}")]
    ManifestMismatch { path: PathBuf, reason: String },

    #[error("malformed record: {0}")]
    Malformed(String),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },

    #[error("unknown layer kind `{0}`")]
    UnknownLayer(String),

    #[error("invalid architecture: {0}")]
    Architecture(String),

    #[error("checkpoint version mismatch: file has {found}, expected {expected}")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("architecture descriptor mismatch: checkpoint is `{found}`, expected `{expected}`")]
    DescriptorMismatch { expected: String, found: String },

    #[error("missing pseudo-label for video {video_id} clip {clip_index}")]
    MissingPseudoLabel { video_id: String, clip_index: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("cache entry {0} is corrupted (content hash mismatch)")]
    CacheCorrupted(PathBuf),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn in_stage(self, stage: &str) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }

    /// Process exit code for the CLI: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::UnknownLayer(_) | Error::Architecture(_) => 2,
            Error::Numeric(_) => 4,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}
