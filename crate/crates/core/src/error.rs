use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("rank {rank} exceeds the largest admissible rank {limit}")]
    RankTooLarge { rank: usize, limit: usize },

    #[error("singular system in {0} (beyond ridge tolerance)")]
    Singular(&'static str),

    #[error("decomposition of slice `{slice}` failed: {reason}")]
    Decomposition { slice: String, reason: String },

    #[error("slice `{slice}`: {source}")]
    Slice {
        slice: String,
        #[source]
        source: Box<Error>,
    },

    #[error("update {index}: {source}")]
    Update {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("unknown slice `{0}`")]
    UnknownSlice(String),

    #[error("duplicate slice id `{0}`")]
    DuplicateSlice(String),

    #[error("batch carries no rows")]
    EmptyBatch,

    #[error("the initialization window contains no slice")]
    EmptyInitialTensor,

    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },

    #[error("unsupported checkpoint format version {0}")]
    CheckpointVersion(u32),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Bincode(#[from] bincode::Error),
}

impl Error {
    pub(crate) fn in_slice(self, slice: &str) -> Self {
        Error::Slice {
            slice: slice.to_owned(),
            source: Box::new(self),
        }
    }

    pub(crate) fn at_update(self, index: usize) -> Self {
        Error::Update {
            index,
            source: Box::new(self),
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
