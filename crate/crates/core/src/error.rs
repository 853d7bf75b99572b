use std::path::PathBuf;

use thiserror::Error;

use crate::chunk_store::ChunkId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// A single key on which both sides of a merge diverged.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeConflict {
    pub table: String,
    pub key: String,
    pub src: Option<String>,
    pub dst: Option<String>,
}

impl std::fmt::Display for MergeConflict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let show = |v: &Option<String>| v.clone().unwrap_or_else(|| "<deleted>".to_string());
        write!(
            f,
            "{}[{}]: src={} dst={}",
            self.table,
            self.key,
            show(&self.src),
            show(&self.dst)
        )
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("chunk {id}: {source}")]
    ChunkIo {
        id: ChunkId,
        #[source]
        source: std::io::Error,
    },
    #[error("not found: {0}")]
    NotFound(String),
    #[error("invalid recipe: {0}")]
    InvalidRecipe(String),
    #[error("materialization of {recipe} failed at row {key}: {reason}")]
    Materialization {
        recipe: ChunkId,
        key: String,
        reason: String,
    },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid range: lo > hi")]
    InvalidRange,
    #[error("constraint violation on keys [{}]", .keys.join(", "))]
    ConstraintViolation { keys: Vec<String> },
    #[error("trees use different chunking policies")]
    PolicyMismatch,
    #[error("corrupt tree: {0}")]
    CorruptTree(String),
    #[error("encoding error at row {pk}: {reason}")]
    Encoding { pk: String, reason: String },
    #[error("decoding error: {0}")]
    Decoding(String),
    #[error("tuple assembly error: {0}")]
    Assembly(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("commit addressed to {addressed}, but the head of branch {branch} is {head}")]
    NotHead {
        branch: String,
        addressed: String,
        head: String,
    },
    #[error("branch {0} is the target of a unidirectional sync and accepts no direct commits")]
    SyncTargetImmutable(String),
    #[error("branch name {0} is already taken")]
    NameTaken(String),
    #[error("merge conflict on {} key(s): {}", .0.len(), .0.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("; "))]
    MergeConflict(Vec<MergeConflict>),
    #[error("snapshots have different schemas")]
    SchemaMismatch,
    #[error("illegal sync topology: {0}")]
    IllegalSyncTopology(String),
    #[error("change is not compatible with the requested sync direction: {0}")]
    NotBidirectionallyCompatible(String),
    #[error("transform direction unavailable: {0}")]
    DirectionUnavailable(String),
    #[error("view error: {0}")]
    View(String),
    #[error("refusing to overwrite non-empty directory {0}")]
    RefusingToOverwrite(PathBuf),
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
