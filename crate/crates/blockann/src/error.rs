use crate::search::SearchStats;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimensionality mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("k={k} out of range ({n} candidates available)")]
    KOutOfRange { k: usize, n: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("node id {id} out of range ({n} nodes)")]
    NodeOutOfRange { id: u32, n: u64 },

    #[error("metadata does not fit in one {block_size}-byte block: needs {needed} bytes")]
    MetadataOverflow { needed: usize, block_size: usize },

    #[error("corrupt index file at byte {offset}: {reason}")]
    Corrupt { offset: u64, reason: String },

    #[error("codebook mismatch: {0}")]
    CodebookMismatch(String),

    /// I/O failure mid-search; carries the counters accumulated so far.
    #[error("search aborted after {} hops: {source}", stats.hops)]
    SearchAborted {
        stats: Box<SearchStats>,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
