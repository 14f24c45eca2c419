use alloc::string::String;

use crate::storage::PageId;

/// Errors produced by the index engine.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("empty point set")]
    EmptyPointSet,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("unsupported dimensionality {0} (must be 2..=16)")]
    UnsupportedDimensionality(usize),
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("invalid bounding box: lo > hi on axis {axis}")]
    InvalidBox { axis: usize },
    #[error("invalid page layout: {0}")]
    InvalidLayout(String),
    #[error("page {page} out of range (page count {count})")]
    PageOutOfRange { page: PageId, count: u64 },
    #[error("page {0} is read-only")]
    ReadOnlyPage(PageId),
    #[error("page {0} is not resident in the buffer pool")]
    NotResident(PageId),
    #[error("buffer pool exhausted: all {0} frames are pinned")]
    BufferFull(usize),
    #[error("buffer of {pages} pages is too small; at least {required} required")]
    InsufficientBuffer { pages: usize, required: usize },
    #[error("node of {entries} entries does not fit in a page")]
    NodeOverflow { entries: usize },
    #[error("page count {found} does not match the expected {expected}")]
    PageCountMismatch { expected: usize, found: usize },
    #[error("corrupt page {page}: {reason}")]
    Corrupt { page: PageId, reason: String },
    #[error("dense-subspace recursion exceeded {0} levels")]
    RecursionLimit(usize),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("i/o failure: {0}")]
    Io(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
