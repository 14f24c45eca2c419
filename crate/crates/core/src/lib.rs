//! Disk-based multidimensional point indexes built by scanning rather than
//! external sorting.
//!
//! The crate is `no_std` (with `alloc`). Storage is abstracted behind
//! [`storage::PageDevice`]; every page access goes through a
//! [`storage::BufferPool`], whose counters are the cost model.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod ambi;
pub mod baselines;
pub mod distsim;
pub mod error;
pub mod fmbi;
pub mod geometry;
pub mod index;
pub mod inspect;
pub mod query;
pub mod splittree;
pub mod storage;

pub use error::{Error, Result};
pub use geometry::{KnnQuery, Mbb, Point, Query, WindowQuery};
pub use index::{Dataset, Index, Method};
