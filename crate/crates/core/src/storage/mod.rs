//! Page storage: devices, the LRU buffer pool, and page codecs.

mod device;
mod layout;
pub mod node;
mod page;
mod pool;

pub use device::{blank_page, Absent, MemDevice, Overlay, PageDevice};
pub use layout::{
    PageLayout, DATA_HEADER, DEFAULT_PAGE_SIZE, ENTRY_REF_BYTES, NODE_PAGE_HEADER, NODE_SLOT_HEADER,
};
pub use page::{data_page_len, data_page_mbb, decode_points, decode_points_into, encode_points};
pub(crate) use page::{get_f64, get_u16, get_u32, put_f64, put_u16, put_u32};
pub use pool::{BufferPool, IoStats};

pub type PageId = u64;
