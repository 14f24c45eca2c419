use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use super::PageId;
use crate::error::{Error, Result};

/// Fixed-size page storage. Implementations do no caching and no
/// accounting; both live in [`BufferPool`](super::BufferPool).
pub trait PageDevice {
    fn page_size(&self) -> usize;
    fn page_count(&self) -> u64;
    fn read_page(&mut self, id: PageId, buf: &mut [u8]) -> Result<()>;
    fn write_page(&mut self, id: PageId, buf: &[u8]) -> Result<()>;
    /// Appends a zeroed page and returns its id.
    fn grow(&mut self) -> Result<PageId>;
}

impl<D: PageDevice + ?Sized> PageDevice for Box<D> {
    fn page_size(&self) -> usize {
        (**self).page_size()
    }
    fn page_count(&self) -> u64 {
        (**self).page_count()
    }
    fn read_page(&mut self, id: PageId, buf: &mut [u8]) -> Result<()> {
        (**self).read_page(id, buf)
    }
    fn write_page(&mut self, id: PageId, buf: &[u8]) -> Result<()> {
        (**self).write_page(id, buf)
    }
    fn grow(&mut self) -> Result<PageId> {
        (**self).grow()
    }
}

impl<D: PageDevice + ?Sized> PageDevice for &mut D {
    fn page_size(&self) -> usize {
        (**self).page_size()
    }
    fn page_count(&self) -> u64 {
        (**self).page_count()
    }
    fn read_page(&mut self, id: PageId, buf: &mut [u8]) -> Result<()> {
        (**self).read_page(id, buf)
    }
    fn write_page(&mut self, id: PageId, buf: &[u8]) -> Result<()> {
        (**self).write_page(id, buf)
    }
    fn grow(&mut self) -> Result<PageId> {
        (**self).grow()
    }
}

/// In-memory page file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemDevice {
    page_size: usize,
    data: Vec<u8>,
}

impl MemDevice {
    pub fn new(page_size: usize) -> Self {
        Self {
            page_size,
            data: Vec::new(),
        }
    }

    /// Wraps raw bytes holding whole pages.
    pub fn from_bytes(page_size: usize, data: Vec<u8>) -> Result<Self> {
        if page_size == 0 || !data.len().is_multiple_of(page_size) {
            return Err(Error::InvalidArgument(alloc::format!(
                "{} bytes is not a whole number of {page_size}-byte pages",
                data.len()
            )));
        }
        Ok(Self { page_size, data })
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn page(&self, id: PageId) -> Option<&[u8]> {
        let start = (id as usize).checked_mul(self.page_size)?;
        self.data.get(start..start + self.page_size)
    }

    fn range(&self, id: PageId) -> Result<core::ops::Range<usize>> {
        if id >= self.page_count() {
            return Err(Error::PageOutOfRange {
                page: id,
                count: self.page_count(),
            });
        }
        let start = id as usize * self.page_size;
        Ok(start..start + self.page_size)
    }
}

impl PageDevice for MemDevice {
    fn page_size(&self) -> usize {
        self.page_size
    }

    fn page_count(&self) -> u64 {
        (self.data.len() / self.page_size) as u64
    }

    fn read_page(&mut self, id: PageId, buf: &mut [u8]) -> Result<()> {
        let r = self.range(id)?;
        buf.copy_from_slice(&self.data[r]);
        Ok(())
    }

    fn write_page(&mut self, id: PageId, buf: &[u8]) -> Result<()> {
        let r = self.range(id)?;
        self.data[r].copy_from_slice(buf);
        Ok(())
    }

    fn grow(&mut self) -> Result<PageId> {
        let id = self.page_count();
        self.data.resize(self.data.len() + self.page_size, 0);
        Ok(id)
    }
}

/// A read-only lower device with a writable upper device stacked above it.
///
/// Page ids below the base page count address the base; higher ids address
/// the top device, shifted down by that count. Builds read a dataset from
/// the base and write everything they create into the top, which is what
/// gets persisted as the index.
#[derive(Debug, Clone)]
pub struct Overlay<B, T> {
    base: B,
    top: T,
    base_count: u64,
}

impl<B: PageDevice, T: PageDevice> Overlay<B, T> {
    pub fn new(base: B, top: T) -> Result<Self> {
        if base.page_size() != top.page_size() {
            return Err(Error::InvalidArgument(alloc::format!(
                "page size mismatch: base {} vs top {}",
                base.page_size(),
                top.page_size()
            )));
        }
        let base_count = base.page_count();
        Ok(Self {
            base,
            top,
            base_count,
        })
    }

    pub fn base_count(&self) -> u64 {
        self.base_count
    }

    pub fn base(&self) -> &B {
        &self.base
    }

    pub fn top(&self) -> &T {
        &self.top
    }

    pub fn into_parts(self) -> (B, T) {
        (self.base, self.top)
    }
}

impl<B: PageDevice, T: PageDevice> PageDevice for Overlay<B, T> {
    fn page_size(&self) -> usize {
        self.top.page_size()
    }

    fn page_count(&self) -> u64 {
        self.base_count + self.top.page_count()
    }

    fn read_page(&mut self, id: PageId, buf: &mut [u8]) -> Result<()> {
        if id < self.base_count {
            self.base.read_page(id, buf)
        } else {
            self.top.read_page(id - self.base_count, buf)
        }
    }

    fn write_page(&mut self, id: PageId, buf: &[u8]) -> Result<()> {
        if id < self.base_count {
            Err(Error::ReadOnlyPage(id))
        } else {
            self.top.write_page(id - self.base_count, buf)
        }
    }

    fn grow(&mut self) -> Result<PageId> {
        Ok(self.top.grow()? + self.base_count)
    }
}

/// Placeholder base for an overlay whose lower pages are not available,
/// e.g. a persisted index reopened without its source dataset.
#[derive(Debug, Clone, Copy)]
pub struct Absent {
    page_size: usize,
    count: u64,
}

impl Absent {
    pub fn new(page_size: usize, count: u64) -> Self {
        Self { page_size, count }
    }
}

impl PageDevice for Absent {
    fn page_size(&self) -> usize {
        self.page_size
    }
    fn page_count(&self) -> u64 {
        self.count
    }
    fn read_page(&mut self, id: PageId, _buf: &mut [u8]) -> Result<()> {
        Err(Error::Io(alloc::format!("page {id} belongs to a detached base file")))
    }
    fn write_page(&mut self, id: PageId, _buf: &[u8]) -> Result<()> {
        Err(Error::ReadOnlyPage(id))
    }
    fn grow(&mut self) -> Result<PageId> {
        Err(Error::Io("cannot grow a detached base".into()))
    }
}

/// Zeroed scratch page.
pub fn blank_page(page_size: usize) -> Box<[u8]> {
    vec![0u8; page_size].into_boxed_slice()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mem_device_grow_and_roundtrip() {
        let mut d = MemDevice::new(64);
        assert_eq!(d.grow().unwrap(), 0);
        assert_eq!(d.grow().unwrap(), 1);
        let page = [7u8; 64];
        d.write_page(1, &page).unwrap();
        let mut buf = [0u8; 64];
        d.read_page(1, &mut buf).unwrap();
        assert_eq!(buf, page);
        d.read_page(0, &mut buf).unwrap();
        assert_eq!(buf, [0u8; 64]);
        assert!(matches!(
            d.read_page(2, &mut buf),
            Err(Error::PageOutOfRange { page: 2, count: 2 })
        ));
    }

    #[test]
    fn overlay_routes_ids() {
        let mut base = MemDevice::new(64);
        base.grow().unwrap();
        base.write_page(0, &[1u8; 64]).unwrap();
        let mut o = Overlay::new(base, MemDevice::new(64)).unwrap();
        assert_eq!(o.grow().unwrap(), 1);
        o.write_page(1, &[2u8; 64]).unwrap();
        assert_eq!(o.write_page(0, &[3u8; 64]), Err(Error::ReadOnlyPage(0)));
        let mut buf = [0u8; 64];
        o.read_page(0, &mut buf).unwrap();
        assert_eq!(buf, [1u8; 64]);
        o.read_page(1, &mut buf).unwrap();
        assert_eq!(buf, [2u8; 64]);
        assert_eq!(o.top().page_count(), 1);
    }
}
