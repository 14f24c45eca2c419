use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use super::{PageDevice, PageId};
use crate::error::{Error, Result};

/// Page-I/O counters. Reads are buffer misses; writes are dirty evictions
/// plus explicit flushes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IoStats {
    pub reads: u64,
    pub writes: u64,
}

impl IoStats {
    pub fn total(&self) -> u64 {
        self.reads + self.writes
    }

    /// Counter delta since an earlier snapshot.
    pub fn since(&self, earlier: IoStats) -> IoStats {
        IoStats {
            reads: self.reads - earlier.reads,
            writes: self.writes - earlier.writes,
        }
    }
}

impl core::ops::Add for IoStats {
    type Output = IoStats;
    fn add(self, rhs: IoStats) -> IoStats {
        IoStats {
            reads: self.reads + rhs.reads,
            writes: self.writes + rhs.writes,
        }
    }
}

impl core::ops::AddAssign for IoStats {
    fn add_assign(&mut self, rhs: IoStats) {
        *self = *self + rhs;
    }
}

struct Frame {
    page: PageId,
    data: Box<[u8]>,
    dirty: bool,
    pins: u32,
    tick: u64,
}

/// LRU page cache over a [`PageDevice`] with pinning and I/O accounting.
///
/// Pinned frames are never evicted. Unpinned frames are kept in an LRU
/// order keyed by last-touch tick; the oldest is the victim.
pub struct BufferPool<D> {
    device: D,
    capacity: usize,
    frames: Vec<Frame>,
    table: BTreeMap<PageId, usize>,
    lru: BTreeMap<u64, usize>,
    spare: Vec<usize>,
    free_pages: Vec<PageId>,
    tick: u64,
    pinned: usize,
    stats: IoStats,
}

impl<D: PageDevice> BufferPool<D> {
    pub fn new(device: D, capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InsufficientBuffer {
                pages: 0,
                required: 1,
            });
        }
        Ok(Self {
            device,
            capacity,
            frames: Vec::new(),
            table: BTreeMap::new(),
            lru: BTreeMap::new(),
            spare: Vec::new(),
            free_pages: Vec::new(),
            tick: 0,
            pinned: 0,
            stats: IoStats::default(),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn page_size(&self) -> usize {
        self.device.page_size()
    }

    pub fn page_count(&self) -> u64 {
        self.device.page_count()
    }

    pub fn stats(&self) -> IoStats {
        self.stats
    }

    pub fn resident(&self) -> usize {
        self.table.len()
    }

    /// Number of distinct pinned pages.
    pub fn pinned(&self) -> usize {
        self.pinned
    }

    pub fn is_resident(&self, id: PageId) -> bool {
        self.table.contains_key(&id)
    }

    pub fn device(&self) -> &D {
        &self.device
    }

    pub fn device_mut(&mut self) -> &mut D {
        &mut self.device
    }

    /// Flushes every dirty frame and returns the device.
    pub fn into_device(mut self) -> Result<D> {
        self.flush_all()?;
        Ok(self.device)
    }

    /// Pages released by [`free_page`](Self::free_page) and not yet reused.
    pub fn free_list(&self) -> &[PageId] {
        &self.free_pages
    }

    fn check_range(&self, id: PageId) -> Result<()> {
        let count = self.device.page_count();
        if id >= count {
            return Err(Error::PageOutOfRange { page: id, count });
        }
        Ok(())
    }

    fn touch(&mut self, idx: usize) {
        self.tick += 1;
        let f = &mut self.frames[idx];
        if f.pins == 0 {
            self.lru.remove(&f.tick);
            self.lru.insert(self.tick, idx);
        }
        f.tick = self.tick;
    }

    /// Claims a frame for `id`, evicting if needed. Contents are left stale.
    fn claim(&mut self, id: PageId) -> Result<usize> {
        let idx = if let Some(i) = self.spare.pop() {
            i
        } else if self.frames.len() < self.capacity {
            self.frames.push(Frame {
                page: id,
                data: vec![0u8; self.device.page_size()].into_boxed_slice(),
                dirty: false,
                pins: 0,
                tick: 0,
            });
            self.frames.len() - 1
        } else {
            let (_, victim) = self.lru.pop_first().ok_or(Error::BufferFull(self.capacity))?;
            let f = &mut self.frames[victim];
            if f.dirty {
                self.device.write_page(f.page, &f.data)?;
                self.stats.writes += 1;
            }
            self.table.remove(&f.page);
            victim
        };
        let f = &mut self.frames[idx];
        f.page = id;
        f.dirty = false;
        f.pins = 0;
        self.tick += 1;
        f.tick = self.tick;
        self.lru.insert(self.tick, idx);
        self.table.insert(id, idx);
        Ok(idx)
    }

    fn fetch(&mut self, id: PageId) -> Result<usize> {
        if let Some(&idx) = self.table.get(&id) {
            self.touch(idx);
            return Ok(idx);
        }
        self.check_range(id)?;
        let idx = self.claim(id)?;
        let f = &mut self.frames[idx];
        if let Err(e) = self.device.read_page(id, &mut f.data) {
            self.release_frame(idx);
            return Err(e);
        }
        self.stats.reads += 1;
        Ok(idx)
    }

    fn release_frame(&mut self, idx: usize) {
        let f = &mut self.frames[idx];
        if f.pins == 0 {
            self.lru.remove(&f.tick);
        } else {
            self.pinned -= 1;
        }
        self.table.remove(&f.page);
        f.pins = 0;
        f.dirty = false;
        self.spare.push(idx);
    }

    /// Returns page contents, reading from the device on a miss.
    pub fn read(&mut self, id: PageId) -> Result<&[u8]> {
        let idx = self.fetch(id)?;
        Ok(&self.frames[idx].data)
    }

    /// Mutable page contents; the page is loaded if absent and marked dirty.
    pub fn page_mut(&mut self, id: PageId) -> Result<&mut [u8]> {
        let idx = self.fetch(id)?;
        let f = &mut self.frames[idx];
        f.dirty = true;
        Ok(&mut f.data)
    }

    /// Overwrites a whole page without reading its previous contents.
    pub fn put(&mut self, id: PageId, data: &[u8]) -> Result<()> {
        let idx = match self.table.get(&id) {
            Some(&idx) => {
                self.touch(idx);
                idx
            }
            None => {
                self.check_range(id)?;
                self.claim(id)?
            }
        };
        let f = &mut self.frames[idx];
        f.data.copy_from_slice(data);
        f.dirty = true;
        Ok(())
    }

    /// Allocates a page (reusing freed pages first) and installs it as a
    /// zeroed, dirty, resident frame.
    pub fn allocate(&mut self) -> Result<PageId> {
        let id = match self.free_pages.pop() {
            Some(id) => id,
            None => self.device.grow()?,
        };
        let idx = match self.claim(id) {
            Ok(idx) => idx,
            Err(e) => {
                self.free_pages.push(id);
                return Err(e);
            }
        };
        let f = &mut self.frames[idx];
        f.data.fill(0);
        f.dirty = true;
        Ok(id)
    }

    /// Pins a resident page so it cannot be evicted. Pins nest.
    pub fn pin(&mut self, id: PageId) -> Result<()> {
        let &idx = self.table.get(&id).ok_or(Error::NotResident(id))?;
        let f = &mut self.frames[idx];
        if f.pins == 0 {
            self.lru.remove(&f.tick);
            self.pinned += 1;
        }
        f.pins += 1;
        Ok(())
    }

    /// Reads a page and pins it.
    pub fn fetch_pinned(&mut self, id: PageId) -> Result<&[u8]> {
        let idx = self.fetch(id)?;
        self.pin(id)?;
        Ok(&self.frames[idx].data)
    }

    pub fn unpin(&mut self, id: PageId) -> Result<()> {
        let &idx = self.table.get(&id).ok_or(Error::NotResident(id))?;
        let f = &mut self.frames[idx];
        if f.pins == 0 {
            return Ok(());
        }
        f.pins -= 1;
        if f.pins == 0 {
            self.pinned -= 1;
            self.tick += 1;
            f.tick = self.tick;
            self.lru.insert(self.tick, idx);
        }
        Ok(())
    }

    pub fn is_pinned(&self, id: PageId) -> bool {
        self.table.get(&id).is_some_and(|&i| self.frames[i].pins > 0)
    }

    pub fn is_dirty(&self, id: PageId) -> bool {
        self.table.get(&id).is_some_and(|&i| self.frames[i].dirty)
    }

    /// Writes a dirty resident page to the device. Clean or absent pages
    /// cost nothing.
    pub fn flush(&mut self, id: PageId) -> Result<()> {
        if let Some(&idx) = self.table.get(&id) {
            let f = &mut self.frames[idx];
            if f.dirty {
                self.device.write_page(f.page, &f.data)?;
                self.stats.writes += 1;
                f.dirty = false;
            }
        }
        Ok(())
    }

    /// Flushes a page and drops it from the buffer.
    pub fn evict(&mut self, id: PageId) -> Result<()> {
        self.flush(id)?;
        if let Some(&idx) = self.table.get(&id) {
            self.release_frame(idx);
        }
        Ok(())
    }

    /// Flushes every dirty page in ascending page order.
    pub fn flush_all(&mut self) -> Result<()> {
        let dirty: Vec<PageId> = self
            .table
            .iter()
            .filter(|(_, &i)| self.frames[i].dirty)
            .map(|(&p, _)| p)
            .collect();
        for p in dirty {
            self.flush(p)?;
        }
        Ok(())
    }

    /// Drops a resident page without writing it back.
    pub fn discard(&mut self, id: PageId) {
        if let Some(&idx) = self.table.get(&id) {
            self.release_frame(idx);
        }
    }

    /// Discards a page and returns it to the allocator.
    pub fn free_page(&mut self, id: PageId) {
        self.discard(id);
        self.free_pages.push(id);
    }

    /// Flushes and empties the buffer, e.g. between a build and a query
    /// phase. Counters are kept.
    pub fn clear(&mut self) -> Result<()> {
        self.flush_all()?;
        self.frames.clear();
        self.table.clear();
        self.lru.clear();
        self.spare.clear();
        self.pinned = 0;
        Ok(())
    }
}

impl<D> core::fmt::Debug for BufferPool<D> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("BufferPool")
            .field("capacity", &self.capacity)
            .field("resident", &self.table.len())
            .field("pinned", &self.pinned)
            .field("stats", &self.stats)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::storage::MemDevice;
    use proptest::prelude::*;

    fn device(pages: u64) -> MemDevice {
        let mut d = MemDevice::new(16);
        for i in 0..pages {
            d.grow().unwrap();
            d.write_page(i, &[i as u8; 16]).unwrap();
        }
        d
    }

    #[test]
    fn repeated_read_hits() {
        let mut p = BufferPool::new(device(4), 1).unwrap();
        p.read(0).unwrap();
        p.read(0).unwrap();
        assert_eq!(p.stats(), IoStats { reads: 1, writes: 0 });
    }

    #[test]
    fn lru_trace_evicts_oldest() {
        let m = 5;
        let mut p = BufferPool::new(device(m as u64 + 1), m).unwrap();
        for i in 0..=m as u64 {
            p.read(i).unwrap();
        }
        p.read(0).unwrap();
        assert_eq!(p.stats().reads, m as u64 + 2);
    }

    #[test]
    fn whole_file_resident_after_warmup() {
        let mut p = BufferPool::new(device(8), 8).unwrap();
        for i in 0..8 {
            p.read(i).unwrap();
        }
        for i in [3, 1, 7, 0, 6, 2, 5, 4, 4, 0] {
            p.read(i).unwrap();
        }
        assert_eq!(p.stats().reads, 8);
    }

    #[test]
    fn allocation_ids_and_dirty_eviction() {
        let mut p = BufferPool::new(MemDevice::new(16), 2).unwrap();
        assert_eq!(p.stats(), IoStats::default());
        assert_eq!(p.allocate().unwrap(), 0);
        assert_eq!(p.allocate().unwrap(), 1);
        assert_eq!(p.allocate().unwrap(), 2);
        // page 0 was dirty when evicted
        assert_eq!(p.stats().writes, 1);
        p.flush(1).unwrap();
        assert_eq!(p.allocate().unwrap(), 3);
        // page 1 was clean when evicted
        assert_eq!(p.stats().writes, 2);
    }

    #[test]
    fn pinned_pages_survive() {
        let mut p = BufferPool::new(device(4), 2).unwrap();
        p.fetch_pinned(0).unwrap();
        p.read(1).unwrap();
        p.read(2).unwrap();
        p.read(3).unwrap();
        assert!(p.is_resident(0));
        p.read(0).unwrap();
        assert_eq!(p.stats().reads, 4);
        p.pin(3).unwrap();
        assert_eq!(p.read(1), Err(Error::BufferFull(2)));
        p.unpin(3).unwrap();
        p.read(1).unwrap();
    }

    #[test]
    fn freed_pages_are_reused() {
        let mut p = BufferPool::new(MemDevice::new(16), 4).unwrap();
        let a = p.allocate().unwrap();
        p.allocate().unwrap();
        p.free_page(a);
        assert_eq!(p.allocate().unwrap(), a);
        assert_eq!(p.page_count(), 2);
    }

    #[test]
    fn out_of_range_read() {
        let mut p = BufferPool::new(device(2), 2).unwrap();
        assert!(matches!(p.read(2), Err(Error::PageOutOfRange { .. })));
    }

    proptest! {
        #[test]
        fn buffer_is_transparent_and_counters_sound(
            cap in 1usize..6,
            ops in proptest::collection::vec((0u64..10, any::<bool>(), any::<u8>()), 1..200),
        ) {
            let mut pool = BufferPool::new(device(10), cap).unwrap();
            let mut shadow: Vec<[u8; 16]> = (0..10).map(|i| [i as u8; 16]).collect();
            // Independent LRU model: most recent last.
            let mut order: Vec<u64> = Vec::new();
            let mut dirty = [false; 10];
            let (mut misses, mut dirty_evictions) = (0u64, 0u64);
            for (page, write, byte) in ops {
                if let Some(pos) = order.iter().position(|&x| x == page) {
                    order.remove(pos);
                } else {
                    misses += 1;
                    if order.len() == cap {
                        let victim = order.remove(0);
                        if dirty[victim as usize] {
                            dirty_evictions += 1;
                            dirty[victim as usize] = false;
                        }
                    }
                }
                order.push(page);
                if write {
                    pool.page_mut(page).unwrap()[0] = byte;
                    shadow[page as usize][0] = byte;
                    dirty[page as usize] = true;
                } else {
                    prop_assert_eq!(pool.read(page).unwrap(), &shadow[page as usize][..]);
                }
                prop_assert!(pool.resident() <= cap);
            }
            prop_assert_eq!(pool.stats().reads, misses);
            prop_assert_eq!(pool.stats().writes, dirty_evictions);
            pool.flush_all().unwrap();
            let flushed = dirty.iter().filter(|&&d| d).count() as u64;
            prop_assert_eq!(pool.stats().writes, dirty_evictions + flushed);
            let dev = pool.into_device().unwrap();
            for (i, page) in shadow.iter().enumerate() {
                prop_assert_eq!(dev.page(i as u64).unwrap(), &page[..]);
            }
        }
    }
}
