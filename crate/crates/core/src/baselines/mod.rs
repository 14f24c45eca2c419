//! Sort-based bulk loaders used as comparison points: STR and Hilbert
//! packing. Both sort the points externally, cut the sorted order into
//! full leaves, and then pack upper levels bottom-up in memory.

mod extsort;
mod hilbert;

use alloc::vec::Vec;

pub use extsort::{external_sort, f64_key, RunPage};
pub use hilbert::{hilbert_key, HilbertKey};

use crate::error::{Error, Result};
use crate::fmbi::{union_of, write_node_page};
use crate::geometry::{mbb_of, Mbb};
use crate::index::{Dataset, Index};
use crate::storage::node::{Entry, NodeRef, Slot};
use crate::storage::{decode_points_into, BufferPool, IoStats, PageDevice, PageId, PageLayout};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HilbertConfig {
    /// Quantization bits per dimension.
    pub bits: u32,
}

impl Default for HilbertConfig {
    fn default() -> Self {
        Self { bits: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BaselineReport {
    pub io: IoStats,
    /// Levels including the leaves.
    pub height: usize,
}

/// Sort-tile-recursive bulk load.
///
/// Points are sorted on axis 0 and cut into `ceil(P^(1/d))` slabs; each slab
/// is sorted on the next axis and tiled the same way until the last axis.
pub fn str_bulk_load<D: PageDevice>(pool: &mut BufferPool<D>, dataset: &Dataset) -> Result<(Index, BaselineReport)> {
    let layout = &dataset.layout;
    check(pool, dataset)?;
    let before = pool.stats();
    let leaves = str_sort(pool, layout, &dataset.page_ids(), false, 0)?;
    finish(pool, layout, dataset, leaves, before, str_order)
}

fn str_sort<D: PageDevice>(
    pool: &mut BufferPool<D>,
    layout: &PageLayout,
    pages: &[PageId],
    owned: bool,
    axis: usize,
) -> Result<Vec<RunPage>> {
    let sorted = external_sort(pool, layout, pages, owned, |p| f64_key(p.coords[axis]))?;
    let remaining = layout.dims() - axis;
    if remaining == 1 || sorted.len() <= 1 {
        return Ok(sorted);
    }
    let per = slab_pages(sorted.len(), remaining);
    let mut out = Vec::with_capacity(sorted.len());
    for slab in sorted.chunks(per) {
        let ids: Vec<PageId> = slab.iter().map(|r| r.page).collect();
        out.extend(str_sort(pool, layout, &ids, true, axis + 1)?);
    }
    Ok(out)
}

/// Pages per slab when `p` pages are tiled over `dims` remaining axes.
fn slab_pages(p: usize, dims: usize) -> usize {
    let slices = ceil_root(p, dims);
    p.div_ceil(slices)
}

/// Smallest `s` with `s^k >= n`.
fn ceil_root(n: usize, k: usize) -> usize {
    let mut s = libm::round(libm::pow(n as f64, 1.0 / k as f64)).max(1.0) as usize;
    while pow(s, k) < n {
        s += 1;
    }
    while s > 1 && pow(s - 1, k) >= n {
        s -= 1;
    }
    s
}

fn pow(b: usize, k: usize) -> usize {
    (0..k).fold(1usize, |acc, _| acc.saturating_mul(b))
}

/// STR tiling of entries on their centers, in memory.
fn str_order(entries: &mut [Entry], cap: usize) {
    let dims = entries[0].mbb.dims();
    tile(entries, cap, 0, dims);
}

fn tile(entries: &mut [Entry], cap: usize, axis: usize, dims: usize) {
    entries.sort_by(|a, b| center(&a.mbb, axis).total_cmp(&center(&b.mbb, axis)));
    let remaining = dims - axis;
    let nodes = entries.len().div_ceil(cap);
    if remaining == 1 || nodes <= 1 {
        return;
    }
    let per = slab_pages(nodes, remaining) * cap;
    for slab in entries.chunks_mut(per) {
        tile(slab, cap, axis + 1, dims);
    }
}

fn center(m: &Mbb, axis: usize) -> f64 {
    (m.lo()[axis] + m.hi()[axis]) / 2.0
}

/// Hilbert packing: points sorted by the Hilbert rank of their coordinates
/// quantized over the data extent; upper levels by the rank of node centers.
pub fn hilbert_bulk_load<D: PageDevice>(
    pool: &mut BufferPool<D>,
    dataset: &Dataset,
    config: &HilbertConfig,
) -> Result<(Index, BaselineReport)> {
    let layout = &dataset.layout;
    check(pool, dataset)?;
    if layout.dims() > 16 {
        return Err(Error::InvalidArgument("hilbert packing supports at most 16 dimensions".into()));
    }
    if !(1..=16).contains(&config.bits) {
        return Err(Error::InvalidArgument("hilbert bits must be in 1..=16".into()));
    }
    let before = pool.stats();
    let extent = scan_extent(pool, layout, &dataset.page_ids())?;
    let bits = config.bits;
    let leaves = {
        let extent = &extent;
        external_sort(pool, layout, &dataset.page_ids(), false, move |p| {
            hilbert_key(&p.coords, extent, bits)
        })?
    };
    let order = move |entries: &mut [Entry], _cap: usize| {
        let ext = union_of(entries);
        entries.sort_by_cached_key(|e| hilbert_key(&e.mbb.center(), &ext, bits));
    };
    finish(pool, layout, dataset, leaves, before, order)
}

/// Data extent by one scan of the dataset pages.
fn scan_extent<D: PageDevice>(pool: &mut BufferPool<D>, layout: &PageLayout, pages: &[PageId]) -> Result<Mbb> {
    let mut extent: Option<Mbb> = None;
    let mut pts = Vec::new();
    for &id in pages {
        pts.clear();
        decode_points_into(layout, pool.read(id)?, id, &mut pts)?;
        let m = mbb_of(pts.iter())?;
        match &mut extent {
            Some(e) => e.expand(&m),
            None => extent = Some(m),
        }
    }
    extent.ok_or(Error::EmptyPointSet)
}

fn check<D: PageDevice>(pool: &BufferPool<D>, dataset: &Dataset) -> Result<()> {
    if pool.page_size() != dataset.layout.page_size() {
        return Err(Error::InvalidArgument("pool and layout page sizes differ".into()));
    }
    if dataset.len == 0 {
        return Err(Error::EmptyPointSet);
    }
    if pool.capacity() < 3 {
        return Err(Error::InsufficientBuffer {
            pages: pool.capacity(),
            required: 3,
        });
    }
    Ok(())
}

fn finish<D, F>(
    pool: &mut BufferPool<D>,
    layout: &PageLayout,
    dataset: &Dataset,
    leaves: Vec<RunPage>,
    before: IoStats,
    order: F,
) -> Result<(Index, BaselineReport)>
where
    D: PageDevice,
    F: Fn(&mut [Entry], usize),
{
    let entries: Vec<Entry> = leaves.into_iter().map(|r| Entry::data(r.mbb, r.page, r.count)).collect();
    let (root, height) = pack_levels(pool, layout, entries, order)?;
    pool.flush_all()?;
    let mbb = root.1;
    Ok((
        Index {
            layout: *layout,
            root: root.0,
            len: dataset.len,
            mbb,
        },
        BaselineReport {
            io: pool.stats().since(before),
            height,
        },
    ))
}

/// Packs entries into nodes of `C_B` level by level until one node remains.
/// Each node gets its own page.
fn pack_levels<D, F>(
    pool: &mut BufferPool<D>,
    layout: &PageLayout,
    mut entries: Vec<Entry>,
    order: F,
) -> Result<((NodeRef, Mbb), usize)>
where
    D: PageDevice,
    F: Fn(&mut [Entry], usize),
{
    let cap = layout.branch_capacity();
    let mut scratch = alloc::vec![0u8; layout.page_size()];
    let mut height = 1;
    loop {
        height += 1;
        if entries.len() > cap {
            order(&mut entries, cap);
        }
        let mut next = Vec::with_capacity(entries.len().div_ceil(cap));
        for group in entries.chunks(cap) {
            let mbb = union_of(group);
            let page = write_node_page(pool, layout, &mut scratch, &[Slot::new(group.to_vec())])?;
            next.push(Entry::node(mbb, NodeRef::new(page, 0), group.len()));
        }
        if next.len() == 1 {
            let root = next.pop().expect("one node");
            return Ok(((root.node_ref(), root.mbb), height));
        }
        entries = next;
    }
}
