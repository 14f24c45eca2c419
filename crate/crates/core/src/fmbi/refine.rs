use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{longest_dimension, mbb_of, Mbb, Point};
use crate::storage::node::{encode_node_page, Entry, NodeRef, Slot};
use crate::storage::{encode_points, BufferPool, PageDevice, PageId, PageLayout};

/// Writes points to a data page without reading it first, then releases
/// one pin if the page was pinned.
pub(crate) fn write_leaf<D: PageDevice>(
    pool: &mut BufferPool<D>,
    layout: &PageLayout,
    scratch: &mut [u8],
    id: PageId,
    points: &[Point],
) -> Result<()> {
    encode_points(layout, points, scratch)?;
    pool.put(id, scratch)?;
    if pool.is_pinned(id) {
        pool.unpin(id)?;
    }
    Ok(())
}

/// Allocates a page and writes the given nodes into it.
pub(crate) fn write_node_page<D: PageDevice>(
    pool: &mut BufferPool<D>,
    layout: &PageLayout,
    scratch: &mut [u8],
    slots: &[Slot],
) -> Result<PageId> {
    encode_node_page(layout, slots, scratch)?;
    let id = pool.allocate()?;
    pool.put(id, scratch)?;
    Ok(id)
}

pub(crate) fn union_of(entries: &[Entry]) -> Mbb {
    let mut m = entries[0].mbb.clone();
    for e in &entries[1..] {
        m.expand(&e.mbb);
    }
    m
}

/// Refines one subspace into node entries by descending an implicit minor
/// split tree.
///
/// `pages` are the pages the result is written to; there must be exactly
/// `ceil(points.len() / C_L)` of them. A single page becomes one leaf entry.
/// Otherwise points are split on the longest dimension into
/// `floor(|P|/2)` and `ceil(|P|/2)` full pages and both halves are refined.
/// Their entry lists are concatenated when they fit in one branch node;
/// otherwise each list is written out as a branch node and two branch
/// entries are returned.
pub fn generate_entries<D: PageDevice>(
    pool: &mut BufferPool<D>,
    layout: &PageLayout,
    points: &mut [Point],
    pages: &[PageId],
) -> Result<Vec<Entry>> {
    let mut scratch = vec![0u8; layout.page_size()];
    generate_entries_with(pool, layout, points, pages, &mut scratch)
}

pub(crate) fn generate_entries_with<D: PageDevice>(
    pool: &mut BufferPool<D>,
    layout: &PageLayout,
    points: &mut [Point],
    pages: &[PageId],
    scratch: &mut [u8],
) -> Result<Vec<Entry>> {
    if points.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let cl = layout.leaf_capacity();
    if pages.len() != points.len().div_ceil(cl) {
        return Err(Error::PageCountMismatch {
            expected: points.len().div_ceil(cl),
            found: pages.len(),
        });
    }
    refine(pool, layout, points, pages, scratch)
}

/// Number of entries `generate_entries` returns for `pages` pages.
pub(crate) fn predicted_entries(pages: usize, branch_capacity: usize) -> usize {
    if pages <= 1 {
        return pages;
    }
    let n = predicted_entries(pages / 2, branch_capacity) + predicted_entries(pages - pages / 2, branch_capacity);
    if n <= branch_capacity {
        n
    } else {
        2
    }
}

fn refine<D: PageDevice>(
    pool: &mut BufferPool<D>,
    layout: &PageLayout,
    points: &mut [Point],
    pages: &[PageId],
    scratch: &mut [u8],
) -> Result<Vec<Entry>> {
    if pages.len() == 1 {
        let mbb = mbb_of(points.iter())?;
        write_leaf(pool, layout, scratch, pages[0], points)?;
        return Ok(vec![Entry::data(mbb, pages[0], points.len())]);
    }
    let dim = longest_dimension(&mbb_of(points.iter())?);
    let half = pages.len() / 2;
    let cut = half * layout.leaf_capacity();
    points.select_nth_unstable_by(cut, |a, b| a.cmp_on(b, dim));
    let (lo, hi) = points.split_at_mut(cut);
    let mut ne1 = refine(pool, layout, lo, &pages[..half], scratch)?;
    let ne2 = refine(pool, layout, hi, &pages[half..], scratch)?;
    if ne1.len() + ne2.len() <= layout.branch_capacity() {
        ne1.extend(ne2);
        return Ok(ne1);
    }
    let mut out = Vec::with_capacity(2);
    for ne in [ne1, ne2] {
        let mbb = union_of(&ne);
        let n = ne.len();
        let page = write_node_page(pool, layout, scratch, &[Slot::new(ne)])?;
        out.push(Entry::node(mbb, NodeRef::new(page, 0), n));
    }
    Ok(out)
}
