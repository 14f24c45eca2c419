//! Structural statistics and invariant checks over a built index.
//!
//! Every function here walks the whole tree through the buffer pool, so
//! it adds to the pool's counters; take counter snapshots around queries
//! rather than around inspection.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::geometry::{Mbb, Point};
use crate::index::Index;
use crate::storage::node::{decode_node, node_page_slots, ChildKind, Entry, NodeRef};
use crate::storage::{decode_points, BufferPool, PageDevice, PageLayout};

/// Leaf-level totals in the style of the usual packing comparison tables.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IndexStats {
    pub leaf_count: u64,
    /// Sum of leaf perimeters (`2 * sum of extents` in 2-d, `sum of extents`
    /// above).
    pub perimeter: f64,
    pub area: f64,
    /// Node levels on the longest root-to-leaf path.
    pub height: usize,
    /// Branch nodes per depth, root first.
    pub nodes_per_level: Vec<usize>,
    pub points: u64,
    pub node_pages: u64,
    /// Node pages holding more than one node.
    pub shared_pages: u64,
}

/// Calls `f(depth, node, entries)` for every branch node, depth-first.
pub fn for_each_node<D, F>(pool: &mut BufferPool<D>, layout: &PageLayout, root: NodeRef, mut f: F) -> Result<()>
where
    D: PageDevice,
    F: FnMut(usize, NodeRef, &[Entry]) -> Result<()>,
{
    let mut stack = vec![(root, 0usize)];
    while let Some((at, depth)) = stack.pop() {
        let entries = decode_node(layout, pool.read(at.page)?, at)?;
        f(depth, at, &entries)?;
        for e in entries.iter().rev() {
            if e.kind == ChildKind::Node {
                stack.push((e.node_ref(), depth + 1));
            }
        }
    }
    Ok(())
}

pub fn index_stats<D: PageDevice>(pool: &mut BufferPool<D>, index: &Index) -> Result<IndexStats> {
    let mut s = IndexStats::default();
    let mut pages = BTreeSet::new();
    let mut shared = BTreeSet::new();
    let mut node_pages_seen = Vec::new();
    for_each_node(pool, &index.layout, index.root, |depth, at, entries| {
        if s.nodes_per_level.len() <= depth {
            s.nodes_per_level.resize(depth + 1, 0);
        }
        s.nodes_per_level[depth] += 1;
        if pages.insert(at.page) {
            node_pages_seen.push(at.page);
        }
        for e in entries {
            if e.kind == ChildKind::Data {
                s.leaf_count += 1;
                s.points += e.count as u64;
                s.perimeter += e.mbb.perimeter();
                s.area += e.mbb.area();
                s.height = s.height.max(depth + 1);
            }
        }
        Ok(())
    })?;
    for p in node_pages_seen {
        if node_page_slots(pool.read(p)?) > 1 {
            shared.insert(p);
        }
    }
    s.node_pages = pages.len() as u64;
    s.shared_pages = shared.len() as u64;
    Ok(s)
}

/// Every point stored in the index's data pages.
pub fn collect_points<D: PageDevice>(pool: &mut BufferPool<D>, index: &Index) -> Result<Vec<Point>> {
    let mut leaves = Vec::new();
    for_each_node(pool, &index.layout, index.root, |_, _, entries| {
        leaves.extend(entries.iter().filter(|e| e.kind == ChildKind::Data).map(|e| e.page));
        Ok(())
    })?;
    let mut out = Vec::new();
    for p in leaves {
        let buf = pool.read(p)?;
        out.extend(decode_points(&index.layout, buf, p)?);
    }
    Ok(out)
}

/// Outcome of [`check_structure`]; all counts are zero for a sound index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StructureReport {
    /// Sibling entry pairs whose interiors overlap.
    pub overlapping_pairs: u64,
    /// Entries whose box is not the tight union of their children.
    pub loose_boxes: u64,
    /// Nodes with more than `C_B` entries or pages with more than `C_L`
    /// points.
    pub over_capacity: u64,
    /// Entries whose recorded count disagrees with the child.
    pub count_mismatches: u64,
    pub max_entries: usize,
    pub min_entries: usize,
}

/// Exhaustive check of capacities, box tightness and sibling overlap.
pub fn check_structure<D: PageDevice>(pool: &mut BufferPool<D>, index: &Index) -> Result<StructureReport> {
    let layout = index.layout;
    let mut r = StructureReport {
        min_entries: usize::MAX,
        ..Default::default()
    };
    let mut nodes: Vec<Vec<Entry>> = Vec::new();
    for_each_node(pool, &layout, index.root, |_, _, entries| {
        nodes.push(entries.to_vec());
        Ok(())
    })?;
    for entries in &nodes {
        r.max_entries = r.max_entries.max(entries.len());
        r.min_entries = r.min_entries.min(entries.len());
        if entries.len() > layout.branch_capacity() {
            r.over_capacity += 1;
        }
        for (i, a) in entries.iter().enumerate() {
            for b in &entries[i + 1..] {
                if a.mbb.interiors_overlap(&b.mbb) {
                    r.overlapping_pairs += 1;
                }
            }
            let (tight, count) = match a.kind {
                ChildKind::Data => {
                    let pts = decode_points(&layout, pool.read(a.page)?, a.page)?;
                    if pts.len() > layout.leaf_capacity() {
                        r.over_capacity += 1;
                    }
                    (crate::geometry::mbb_of(pts.iter()).ok(), pts.len())
                }
                ChildKind::Node => {
                    let children = decode_node(&layout, pool.read(a.page)?, a.node_ref())?;
                    let mut m: Option<Mbb> = None;
                    for c in &children {
                        match m.as_mut() {
                            Some(m) => m.expand(&c.mbb),
                            None => m = Some(c.mbb.clone()),
                        }
                    }
                    (m, children.len())
                }
                ChildKind::Unrefined => continue,
            };
            if tight.as_ref() != Some(&a.mbb) {
                r.loose_boxes += 1;
            }
            if count != a.count as usize {
                r.count_mismatches += 1;
            }
        }
    }
    if nodes.is_empty() {
        r.min_entries = 0;
    }
    Ok(r)
}
