//! Exact window and k-NN search.
//!
//! Window queries descend every entry whose box meets the window; k-NN
//! queries run best-first over `mindist`. Both read pages through the
//! buffer pool, and the reported page reads are the pool's miss count for
//! the query.

use alloc::collections::BinaryHeap;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::geometry::{KnnQuery, Mbb, Point, Query, WindowQuery};
use crate::index::Index;
use crate::storage::node::{decode_node, ChildKind, Entry, NodeRef};
use crate::storage::{decode_points_into, BufferPool, PageDevice, PageId, PageLayout};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct QueryResult {
    /// Window results ordered by id (coordinates when ids are absent);
    /// k-NN results ordered by distance, then id.
    pub points: Vec<Point>,
    pub pages_read: u64,
    pub nodes_visited: u64,
    pub leaves_scanned: u64,
    /// Set when `k` exceeded the number of indexed points.
    pub truncated: bool,
}

/// The part of a query that decides whether an entry qualifies.
#[derive(Debug, Clone, PartialEq)]
pub enum Target<'a> {
    Window(&'a Mbb),
    Knn(&'a [f64], usize),
}

impl Target<'_> {
    /// Squared distance from the query to a box.
    pub fn dist_sq(&self, mbb: &Mbb) -> f64 {
        match self {
            Target::Window(w) => w.box_dist_sq(mbb),
            Target::Knn(c, _) => mbb.mindist_sq(c),
        }
    }
}

/// Traversal hooks for indexes that change while they are read.
pub(crate) trait Hooks<D> {
    /// Whether a leaf or unrefined entry must be replaced before use.
    fn needs(&self, entry: &Entry) -> bool;

    /// Replaces `entry`, a child of `parent`, returning what now stands in
    /// its place.
    fn expand(
        &mut self,
        pool: &mut BufferPool<D>,
        parent: NodeRef,
        entry: &Entry,
        target: &Target<'_>,
    ) -> Result<Vec<Entry>>;

    /// Overflow pages chained to a leaf.
    fn chain(&self, page: PageId) -> &[PageId];
}

/// Hooks for finished indexes, which never change.
pub(crate) struct Static;

impl<D> Hooks<D> for Static {
    fn needs(&self, entry: &Entry) -> bool {
        entry.kind == ChildKind::Unrefined
    }

    fn expand(&mut self, _: &mut BufferPool<D>, parent: NodeRef, _: &Entry, _: &Target<'_>) -> Result<Vec<Entry>> {
        Err(Error::Corrupt {
            page: parent.page,
            reason: "unrefined entry in a finished index".into(),
        })
    }

    fn chain(&self, _: PageId) -> &[PageId] {
        &[]
    }
}

pub fn window_query<D: PageDevice>(pool: &mut BufferPool<D>, index: &Index, w: &WindowQuery) -> Result<QueryResult> {
    check_query_dims(index, w.rect.dims())?;
    window_with(pool, &index.layout, index.root, &w.rect, &mut Static)
}

pub fn knn_query<D: PageDevice>(pool: &mut BufferPool<D>, index: &Index, q: &KnnQuery) -> Result<QueryResult> {
    check_query_dims(index, q.center.dims())?;
    knn_with(pool, &index.layout, index.root, index.len, q, &mut Static)
}

pub fn run_query<D: PageDevice>(pool: &mut BufferPool<D>, index: &Index, q: &Query) -> Result<QueryResult> {
    match q {
        Query::Window(w) => window_query(pool, index, w),
        Query::Knn(k) => knn_query(pool, index, k),
    }
}

pub(crate) fn check_query_dims(index: &Index, dims: usize) -> Result<()> {
    if dims != index.layout.dims() {
        return Err(Error::DimensionMismatch {
            expected: index.layout.dims(),
            found: dims,
        });
    }
    Ok(())
}

fn leaf_points<D, H: Hooks<D>>(
    pool: &mut BufferPool<D>,
    layout: &PageLayout,
    hooks: &H,
    page: PageId,
    out: &mut Vec<Point>,
) -> Result<()>
where
    D: PageDevice,
{
    decode_points_into(layout, pool.read(page)?, page, out)?;
    for &p in hooks.chain(page) {
        decode_points_into(layout, pool.read(p)?, p, out)?;
    }
    Ok(())
}

/// Orders points by id, or by coordinates when ids are absent.
pub fn cmp_points(a: &Point, b: &Point) -> Ordering {
    match (a.id, b.id) {
        (Some(x), Some(y)) => x.cmp(&y).then_with(|| a.cmp_lex(b)),
        _ => a.cmp_lex(b),
    }
}

pub(crate) fn window_with<D: PageDevice, H: Hooks<D>>(
    pool: &mut BufferPool<D>,
    layout: &PageLayout,
    root: NodeRef,
    rect: &Mbb,
    hooks: &mut H,
) -> Result<QueryResult> {
    let before = pool.stats();
    let target = Target::Window(rect);
    let mut res = QueryResult::default();
    let mut stack = alloc::vec![root];
    let mut scratch = Vec::new();
    while let Some(at) = stack.pop() {
        let entries = decode_node(layout, pool.read(at.page)?, at)?;
        res.nodes_visited += 1;
        let mut work: Vec<Entry> = entries.into_iter().rev().filter(|e| rect.intersects(&e.mbb)).collect();
        while let Some(e) = work.pop() {
            if hooks.needs(&e) {
                let replaced = hooks.expand(pool, at, &e, &target)?;
                work.extend(replaced.into_iter().rev().filter(|e| rect.intersects(&e.mbb)));
                continue;
            }
            match e.kind {
                ChildKind::Node => stack.push(e.node_ref()),
                ChildKind::Data => {
                    scratch.clear();
                    leaf_points(pool, layout, hooks, e.page, &mut scratch)?;
                    res.leaves_scanned += 1;
                    res.points.extend(scratch.drain(..).filter(|p| rect.contains_point(&p.coords)));
                }
                ChildKind::Unrefined => unreachable!("hooks replace unrefined entries"),
            }
        }
    }
    res.points.sort_unstable_by(cmp_points);
    res.pages_read = pool.stats().since(before).reads;
    Ok(res)
}

enum Item {
    Node(NodeRef),
    Child(NodeRef, Entry),
    Point(Point),
}

struct Queued {
    dist: f64,
    item: Item,
}

impl Queued {
    fn rank(&self) -> u8 {
        match self.item {
            Item::Point(_) => 1,
            _ => 0,
        }
    }
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    // Reversed: BinaryHeap is a max-heap and the nearest item must pop
    // first. Boxes precede points at equal distance so that a tied point
    // with a smaller id is never missed.
    fn cmp(&self, other: &Self) -> Ordering {
        let by = self
            .dist
            .total_cmp(&other.dist)
            .then_with(|| self.rank().cmp(&other.rank()))
            .then_with(|| match (&self.item, &other.item) {
                (Item::Point(a), Item::Point(b)) => cmp_points(a, b),
                _ => Ordering::Equal,
            });
        by.reverse()
    }
}

pub(crate) fn knn_with<D: PageDevice, H: Hooks<D>>(
    pool: &mut BufferPool<D>,
    layout: &PageLayout,
    root: NodeRef,
    len: u64,
    q: &KnnQuery,
    hooks: &mut H,
) -> Result<QueryResult> {
    let before = pool.stats();
    let center = &q.center.coords;
    let mut res = QueryResult {
        truncated: q.k as u64 > len,
        ..Default::default()
    };
    let k = q.k;
    let mut heap = BinaryHeap::new();
    heap.push(Queued {
        dist: 0.0,
        item: Item::Node(root),
    });
    let mut scratch = Vec::new();
    while let Some(Queued { item, .. }) = heap.pop() {
        if res.points.len() == k {
            break;
        }
        match item {
            Item::Point(p) => res.points.push(p),
            Item::Node(at) => {
                let entries = decode_node(layout, pool.read(at.page)?, at)?;
                res.nodes_visited += 1;
                for e in entries {
                    heap.push(queued_entry(center, at, e));
                }
            }
            Item::Child(parent, e) => {
                if hooks.needs(&e) {
                    let target = Target::Knn(center, k);
                    for r in hooks.expand(pool, parent, &e, &target)? {
                        heap.push(queued_entry(center, parent, r));
                    }
                    continue;
                }
                scratch.clear();
                leaf_points(pool, layout, hooks, e.page, &mut scratch)?;
                res.leaves_scanned += 1;
                for p in scratch.drain(..) {
                    heap.push(Queued {
                        dist: p.dist_sq(center),
                        item: Item::Point(p),
                    });
                }
            }
        }
    }
    res.pages_read = pool.stats().since(before).reads;
    Ok(res)
}

fn queued_entry(center: &[f64], parent: NodeRef, e: Entry) -> Queued {
    let dist = e.mbb.mindist_sq(center);
    let item = match e.kind {
        ChildKind::Node => Item::Node(e.node_ref()),
        _ => Item::Child(parent, e),
    };
    Queued { dist, item }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fmbi::{bulk_load, FmbiConfig};
    use crate::index::Dataset;
    use crate::storage::MemDevice;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fixture(n: usize) -> (BufferPool<MemDevice>, Index, Vec<Point>) {
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        let pts: Vec<Point> = (0..n)
            .map(|i| Point::with_id(vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)], i as u64))
            .collect();
        let layout = PageLayout::new(4096, 2, true)
            .unwrap()
            .with_capacities(Some(16), Some(8))
            .unwrap();
        let mut dev = MemDevice::new(4096);
        let ds = Dataset::write(&mut dev, layout, &pts).unwrap();
        let mut pool = BufferPool::new(dev, 64).unwrap();
        let (index, _) = bulk_load(&mut pool, &ds, &FmbiConfig::default()).unwrap();
        (pool, index, pts)
    }

    fn rect(lo: [f64; 2], hi: [f64; 2]) -> WindowQuery {
        WindowQuery::new(Mbb::new(lo.to_vec(), hi.to_vec()).unwrap())
    }

    #[test]
    fn whole_space_returns_everything() {
        let (mut pool, index, pts) = fixture(5000);
        let r = window_query(&mut pool, &index, &rect([0.0, 0.0], [1.0, 1.0])).unwrap();
        assert_eq!(r.points.len(), pts.len());
        assert!(r.points.windows(2).all(|w| w[0].id < w[1].id));
    }

    #[test]
    fn disjoint_window_reads_no_leaves() {
        let (mut pool, index, _) = fixture(5000);
        let r = window_query(&mut pool, &index, &rect([2.0, 2.0], [3.0, 3.0])).unwrap();
        assert!(r.points.is_empty());
        assert_eq!(r.leaves_scanned, 0);
        assert_eq!(r.nodes_visited, 1);
    }

    #[test]
    fn boundary_points_qualify() {
        let (mut pool, index, pts) = fixture(2000);
        let p = &pts[17];
        let w = rect([p.coords[0], p.coords[1]], [p.coords[0], p.coords[1]]);
        let r = window_query(&mut pool, &index, &w).unwrap();
        assert_eq!(r.points, vec![p.clone()]);
    }

    #[test]
    fn knn_at_a_data_point_finds_it_first() {
        let (mut pool, index, pts) = fixture(3000);
        let q = KnnQuery::new(pts[5].clone(), 1).unwrap();
        let r = knn_query(&mut pool, &index, &q).unwrap();
        assert_eq!(r.points, vec![pts[5].clone()]);
    }

    #[test]
    fn k_beyond_n_returns_all_and_flags() {
        let (mut pool, index, pts) = fixture(300);
        let q = KnnQuery::new(Point::new(vec![0.5, 0.5]), 1000).unwrap();
        let r = knn_query(&mut pool, &index, &q).unwrap();
        assert!(r.truncated);
        assert_eq!(r.points.len(), pts.len());
    }

    #[test]
    fn knn_ties_break_by_id() {
        let layout = PageLayout::new(4096, 2, true).unwrap().with_capacities(Some(4), Some(4)).unwrap();
        // Four points at distance 1 from the origin plus far ones.
        let mut pts = vec![
            Point::with_id(vec![1.0, 0.0], 9),
            Point::with_id(vec![0.0, 1.0], 3),
            Point::with_id(vec![-1.0, 0.0], 7),
            Point::with_id(vec![0.0, -1.0], 1),
        ];
        pts.extend((0..60).map(|i| Point::with_id(vec![5.0 + i as f64, 5.0], 100 + i)));
        let mut dev = MemDevice::new(4096);
        let ds = Dataset::write(&mut dev, layout, &pts).unwrap();
        let mut pool = BufferPool::new(dev, 64).unwrap();
        let (index, _) = bulk_load(&mut pool, &ds, &FmbiConfig::default()).unwrap();
        let q = KnnQuery::new(Point::new(vec![0.0, 0.0]), 2).unwrap();
        let ids: Vec<u64> = knn_query(&mut pool, &index, &q).unwrap().points.iter().map(|p| p.id.unwrap()).collect();
        assert_eq!(ids, vec![1, 3]);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let (mut pool, index, _) = fixture(100);
        let q = KnnQuery::new(Point::new(vec![0.0, 0.0, 0.0]), 1).unwrap();
        assert!(matches!(knn_query(&mut pool, &index, &q), Err(Error::DimensionMismatch { .. })));
    }
}
