use super::*;
use crate::inspect::{check_structure, collect_points, index_stats};
use crate::storage::MemDevice;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};

fn layout(cl: usize, cb: usize) -> PageLayout {
    PageLayout::new(4096, 2, true)
        .unwrap()
        .with_capacities(Some(cl), Some(cb))
        .unwrap()
}

fn uniform(n: usize, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| Point::with_id(vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)], i as u64))
        .collect()
}

/// Mostly points in a tiny corner, the rest spread out.
fn skewed(n: usize, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let s = if rng.random_bool(0.9) { 1e-3 } else { 1.0 };
            Point::with_id(vec![s * rng.random_range(0.0..1.0), s * rng.random_range(0.0..1.0)], i as u64)
        })
        .collect()
}

fn build(points: &[Point], l: PageLayout, m: usize, seed: u64) -> (BufferPool<MemDevice>, Index, BuildReport) {
    let mut dev = MemDevice::new(l.page_size());
    let ds = Dataset::write(&mut dev, l, points).unwrap();
    let mut pool = BufferPool::new(dev, m).unwrap();
    let (index, report) = bulk_load(&mut pool, &ds, &FmbiConfig { seed, ..Default::default() }).unwrap();
    (pool, index, report)
}

fn ids(points: &[Point]) -> Vec<u64> {
    let mut v: Vec<u64> = points.iter().map(|p| p.id.unwrap()).collect();
    v.sort_unstable();
    v
}

fn assert_sound(pool: &mut BufferPool<MemDevice>, index: &Index, points: &[Point]) {
    let stored = collect_points(pool, index).unwrap();
    assert_eq!(ids(&stored), ids(points));
    let r = check_structure(pool, index).unwrap();
    assert_eq!(r.overlapping_pairs, 0);
    assert_eq!(r.loose_boxes, 0);
    assert_eq!(r.over_capacity, 0);
    assert_eq!(r.count_mismatches, 0);
    assert_eq!(index.len, points.len() as u64);
    assert_eq!(pool.pinned(), 0);
}

#[test]
fn alpha_uses_working_pages() {
    assert_eq!(alpha(29325, 204), 143);
    assert_eq!(alpha(40, 8), 4);
    assert_eq!(alpha(32, 8), 3);
}

#[test]
fn small_input_is_refined_directly() {
    let pts = uniform(100, 1);
    let (mut pool, index, report) = build(&pts, layout(8, 8), 40, 0);
    assert_eq!(report.invocations.len(), 1);
    assert_eq!(report.invocations[0].alpha, 0);
    assert_sound(&mut pool, &index, &pts);
}

#[test]
fn exactly_sampled_input_leaves_every_subspace_active() {
    // 32 full pages with alpha = 4 and C_B = 8: everything is sampled.
    let pts = uniform(32 * 8, 2);
    let (mut pool, index, report) = build(&pts, layout(8, 8), 40, 7);
    let top = &report.invocations[0];
    assert_eq!(top.alpha, 4);
    assert!(top.active.iter().all(|&a| a));
    assert_eq!(top.subspace_pages, vec![4; 8]);
    assert_eq!(top.subspace_points, vec![32; 8]);
    assert_sound(&mut pool, &index, &pts);
}

#[test]
fn streamed_points_are_conserved_per_subspace() {
    let pts = uniform(100_000, 3);
    let (mut pool, index, report) = build(&pts, layout(16, 8), 40, 1);
    let top = &report.invocations[0];
    assert_eq!(top.subspace_points.iter().sum::<u64>(), 100_000);
    assert!(report.invocations.len() > 1);
    assert_sound(&mut pool, &index, &pts);
    for inv in &report.invocations {
        assert!(inv.underflowed(8) <= 1, "{inv:?}");
    }
}

#[test]
fn roomy_buffer_makes_every_subspace_sparse() {
    let pts = uniform(20_000, 4);
    // 1250 pages, 8 subspaces of about 156 pages; 1500 working pages.
    let (mut pool, index, report) = build(&pts, layout(16, 8), 1501, 2);
    assert_eq!(report.invocations.len(), 1);
    assert!(report.invocations[0].dense.iter().all(|&d| !d));
    assert_sound(&mut pool, &index, &pts);
}

#[test]
fn subspace_filling_the_buffer_counts_as_sparse() {
    // One subspace receives nearly all points; it is inactive but fits.
    let mut pts = uniform(16 * 16, 5);
    for (i, p) in skewed(1500, 6).into_iter().enumerate() {
        pts.push(Point::with_id(p.coords.iter().map(|c| c * 1e-3).collect(), 1000 + i as u64));
    }
    let l = layout(16, 8);
    let (mut pool, index, report) = build(&pts, l, 200, 3);
    assert_sound(&mut pool, &index, &pts);
    assert!(report.invocations[0].dense.iter().all(|&d| !d));
}

#[test]
fn partial_pages_are_bounded_by_refined_subspaces() {
    // Each refined subspace leaves at most one partial page.
    for (pts, m) in [(uniform(50_000, 7), 120), (skewed(50_000, 8), 120), (uniform(50_000, 9), 2000)] {
        let l = layout(16, 8);
        let (mut pool, index, report) = build(&pts, l, m, 4);
        let s = index_stats(&mut pool, &index).unwrap();
        let refined: usize = report.invocations.iter().map(|i| i.dense.iter().filter(|&&d| !d).count()).sum();
        let packed = l.pages_for(pts.len() as u64);
        assert!(s.leaf_count <= packed + refined as u64, "{} vs {packed} + {refined}", s.leaf_count);
        assert_eq!(s.points, pts.len() as u64);
    }
}

#[test]
fn packing_within_one_percent_at_realistic_fanout() {
    for pts in [uniform(100_000, 7), skewed(100_000, 8)] {
        let l = layout(16, 64);
        let (mut pool, index, _) = build(&pts, l, 400, 4);
        let s = index_stats(&mut pool, &index).unwrap();
        let packed = l.pages_for(pts.len() as u64) as f64;
        assert!((s.leaf_count as f64) <= 1.01 * packed, "{} vs {}", s.leaf_count, packed);
    }
}

#[test]
fn skewed_input_recurses_and_stays_sound() {
    let pts = skewed(60_000, 10);
    let (mut pool, index, report) = build(&pts, layout(16, 8), 64, 5);
    assert!(report.invocations.iter().any(|i| i.depth >= 2));
    assert_sound(&mut pool, &index, &pts);
    for inv in &report.invocations {
        assert!(inv.underflowed(8) <= 1, "{inv:?}");
    }
}

#[test]
fn seeds_give_different_but_valid_builds() {
    let pts = uniform(30_000, 11);
    let a = build(&pts, layout(16, 8), 100, 1);
    let b = build(&pts, layout(16, 8), 100, 2);
    assert_ne!(a.2.invocations[0].subspace_points, b.2.invocations[0].subspace_points);
    let (mut pool, index, _) = a;
    assert_sound(&mut pool, &index, &pts);
}

#[test]
fn same_seed_is_deterministic() {
    let pts = uniform(30_000, 12);
    let a = build(&pts, layout(16, 8), 100, 9);
    let b = build(&pts, layout(16, 8), 100, 9);
    assert_eq!(a.2, b.2);
    assert_eq!(a.1, b.1);
}

/// Counts device traffic independently of the pool.
struct Counting {
    inner: MemDevice,
    reads: u64,
    writes: u64,
}

impl PageDevice for Counting {
    fn page_size(&self) -> usize {
        self.inner.page_size()
    }
    fn page_count(&self) -> u64 {
        self.inner.page_count()
    }
    fn read_page(&mut self, id: PageId, buf: &mut [u8]) -> Result<()> {
        self.reads += 1;
        self.inner.read_page(id, buf)
    }
    fn write_page(&mut self, id: PageId, buf: &[u8]) -> Result<()> {
        self.writes += 1;
        self.inner.write_page(id, buf)
    }
    fn grow(&mut self) -> Result<PageId> {
        self.inner.grow()
    }
}

#[test]
fn build_io_matches_device_traffic() {
    let pts = uniform(40_000, 13);
    let l = layout(16, 8);
    let mut inner = MemDevice::new(l.page_size());
    let ds = Dataset::write(&mut inner, l, &pts).unwrap();
    let dev = Counting { inner, reads: 0, writes: 0 };
    let mut pool = BufferPool::new(dev, 300).unwrap();
    let (_, report) = bulk_load(&mut pool, &ds, &FmbiConfig::default()).unwrap();
    assert_eq!(report.io.reads, pool.device().reads);
    assert_eq!(report.io.writes, pool.device().writes);
    assert!(report.io.reads >= ds.pages);
    assert!(report.io.total() <= 5 * ds.pages, "{:?}", report.io);
}

#[test]
fn identical_points_hit_the_recursion_limit() {
    let pts: Vec<Point> = (0..20_000).map(|i| Point::with_id(vec![0.5, 0.5], i)).collect();
    let l = layout(16, 8);
    let mut dev = MemDevice::new(l.page_size());
    let ds = Dataset::write(&mut dev, l, &pts).unwrap();
    let mut pool = BufferPool::new(dev, 40).unwrap();
    let r = bulk_load(&mut pool, &ds, &FmbiConfig { seed: 0, max_depth: 4 });
    assert_eq!(r.unwrap_err(), Error::RecursionLimit(4));
}

#[test]
fn rejects_small_buffers_and_mismatched_pools() {
    let pts = uniform(1000, 14);
    let l = layout(16, 8);
    let mut dev = MemDevice::new(l.page_size());
    let ds = Dataset::write(&mut dev, l, &pts).unwrap();
    let mut pool = BufferPool::new(dev, 8).unwrap();
    assert!(matches!(
        bulk_load(&mut pool, &ds, &FmbiConfig::default()),
        Err(Error::InsufficientBuffer { .. })
    ));
    let mut pool = BufferPool::new(MemDevice::new(1024), 100).unwrap();
    assert!(bulk_load(&mut pool, &ds, &FmbiConfig::default()).is_err());
}
