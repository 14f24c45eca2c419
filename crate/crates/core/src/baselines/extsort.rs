use alloc::collections::BinaryHeap;
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};

use crate::error::Result;
use crate::geometry::{mbb_of, Mbb, Point};
use crate::storage::{decode_points_into, encode_points, BufferPool, PageDevice, PageId, PageLayout};

/// One output page of a sort, with what a leaf entry needs to know.
#[derive(Debug, Clone, PartialEq)]
pub struct RunPage {
    pub page: PageId,
    pub mbb: Mbb,
    pub count: usize,
}

/// Maps a float to an integer with the same order (NaN excluded).
pub fn f64_key(x: f64) -> u64 {
    let bits = x.to_bits();
    if bits >> 63 == 1 {
        !bits
    } else {
        bits | (1 << 63)
    }
}

/// Writes sorted points as packed pages, evicting each page once written.
struct RunWriter<'a> {
    layout: &'a PageLayout,
    buf: Vec<Point>,
    scratch: Vec<u8>,
    out: Vec<RunPage>,
}

impl<'a> RunWriter<'a> {
    fn new(layout: &'a PageLayout) -> Self {
        Self {
            layout,
            buf: Vec::with_capacity(layout.leaf_capacity()),
            scratch: alloc::vec![0u8; layout.page_size()],
            out: Vec::new(),
        }
    }

    fn push<D: PageDevice>(&mut self, pool: &mut BufferPool<D>, p: Point) -> Result<()> {
        self.buf.push(p);
        if self.buf.len() == self.layout.leaf_capacity() {
            self.emit(pool)?;
        }
        Ok(())
    }

    fn emit<D: PageDevice>(&mut self, pool: &mut BufferPool<D>) -> Result<()> {
        if self.buf.is_empty() {
            return Ok(());
        }
        encode_points(self.layout, &self.buf, &mut self.scratch)?;
        let page = pool.allocate()?;
        pool.put(page, &self.scratch)?;
        pool.evict(page)?;
        self.out.push(RunPage {
            page,
            mbb: mbb_of(self.buf.iter())?,
            count: self.buf.len(),
        });
        self.buf.clear();
        Ok(())
    }

    fn finish<D: PageDevice>(mut self, pool: &mut BufferPool<D>) -> Result<Vec<RunPage>> {
        self.emit(pool)?;
        Ok(self.out)
    }
}

/// Stable external merge sort of the points on `pages`.
///
/// Runs of `M` pages are sorted in memory, then merged `M - 1` at a time
/// until one run remains. Output pages are packed (all full but the
/// last). When `owned`, input pages are released after they are read;
/// intermediate runs always are.
pub fn external_sort<D, K, F>(
    pool: &mut BufferPool<D>,
    layout: &PageLayout,
    pages: &[PageId],
    owned: bool,
    key: F,
) -> Result<Vec<RunPage>>
where
    D: PageDevice,
    K: Ord,
    F: Fn(&Point) -> K,
{
    let m = pool.capacity();
    let mut runs: Vec<Vec<RunPage>> = Vec::new();
    let mut pts = Vec::new();
    for chunk in pages.chunks(m) {
        pts.clear();
        for &id in chunk {
            decode_points_into(layout, pool.read(id)?, id, &mut pts)?;
            if owned {
                pool.free_page(id);
            }
        }
        let mut keyed: Vec<(K, Point)> = pts.drain(..).map(|p| (key(&p), p)).collect();
        keyed.sort_by(|a, b| a.0.cmp(&b.0));
        let mut w = RunWriter::new(layout);
        for (_, p) in keyed {
            w.push(pool, p)?;
        }
        runs.push(w.finish(pool)?);
    }
    let fan_in = (m - 1).max(2);
    while runs.len() > 1 {
        let mut next = Vec::with_capacity(runs.len().div_ceil(fan_in));
        let mut it = runs.into_iter().peekable();
        while it.peek().is_some() {
            let group: Vec<Vec<RunPage>> = it.by_ref().take(fan_in).collect();
            next.push(merge(pool, layout, group, &key)?);
        }
        runs = next;
    }
    Ok(runs.pop().unwrap_or_default())
}

struct Head<K> {
    key: K,
    run: usize,
    point: Point,
}

impl<K: Ord> PartialEq for Head<K> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<K: Ord> Eq for Head<K> {}

impl<K: Ord> PartialOrd for Head<K> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<K: Ord> Ord for Head<K> {
    fn cmp(&self, other: &Self) -> Ordering {
        // Equal keys leave earlier runs first, which keeps the sort stable.
        self.key.cmp(&other.key).then(self.run.cmp(&other.run))
    }
}

struct Cursor {
    pages: Vec<RunPage>,
    next_page: usize,
    points: alloc::collections::VecDeque<Point>,
}

impl Cursor {
    fn next<D: PageDevice>(&mut self, pool: &mut BufferPool<D>, layout: &PageLayout) -> Result<Option<Point>> {
        while self.points.is_empty() && self.next_page < self.pages.len() {
            let id = self.pages[self.next_page].page;
            let mut v = Vec::new();
            decode_points_into(layout, pool.read(id)?, id, &mut v)?;
            pool.free_page(id);
            self.points.extend(v);
            self.next_page += 1;
        }
        Ok(self.points.pop_front())
    }
}

fn merge<D, K, F>(pool: &mut BufferPool<D>, layout: &PageLayout, runs: Vec<Vec<RunPage>>, key: &F) -> Result<Vec<RunPage>>
where
    D: PageDevice,
    K: Ord,
    F: Fn(&Point) -> K,
{
    let mut cursors: Vec<Cursor> = runs
        .into_iter()
        .map(|pages| Cursor {
            pages,
            next_page: 0,
            points: Default::default(),
        })
        .collect();
    let mut heap = BinaryHeap::with_capacity(cursors.len());
    for (run, c) in cursors.iter_mut().enumerate() {
        if let Some(point) = c.next(pool, layout)? {
            heap.push(Reverse(Head {
                key: key(&point),
                run,
                point,
            }));
        }
    }
    let mut w = RunWriter::new(layout);
    while let Some(Reverse(head)) = heap.pop() {
        let run = head.run;
        w.push(pool, head.point)?;
        if let Some(point) = cursors[run].next(pool, layout)? {
            heap.push(Reverse(Head {
                key: key(&point),
                run,
                point,
            }));
        }
    }
    w.finish(pool)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::Dataset;
    use crate::storage::{decode_points, MemDevice};
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(pts: &[Point], m: usize) -> (BufferPool<MemDevice>, Dataset) {
        let layout = PageLayout::new(4096, 2, true).unwrap().with_capacities(Some(16), None).unwrap();
        let mut dev = MemDevice::new(4096);
        let ds = Dataset::write(&mut dev, layout, pts).unwrap();
        (BufferPool::new(dev, m).unwrap(), ds)
    }

    fn random(n: usize) -> Vec<Point> {
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        (0..n)
            .map(|i| Point::with_id(vec![rng.random_range(-1.0..1.0), rng.random_range(0.0..1.0)], i as u64))
            .collect()
    }

    fn read_all(pool: &mut BufferPool<MemDevice>, ds: &Dataset, run: &[RunPage]) -> Vec<Point> {
        let mut out = Vec::new();
        for r in run {
            let got = decode_points(&ds.layout, pool.read(r.page).unwrap(), r.page).unwrap();
            assert_eq!(got.len(), r.count);
            assert_eq!(mbb_of(got.iter()).unwrap(), r.mbb);
            out.extend(got);
        }
        out
    }

    #[test]
    fn float_keys_preserve_order() {
        let xs = [-f64::INFINITY, -3.5, -0.0, 0.0, 1e-300, 2.0, f64::INFINITY];
        for w in xs.windows(2) {
            assert!(f64_key(w[0]) <= f64_key(w[1]));
        }
    }

    #[test]
    fn matches_in_memory_stable_sort() {
        let pts = random(100_000);
        let (mut pool, ds) = setup(&pts, 50);
        let run = external_sort(&mut pool, &ds.layout, &ds.page_ids(), false, |p| f64_key(p.coords[0])).unwrap();
        let got = read_all(&mut pool, &ds, &run);
        let mut want = pts.clone();
        want.sort_by(|a, b| a.coords[0].total_cmp(&b.coords[0]));
        assert_eq!(got, want);
        assert_eq!(run.len() as u64, ds.pages);
    }

    #[test]
    fn stable_on_ties() {
        let pts: Vec<Point> = (0..5000).map(|i| Point::with_id(vec![(i % 3) as f64, 0.0], i)).collect();
        let (mut pool, ds) = setup(&pts, 8);
        let run = external_sort(&mut pool, &ds.layout, &ds.page_ids(), false, |p| f64_key(p.coords[0])).unwrap();
        let got = read_all(&mut pool, &ds, &run);
        let mut want = pts.clone();
        want.sort_by(|a, b| a.coords[0].total_cmp(&b.coords[0]));
        assert_eq!(got, want);
    }

    #[test]
    fn sorted_input_within_buffer_costs_one_pass() {
        let pts: Vec<Point> = (0..16 * 20).map(|i| Point::with_id(vec![i as f64, 0.0], i)).collect();
        let (mut pool, ds) = setup(&pts, 32);
        external_sort(&mut pool, &ds.layout, &ds.page_ids(), false, |p| f64_key(p.coords[0])).unwrap();
        assert_eq!(pool.stats().reads, 20);
        assert_eq!(pool.stats().writes, 20);
    }

    /// Textbook cost: run formation plus one read and write of every page
    /// per merge pass.
    fn textbook(p: f64, m: f64) -> f64 {
        let runs = (p / m).ceil();
        let passes = if runs <= 1.0 { 0.0 } else { (runs.ln() / (m - 1.0).ln()).ceil() };
        2.0 * p * (1.0 + passes)
    }

    #[test]
    fn io_follows_pass_count() {
        for (n, m) in [(16 * 1000, 10), (16 * 3000, 20), (16 * 2000, 200), (16 * 5000, 6)] {
            let pts = random(n);
            let (mut pool, ds) = setup(&pts, m);
            external_sort(&mut pool, &ds.layout, &ds.page_ids(), false, |p| f64_key(p.coords[1])).unwrap();
            let got = pool.stats().total() as f64;
            let want = textbook(ds.pages as f64, m as f64);
            assert!((got - want).abs() <= 0.1 * want, "n={n} m={m}: {got} vs {want}");
        }
    }
}
