//! Full bulk loading.
//!
//! A build samples `alpha * C_B` pages and splits them into `C_B`
//! subspaces with a major split tree (step 1), streams the remaining points
//! into those subspaces while the buffer lasts (step 2), refines every
//! subspace that fits in the buffer (step 3), co-locates small subspace
//! nodes on shared pages (step 4), and bulk loads each remaining dense
//! subspace recursively (step 5).

mod merge;
mod refine;

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use merge::merge_branches;
pub use refine::generate_entries;
pub(crate) use refine::{generate_entries_with, predicted_entries, union_of, write_node_page};

use crate::error::{Error, Result};
use crate::geometry::{Mbb, Point};
use crate::index::{Dataset, Index};
use crate::splittree::SplitTree;
use crate::storage::node::{Entry, NodeRef, Slot};
use crate::storage::{decode_points_into, encode_points, BufferPool, IoStats, PageDevice, PageId, PageLayout};

/// Dense-subspace recursion limit.
pub const MAX_DEPTH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FmbiConfig {
    /// Seed of the step-1 page sample.
    pub seed: u64,
    pub max_depth: usize,
}

impl Default for FmbiConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            max_depth: MAX_DEPTH,
        }
    }
}

/// Pages a build may keep pinned: the whole buffer except one frame left
/// for reading input and writing finished nodes.
pub fn working_pages(buffer_pages: usize) -> usize {
    buffer_pages.saturating_sub(1)
}

/// Pages per step-1 subspace.
pub fn alpha(buffer_pages: usize, branch_capacity: usize) -> usize {
    working_pages(buffer_pages) / branch_capacity
}

/// Per-invocation outcome of a build (the top level, and one per dense
/// subspace recursion).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InvocationReport {
    pub depth: usize,
    pub input_pages: usize,
    /// Pages per step-1 subspace; 0 when the input was refined directly.
    pub alpha: usize,
    pub subspace_points: Vec<u64>,
    pub subspace_pages: Vec<usize>,
    /// Subspaces still active when distribution ended.
    pub active: Vec<bool>,
    pub dense: Vec<bool>,
    /// Entry total of each page written by the merge step.
    pub groups: Vec<usize>,
}

impl InvocationReport {
    /// Merged pages holding at most `C_B / 2` entries.
    pub fn underflowed(&self, branch_capacity: usize) -> usize {
        self.groups.iter().filter(|&&n| 2 * n <= branch_capacity).count()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BuildReport {
    pub invocations: Vec<InvocationReport>,
    pub io: IoStats,
}

/// A subspace being filled during distribution.
#[derive(Debug)]
pub(crate) struct Sub {
    pub mbb: Mbb,
    /// Flushed pages, all full except possibly the last one flushed.
    pub disk: Vec<PageId>,
    /// Pinned pages backing `mem`.
    pub mem_pages: Vec<PageId>,
    pub mem: Vec<Point>,
    pub active: bool,
    pub count: u64,
}

impl Sub {
    pub fn seeded<D: PageDevice>(pool: &mut BufferPool<D>, cl: usize, points: Vec<Point>) -> Result<Self> {
        let mbb = crate::geometry::mbb_of(points.iter())?;
        let pages = points.len().div_ceil(cl);
        let mem_pages = (0..pages).map(|_| alloc_pinned(pool)).collect::<Result<_>>()?;
        Ok(Sub {
            mbb,
            disk: Vec::new(),
            mem_pages,
            count: points.len() as u64,
            mem: points,
            active: true,
        })
    }

    /// A subspace over points already held on pinned `pages`.
    pub fn with_pages(points: Vec<Point>, pages: Vec<PageId>) -> Result<Self> {
        Ok(Sub {
            mbb: crate::geometry::mbb_of(points.iter())?,
            disk: Vec::new(),
            mem_pages: pages,
            count: points.len() as u64,
            mem: points,
            active: true,
        })
    }

    pub fn pages(&self) -> usize {
        self.disk.len() + self.mem_pages.len()
    }

    pub fn needs_page(&self, cl: usize) -> bool {
        self.mem.len() == self.mem_pages.len() * cl
    }

    pub fn push(&mut self, p: Point) {
        self.mbb.expand_point(&p.coords);
        self.count += 1;
        self.mem.push(p);
    }

    /// Writes every in-memory page to disk and unpins it.
    pub fn flush_mem<D: PageDevice>(
        &mut self,
        pool: &mut BufferPool<D>,
        layout: &PageLayout,
        scratch: &mut [u8],
    ) -> Result<()> {
        let cl = layout.leaf_capacity();
        for (i, &id) in self.mem_pages.iter().enumerate() {
            let end = ((i + 1) * cl).min(self.mem.len());
            encode_points(layout, &self.mem[i * cl..end], scratch)?;
            pool.put(id, scratch)?;
            pool.flush(id)?;
            pool.unpin(id)?;
        }
        self.disk.append(&mut self.mem_pages);
        self.mem.clear();
        Ok(())
    }
}

impl Sub {
    /// Deactivates the subspace, writing its full pages and keeping a
    /// partial last page in memory as the retained page.
    pub fn deactivate<D: PageDevice>(
        &mut self,
        pool: &mut BufferPool<D>,
        layout: &PageLayout,
        scratch: &mut [u8],
    ) -> Result<()> {
        let cl = layout.leaf_capacity();
        let full = self.mem.len() / cl;
        let keep_pages = self.mem_pages.split_off(full);
        let keep_points = self.mem.split_off(full * cl);
        self.flush_mem(pool, layout, scratch)?;
        self.mem_pages = keep_pages;
        self.mem = keep_points;
        self.active = false;
        Ok(())
    }
}

pub(crate) fn alloc_pinned<D: PageDevice>(pool: &mut BufferPool<D>) -> Result<PageId> {
    let id = pool.allocate()?;
    pool.pin(id)?;
    Ok(id)
}

/// Reads pages into memory, releasing owned ones for reuse.
pub(crate) fn load_pages<D: PageDevice>(
    pool: &mut BufferPool<D>,
    layout: &PageLayout,
    pages: &[PageId],
    owned: bool,
    out: &mut Vec<Point>,
) -> Result<()> {
    for &id in pages {
        let buf = pool.read(id)?;
        decode_points_into(layout, buf, id, out)?;
        if owned {
            pool.free_page(id);
        }
    }
    Ok(())
}

/// Refines points held in memory onto `pages` (pinned), releasing pages
/// beyond `ceil(n / C_L)`.
pub(crate) fn refine_into<D: PageDevice>(
    pool: &mut BufferPool<D>,
    layout: &PageLayout,
    scratch: &mut [u8],
    points: &mut [Point],
    pages: &[PageId],
) -> Result<Vec<Entry>> {
    let need = points.len().div_ceil(layout.leaf_capacity());
    for &id in &pages[need..] {
        pool.unpin(id)?;
        pool.free_page(id);
    }
    generate_entries_with(pool, layout, points, &pages[..need], scratch)
}

/// Loads pages and refines their points into freshly allocated pages.
pub(crate) fn reload_and_refine<D: PageDevice>(
    pool: &mut BufferPool<D>,
    layout: &PageLayout,
    scratch: &mut [u8],
    pages: &[PageId],
    owned: bool,
) -> Result<Vec<Entry>> {
    let mut points = Vec::new();
    load_pages(pool, layout, pages, owned, &mut points)?;
    let need = points.len().div_ceil(layout.leaf_capacity());
    let out: Vec<PageId> = (0..need).map(|_| alloc_pinned(pool)).collect::<Result<_>>()?;
    generate_entries_with(pool, layout, &mut points, &out, scratch)
}

/// Bulk loads a dataset.
///
/// Dataset pages are only read; the index is written to newly allocated
/// pages. The pool's capacity is the buffer size `M`, which must exceed
/// `C_B`. The pool is flushed on return.
pub fn bulk_load<D: PageDevice>(
    pool: &mut BufferPool<D>,
    dataset: &Dataset,
    config: &FmbiConfig,
) -> Result<(Index, BuildReport)> {
    let layout = &dataset.layout;
    let before = pool.stats();
    let mut build = Build::new(pool, layout, config)?;
    let out = build.run(dataset.page_ids(), false, dataset.len, 0)?;
    let invocations = core::mem::take(&mut build.reports);
    pool.flush_all()?;
    let index = Index {
        layout: *layout,
        root: out.root,
        len: out.points,
        mbb: out.mbb,
    };
    Ok((
        index,
        BuildReport {
            invocations,
            io: pool.stats().since(before),
        },
    ))
}

pub(crate) struct Built {
    pub root: NodeRef,
    pub entries: usize,
    pub mbb: Mbb,
    pub points: u64,
}

pub(crate) struct Build<'a, D> {
    pool: &'a mut BufferPool<D>,
    layout: PageLayout,
    rng: ChaCha8Rng,
    max_depth: usize,
    scratch: Vec<u8>,
    reports: Vec<InvocationReport>,
}

impl<'a, D: PageDevice> Build<'a, D> {
    pub fn new(pool: &'a mut BufferPool<D>, layout: &PageLayout, config: &FmbiConfig) -> Result<Self> {
        let cb = layout.branch_capacity();
        if pool.capacity() <= cb {
            return Err(Error::InsufficientBuffer {
                pages: pool.capacity(),
                required: cb + 1,
            });
        }
        if pool.page_size() != layout.page_size() {
            return Err(Error::InvalidArgument("pool and layout page sizes differ".into()));
        }
        if pool.pinned() != 0 {
            return Err(Error::InvalidArgument("build needs an unpinned pool".into()));
        }
        Ok(Self {
            pool,
            layout: *layout,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            max_depth: config.max_depth,
            scratch: vec![0u8; layout.page_size()],
            reports: Vec::new(),
        })
    }

    fn limit(&self) -> usize {
        working_pages(self.pool.capacity())
    }

    /// Builds over `pages` holding `len` points, all pages full except
    /// possibly the last.
    pub fn run(&mut self, pages: Vec<PageId>, owned: bool, len: u64, depth: usize) -> Result<Built> {
        if depth > self.max_depth {
            return Err(Error::RecursionLimit(self.max_depth));
        }
        if pages.is_empty() {
            return Err(Error::EmptyPointSet);
        }
        let cb = self.layout.branch_capacity();
        let cl = self.layout.leaf_capacity();
        let a = alpha(self.pool.capacity(), cb);
        // Only the last page may be partial; it is never sampled.
        let full = if len == (pages.len() * cl) as u64 { pages.len() } else { pages.len() - 1 };
        if full < a * cb {
            return self.direct(pages, owned, depth);
        }
        let mut report = InvocationReport {
            depth,
            input_pages: pages.len(),
            alpha: a,
            ..Default::default()
        };

        // Step 1.
        let mut picked = rand::seq::index::sample(&mut self.rng, full, a * cb).into_vec();
        picked.sort_unstable();
        let mut sampled = vec![false; pages.len()];
        let mut seeds = Vec::with_capacity(a * cb * cl);
        for &i in &picked {
            sampled[i] = true;
            load_pages(self.pool, &self.layout, &pages[i..=i], owned, &mut seeds)?;
        }
        let (tree, parts) = SplitTree::build(seeds, cb, a, cl)?;
        let mut subs = Vec::with_capacity(cb);
        for part in parts {
            subs.push(Sub::seeded(self.pool, cl, part)?);
        }

        // Step 2.
        let limit = self.limit();
        let mut batch = Vec::with_capacity(cl);
        for (i, &id) in pages.iter().enumerate() {
            if sampled[i] {
                continue;
            }
            batch.clear();
            load_pages(self.pool, &self.layout, &[id], owned, &mut batch)?;
            for p in batch.drain(..) {
                let s = tree.locate(&p.coords);
                if subs[s].needs_page(cl) {
                    self.make_room(&mut subs[s], limit)?;
                }
                subs[s].push(p);
            }
        }
        for sub in subs.iter_mut().filter(|s| !s.active) {
            sub.flush_mem(self.pool, &self.layout, &mut self.scratch)?;
        }
        report.active = subs.iter().map(|s| s.active).collect();
        report.subspace_points = subs.iter().map(|s| s.count).collect();
        report.subspace_pages = subs.iter().map(Sub::pages).collect();

        // Step 3: active subspaces are already in memory.
        let mut nodes: Vec<Option<Vec<Entry>>> = (0..cb).map(|_| None).collect();
        for (s, sub) in subs.iter_mut().enumerate().filter(|(_, s)| s.active) {
            let mut pts = core::mem::take(&mut sub.mem);
            let pages = core::mem::take(&mut sub.mem_pages);
            nodes[s] = Some(refine_into(self.pool, &self.layout, &mut self.scratch, &mut pts, &pages)?);
        }
        report.dense = vec![false; cb];
        for (s, sub) in subs.iter().enumerate().filter(|(_, s)| !s.active) {
            let free = limit - self.pool.pinned();
            if sub.disk.len() > free {
                report.dense[s] = true;
                continue;
            }
            nodes[s] = Some(reload_and_refine(self.pool, &self.layout, &mut self.scratch, &sub.disk, true)?);
        }

        // Step 4.
        let counts: Vec<Option<usize>> = nodes.iter().map(|n| n.as_ref().map(Vec::len)).collect();
        let groups = merge_branches(&tree, &counts, cb);
        let mut root: Vec<Option<Entry>> = (0..cb).map(|_| None).collect();
        for group in &groups {
            let slots: Vec<Slot> = group.iter().map(|&s| Slot::new(nodes[s].take().unwrap())).collect();
            report.groups.push(slots.iter().map(|sl| sl.entries.len()).sum());
            let page = write_node_page(self.pool, &self.layout, &mut self.scratch, &slots)?;
            for (slot, &s) in group.iter().enumerate() {
                let n = slots[slot].entries.len();
                root[s] = Some(Entry::node(subs[s].mbb.clone(), NodeRef::new(page, slot as u16), n));
            }
        }
        let report_at = self.reports.len();
        self.reports.push(report);

        // Step 5.
        for s in 0..cb {
            if root[s].is_none() {
                let pages = core::mem::take(&mut subs[s].disk);
                let built = self.run(pages, true, subs[s].count, depth + 1)?;
                root[s] = Some(Entry::node(built.mbb, built.root, built.entries));
            }
        }
        let root: Vec<Entry> = root.into_iter().map(Option::unwrap).collect();
        let mbb = union_of(&root);
        let points = self.reports[report_at].subspace_points.iter().sum();
        let page = write_node_page(self.pool, &self.layout, &mut self.scratch, &[Slot::new(root)])?;
        Ok(Built {
            root: NodeRef::new(page, 0),
            entries: cb,
            mbb,
            points,
        })
    }

    /// Gives an active subspace a new page or deactivates it; gives an
    /// inactive one a fresh retained page.
    fn make_room(&mut self, sub: &mut Sub, limit: usize) -> Result<()> {
        if sub.active && self.pool.pinned() < limit {
            sub.mem_pages.push(alloc_pinned(self.pool)?);
            return Ok(());
        }
        sub.flush_mem(self.pool, &self.layout, &mut self.scratch)?;
        sub.active = false;
        sub.mem_pages.push(alloc_pinned(self.pool)?);
        Ok(())
    }

    /// Input too small to sample: refine it as a single subspace.
    fn direct(&mut self, pages: Vec<PageId>, owned: bool, depth: usize) -> Result<Built> {
        if pages.len() > self.limit() {
            return Err(Error::InsufficientBuffer {
                pages: self.pool.capacity(),
                required: pages.len() + 1,
            });
        }
        let mut points = Vec::new();
        load_pages(self.pool, &self.layout, &pages, owned, &mut points)?;
        if points.is_empty() {
            return Err(Error::EmptyPointSet);
        }
        let n = points.len() as u64;
        let need = points.len().div_ceil(self.layout.leaf_capacity());
        let out: Vec<PageId> = (0..need).map(|_| alloc_pinned(self.pool)).collect::<Result<_>>()?;
        let entries = generate_entries_with(self.pool, &self.layout, &mut points, &out, &mut self.scratch)?;
        let mbb = union_of(&entries);
        self.reports.push(InvocationReport {
            depth,
            input_pages: pages.len(),
            alpha: 0,
            subspace_points: vec![n],
            subspace_pages: vec![need],
            active: vec![true],
            dense: vec![false],
            groups: vec![entries.len()],
        });
        let count = entries.len();
        let page = write_node_page(self.pool, &self.layout, &mut self.scratch, &[Slot::new(entries)])?;
        Ok(Built {
            root: NodeRef::new(page, 0),
            entries: count,
            mbb,
            points: n,
        })
    }
}

#[cfg(test)]
mod tests;
