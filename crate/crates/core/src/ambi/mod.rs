//! Adaptive bulk loading.
//!
//! No index exists until the first query. That query distributes the
//! dataset like a full build, but when the buffer fills it flushes the
//! subspace farthest from the query instead of the one being filled, and
//! splits qualified subspaces further. Only subspaces still in memory at
//! the end are refined; the rest stay as unrefined entries and are refined
//! when a later query reaches them.
//!
//! Inserts and deletes are lazy: a full leaf grows an overflow chain, and
//! a changed leaf is rebuilt the next time a query reads it.

mod adaptive;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use adaptive::Adaptive;

use crate::error::{Error, Result};
use crate::fmbi::{alloc_pinned, generate_entries_with, reload_and_refine, union_of, working_pages, write_node_page, MAX_DEPTH};
use crate::geometry::{mbb_of, Mbb, Point, Query};
use crate::index::{Dataset, Index};
use crate::query::{knn_with, window_with, Hooks, QueryResult, Target};
use crate::storage::node::{decode_node, decode_node_page, encode_node_page, fits, ChildKind, Entry, NodeRef, Slot};
use crate::storage::{decode_points, encode_points, BufferPool, IoStats, PageDevice, PageId, PageLayout};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AmbiConfig {
    /// Seed of every step-1 sample.
    pub seed: u64,
    pub max_depth: usize,
}

impl Default for AmbiConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            max_depth: MAX_DEPTH,
        }
    }
}

/// An unrefined subspace: its points sit on `pages`, all full but the
/// last.
#[derive(Debug, Clone)]
pub(crate) struct Pending {
    pub pages: Vec<PageId>,
    pub count: u64,
    pub mbb: Mbb,
    /// Slot reserved on a merged node page for the refined node.
    pub slot: Option<NodeRef>,
    pub depth: usize,
}

/// What one query did to the index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RefineLog {
    /// Subspaces refined into nodes.
    pub refined: usize,
    /// Pages of unrefined subspaces read back for refinement.
    pub pages_reloaded: u64,
    /// Subspaces flushed during distribution.
    pub evictions: usize,
    /// Qualified subspaces split by a minor split tree.
    pub splits: usize,
    /// Leaves rebuilt after updates.
    pub rebuilt_leaves: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AmbiResult {
    pub result: QueryResult,
    pub log: RefineLog,
    /// All page traffic of the query, refinement included.
    pub io: IoStats,
}

#[derive(Debug)]
pub struct Ambi {
    dataset: Dataset,
    config: AmbiConfig,
    rng: ChaCha8Rng,
    root: Option<NodeRef>,
    mbb: Option<Mbb>,
    len: u64,
    pending: Vec<Option<Pending>>,
    chains: BTreeMap<PageId, Vec<PageId>>,
    dirty: BTreeSet<PageId>,
    log: RefineLog,
    scratch: Vec<u8>,
}

impl Ambi {
    pub fn new(dataset: Dataset, config: AmbiConfig) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            root: None,
            mbb: None,
            len: dataset.len,
            pending: Vec::new(),
            chains: BTreeMap::new(),
            dirty: BTreeSet::new(),
            log: RefineLog::default(),
            scratch: vec![0u8; dataset.layout.page_size()],
            dataset,
        }
    }

    pub fn layout(&self) -> &PageLayout {
        &self.dataset.layout
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_initialized(&self) -> bool {
        self.root.is_some()
    }

    /// The index as built so far; unrefined entries remain in it.
    pub fn index(&self) -> Option<Index> {
        Some(Index {
            layout: self.dataset.layout,
            root: self.root?,
            len: self.len,
            mbb: self.mbb.clone()?,
        })
    }

    /// Subspaces not refined yet.
    pub fn unrefined(&self) -> usize {
        self.pending.iter().filter(|p| p.is_some()).count()
    }

    /// Points in unrefined subspaces.
    pub fn unrefined_points(&self) -> u64 {
        self.pending.iter().flatten().map(|p| p.count).sum()
    }

    /// Leaves carrying overflow pages.
    pub fn chained_leaves(&self) -> impl Iterator<Item = PageId> + '_ {
        self.chains.keys().copied()
    }

    /// Leaves changed by updates and not rebuilt yet.
    pub fn dirty_leaves(&self) -> impl Iterator<Item = PageId> + '_ {
        self.dirty.iter().copied()
    }

    /// Answers a query, building or refining the index as needed.
    pub fn query<D: PageDevice>(&mut self, pool: &mut BufferPool<D>, q: &Query) -> Result<AmbiResult> {
        let layout = self.dataset.layout;
        if q.dims() != layout.dims() {
            return Err(Error::DimensionMismatch {
                expected: layout.dims(),
                found: q.dims(),
            });
        }
        let before = pool.stats();
        self.log = RefineLog::default();
        let target = match q {
            Query::Window(w) => Target::Window(&w.rect),
            Query::Knn(k) => Target::Knn(&k.center.coords, k.k),
        };
        let root = match self.root {
            Some(r) => r,
            None => self.first(pool, target)?,
        };
        let mut result = match q {
            Query::Window(w) => window_with(pool, &layout, root, &w.rect, self)?,
            Query::Knn(k) => knn_with(pool, &layout, root, self.len, k, self)?,
        };
        let io = pool.stats().since(before);
        result.pages_read = io.reads;
        Ok(AmbiResult {
            result,
            log: self.log,
            io,
        })
    }

    fn first<D: PageDevice>(&mut self, pool: &mut BufferPool<D>, target: Target<'_>) -> Result<NodeRef> {
        let layout = self.dataset.layout;
        check_pool(pool, &layout)?;
        let pages = self.dataset.page_ids();
        let built = Adaptive::new(pool, layout, &mut self.rng, target, &mut self.pending, &mut self.log, 0).run(
            &pages,
            false,
            self.dataset.len,
        )?;
        self.root = Some(built.root);
        self.mbb = Some(built.mbb);
        self.len = built.points;
        Ok(built.root)
    }

    /// Adds a point. The index must exist.
    pub fn insert<D: PageDevice>(&mut self, pool: &mut BufferPool<D>, p: Point) -> Result<()> {
        let layout = self.dataset.layout;
        let mut at = self.root.ok_or_else(not_built)?;
        p.validate(layout.dims())?;
        let cl = layout.leaf_capacity();
        loop {
            let mut entries = decode_node(&layout, pool.read(at.page)?, at)?;
            if entries.is_empty() {
                let page = pool.allocate()?;
                encode_points(&layout, core::slice::from_ref(&p), &mut self.scratch)?;
                pool.put(page, &self.scratch)?;
                entries.push(Entry::data(Mbb::of_point(&p), page, 1));
                self.rewrite(pool, at, entries)?;
                break;
            }
            let i = choose(&entries, &p.coords);
            let mut changed = !entries[i].mbb.contains_point(&p.coords);
            entries[i].mbb.expand_point(&p.coords);
            let e = entries[i].clone();
            match e.kind {
                ChildKind::Node => {
                    if changed {
                        self.rewrite(pool, at, entries)?;
                    }
                    at = e.node_ref();
                    continue;
                }
                ChildKind::Data => {
                    let last = self.chains.get(&e.page).and_then(|c| c.last()).copied().unwrap_or(e.page);
                    let mut pts = decode_points(&layout, pool.read(last)?, last)?;
                    if pts.len() < cl {
                        pts.push(p.clone());
                        encode_points(&layout, &pts, &mut self.scratch)?;
                        pool.put(last, &self.scratch)?;
                        if last == e.page {
                            entries[i].count += 1;
                            changed = true;
                        }
                    } else {
                        let page = pool.allocate()?;
                        encode_points(&layout, core::slice::from_ref(&p), &mut self.scratch)?;
                        pool.put(page, &self.scratch)?;
                        self.chains.entry(e.page).or_default().push(page);
                        self.dirty.insert(e.page);
                    }
                }
                ChildKind::Unrefined => {
                    let pend = self.pending_mut(e.page)?;
                    let last = *pend.pages.last().unwrap();
                    let mut pts = decode_points(&layout, pool.read(last)?, last)?;
                    let page = if pts.len() < cl {
                        pts.push(p.clone());
                        last
                    } else {
                        pts = vec![p.clone()];
                        pool.allocate()?
                    };
                    encode_points(&layout, &pts, &mut self.scratch)?;
                    pool.put(page, &self.scratch)?;
                    let pend = self.pending_mut(e.page)?;
                    if page != last {
                        pend.pages.push(page);
                    }
                    pend.count += 1;
                    pend.mbb.expand_point(&p.coords);
                    entries[i].count += 1;
                    changed = true;
                }
            }
            if changed {
                self.rewrite(pool, at, entries)?;
            }
            break;
        }
        self.len += 1;
        if let Some(m) = self.mbb.as_mut() {
            m.expand_point(&p.coords);
        }
        Ok(())
    }

    /// Removes one stored point equal to `p` (same coordinates, and same id
    /// when `p` has one). Returns whether a point was removed.
    pub fn delete<D: PageDevice>(&mut self, pool: &mut BufferPool<D>, p: &Point) -> Result<bool> {
        let layout = self.dataset.layout;
        let root = self.root.ok_or_else(not_built)?;
        p.validate(layout.dims())?;
        let mut stack = vec![root];
        while let Some(at) = stack.pop() {
            let mut entries = decode_node(&layout, pool.read(at.page)?, at)?;
            for i in 0..entries.len() {
                let e = entries[i].clone();
                if !e.mbb.contains_point(&p.coords) {
                    continue;
                }
                // Some(counted) when removed; counted says whether the
                // entry's point count covers the page it left.
                let removed = match e.kind {
                    ChildKind::Node => {
                        stack.push(e.node_ref());
                        None
                    }
                    ChildKind::Data => self.delete_from_leaf(pool, &e, p)?,
                    ChildKind::Unrefined => self.delete_from_pending(pool, &e, p)?.then_some(true),
                };
                if let Some(counted) = removed {
                    if counted {
                        entries[i].count -= 1;
                    }
                    self.rewrite(pool, at, entries)?;
                    self.len -= 1;
                    return Ok(true);
                }
            }
        }
        Ok(false)
    }

    fn delete_from_leaf<D: PageDevice>(
        &mut self,
        pool: &mut BufferPool<D>,
        e: &Entry,
        p: &Point,
    ) -> Result<Option<bool>> {
        let layout = self.dataset.layout;
        let mut pages = vec![e.page];
        pages.extend(self.chains.get(&e.page).into_iter().flatten().copied());
        for page in pages {
            let mut pts = decode_points(&layout, pool.read(page)?, page)?;
            if let Some(pos) = pts.iter().position(|x| same(x, p)) {
                pts.swap_remove(pos);
                encode_points(&layout, &pts, &mut self.scratch)?;
                pool.put(page, &self.scratch)?;
                self.dirty.insert(e.page);
                return Ok(Some(page == e.page));
            }
        }
        Ok(None)
    }

    /// Removes a point from an unrefined subspace, moving the subspace's
    /// last point into the hole so that only the last page stays partial.
    fn delete_from_pending<D: PageDevice>(&mut self, pool: &mut BufferPool<D>, e: &Entry, p: &Point) -> Result<bool> {
        let layout = self.dataset.layout;
        let pages = self.pending_mut(e.page)?.pages.clone();
        for (j, &page) in pages.iter().enumerate() {
            let mut pts = decode_points(&layout, pool.read(page)?, page)?;
            let Some(pos) = pts.iter().position(|x| same(x, p)) else {
                continue;
            };
            let last = *pages.last().unwrap();
            if j + 1 == pages.len() {
                pts.swap_remove(pos);
            } else {
                let mut tail = decode_points(&layout, pool.read(last)?, last)?;
                pts[pos] = tail.pop().unwrap();
                encode_points(&layout, &tail, &mut self.scratch)?;
                pool.put(last, &self.scratch)?;
                if tail.is_empty() {
                    pool.free_page(last);
                }
                encode_points(&layout, &pts, &mut self.scratch)?;
                pool.put(page, &self.scratch)?;
                let pend = self.pending_mut(e.page)?;
                if tail.is_empty() {
                    pend.pages.pop();
                }
                pend.count -= 1;
                return Ok(true);
            }
            encode_points(&layout, &pts, &mut self.scratch)?;
            pool.put(page, &self.scratch)?;
            let pend = self.pending_mut(e.page)?;
            if pts.is_empty() {
                pool.free_page(page);
                pend.pages.pop();
            }
            pend.count -= 1;
            return Ok(true);
        }
        Ok(false)
    }

    fn pending_mut(&mut self, id: PageId) -> Result<&mut Pending> {
        self.pending
            .get_mut(id as usize)
            .and_then(Option::as_mut)
            .ok_or_else(|| Error::Corrupt {
                page: id,
                reason: "unknown unrefined subspace".into(),
            })
    }

    /// Replaces the entries of the node at `at`.
    fn rewrite<D: PageDevice>(&mut self, pool: &mut BufferPool<D>, at: NodeRef, entries: Vec<Entry>) -> Result<()> {
        let layout = self.dataset.layout;
        let mut slots = decode_node_page(&layout, pool.read(at.page)?, at.page)?;
        slots[at.slot as usize].entries = entries;
        encode_node_page(&layout, &slots, &mut self.scratch)?;
        pool.put(at.page, &self.scratch)
    }

    /// Replaces the child of `parent` matching `pred` with `replacement`,
    /// or with one node over `replacement` when the parent's page has no
    /// room. Returns what now stands in the child's place.
    fn replace_child<D: PageDevice>(
        &mut self,
        pool: &mut BufferPool<D>,
        parent: NodeRef,
        pred: impl Fn(&Entry) -> bool,
        replacement: Vec<Entry>,
    ) -> Result<Vec<Entry>> {
        let layout = self.dataset.layout;
        let mut slots = decode_node_page(&layout, pool.read(parent.page)?, parent.page)?;
        let s = parent.slot as usize;
        let i = slots[s].entries.iter().position(pred).ok_or_else(|| Error::Corrupt {
            page: parent.page,
            reason: "child missing from its parent".into(),
        })?;
        let old = slots[s].entries.clone();
        slots[s].entries.splice(i..=i, replacement.iter().cloned());
        let placed = if fits(&layout, &slots) {
            replacement
        } else {
            slots[s].entries = old;
            let n = replacement.len();
            let mbb = union_of(&replacement);
            let page = write_node_page(pool, &layout, &mut self.scratch, &[Slot::new(replacement)])?;
            let e = Entry::node(mbb, NodeRef::new(page, 0), n);
            slots[s].entries[i] = e.clone();
            vec![e]
        };
        encode_node_page(&layout, &slots, &mut self.scratch)?;
        pool.put(parent.page, &self.scratch)?;
        Ok(placed)
    }

    /// Refines an unrefined child of `parent`.
    fn resolve<D: PageDevice>(
        &mut self,
        pool: &mut BufferPool<D>,
        parent: NodeRef,
        e: &Entry,
        target: &Target<'_>,
    ) -> Result<Vec<Entry>> {
        let layout = self.dataset.layout;
        let id = e.page;
        let pend = self.pending_mut(id)?.clone();
        self.pending[id as usize] = None;
        let is_child = |x: &Entry| x.kind == ChildKind::Unrefined && x.page == id;
        if pend.count == 0 {
            for &page in &pend.pages {
                pool.free_page(page);
            }
            return self.replace_child(pool, parent, is_child, Vec::new());
        }
        self.log.refined += 1;
        self.log.pages_reloaded += pend.pages.len() as u64;
        let free = working_pages(pool.capacity()).saturating_sub(pool.pinned());
        let entry = if pend.pages.len() <= free {
            let entries = reload_and_refine(pool, &layout, &mut self.scratch, &pend.pages, true)?;
            self.place_refined(pool, pend.slot, entries)?
        } else {
            if pend.depth > self.config.max_depth {
                return Err(Error::RecursionLimit(self.config.max_depth));
            }
            check_pool(pool, &layout)?;
            let built = Adaptive::new(pool, layout, &mut self.rng, target.clone(), &mut self.pending, &mut self.log, pend.depth)
                .run(&pend.pages, true, pend.count)?;
            Entry::node(built.mbb, built.root, built.entries)
        };
        self.replace_child(pool, parent, is_child, vec![entry])
    }

    /// Stores a refined node in its reserved slot if it fits there, else
    /// on a page of its own.
    fn place_refined<D: PageDevice>(
        &mut self,
        pool: &mut BufferPool<D>,
        slot: Option<NodeRef>,
        entries: Vec<Entry>,
    ) -> Result<Entry> {
        let layout = self.dataset.layout;
        let mbb = union_of(&entries);
        let n = entries.len();
        if let Some(at) = slot {
            let mut slots = decode_node_page(&layout, pool.read(at.page)?, at.page)?;
            slots[at.slot as usize].entries = entries.clone();
            if fits(&layout, &slots) {
                encode_node_page(&layout, &slots, &mut self.scratch)?;
                pool.put(at.page, &self.scratch)?;
                return Ok(Entry::node(mbb, at, n));
            }
        }
        let page = write_node_page(pool, &layout, &mut self.scratch, &[Slot::new(entries)])?;
        Ok(Entry::node(mbb, NodeRef::new(page, 0), n))
    }

    /// Rebuilds a leaf changed by updates: overflow pages are folded in,
    /// an emptied leaf disappears, and an overfull one is refined into
    /// several leaves.
    fn rebuild_leaf<D: PageDevice>(&mut self, pool: &mut BufferPool<D>, parent: NodeRef, e: &Entry) -> Result<Vec<Entry>> {
        let layout = self.dataset.layout;
        let page = e.page;
        let chain = self.chains.remove(&page).unwrap_or_default();
        self.dirty.remove(&page);
        self.log.rebuilt_leaves += 1;
        let mut pts = decode_points(&layout, pool.read(page)?, page)?;
        for &c in &chain {
            pts.extend(decode_points(&layout, pool.read(c)?, c)?);
            pool.free_page(c);
        }
        let is_child = |x: &Entry| x.kind == ChildKind::Data && x.page == page;
        let replacement = if pts.is_empty() {
            pool.free_page(page);
            Vec::new()
        } else if pts.len() <= layout.leaf_capacity() {
            encode_points(&layout, &pts, &mut self.scratch)?;
            pool.put(page, &self.scratch)?;
            vec![Entry::data(mbb_of(pts.iter())?, page, pts.len())]
        } else {
            pool.free_page(page);
            let need = pts.len().div_ceil(layout.leaf_capacity());
            let out: Vec<PageId> = (0..need).map(|_| alloc_pinned(pool)).collect::<Result<_>>()?;
            generate_entries_with(pool, &layout, &mut pts, &out, &mut self.scratch)?
        };
        self.replace_child(pool, parent, is_child, replacement)
    }
}

impl<D: PageDevice> Hooks<D> for Ambi {
    fn needs(&self, entry: &Entry) -> bool {
        match entry.kind {
            ChildKind::Unrefined => true,
            ChildKind::Data => self.dirty.contains(&entry.page),
            ChildKind::Node => false,
        }
    }

    fn expand(
        &mut self,
        pool: &mut BufferPool<D>,
        parent: NodeRef,
        entry: &Entry,
        target: &Target<'_>,
    ) -> Result<Vec<Entry>> {
        match entry.kind {
            ChildKind::Unrefined => self.resolve(pool, parent, entry, target),
            _ => self.rebuild_leaf(pool, parent, entry),
        }
    }

    fn chain(&self, page: PageId) -> &[PageId] {
        self.chains.get(&page).map_or(&[], Vec::as_slice)
    }
}

fn check_pool<D: PageDevice>(pool: &BufferPool<D>, layout: &PageLayout) -> Result<()> {
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
        return Err(Error::InvalidArgument("adaptive build needs an unpinned pool".into()));
    }
    Ok(())
}

fn not_built() -> Error {
    Error::InvalidArgument("no index yet: run a query first".into())
}

fn same(a: &Point, b: &Point) -> bool {
    a.coords == b.coords && (b.id.is_none() || a.id == b.id)
}

/// The child to insert into: the first whose box holds the point, else the
/// one needing the least enlargement.
fn choose(entries: &[Entry], p: &[f64]) -> usize {
    if let Some(i) = entries.iter().position(|e| e.mbb.contains_point(p)) {
        return i;
    }
    let grow = |e: &Entry| {
        let mut m = e.mbb.clone();
        m.expand_point(p);
        (m.area() - e.mbb.area(), e.mbb.mindist_sq(p))
    };
    (0..entries.len())
        .min_by(|&a, &b| {
            let (ga, da) = grow(&entries[a]);
            let (gb, db) = grow(&entries[b]);
            ga.total_cmp(&gb).then(da.total_cmp(&db))
        })
        .unwrap()
}
