//! Query-driven distribution: steps 1 to 4 with deactivation ordered by
//! distance from the query, splitting of qualified subspaces, and deferred
//! refinement of everything that was flushed.

use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use super::{Pending, RefineLog};
use crate::error::{Error, Result};
use crate::fmbi::{
    alpha, alloc_pinned, generate_entries_with, load_pages, merge_branches, predicted_entries, refine_into, union_of,
    working_pages, write_node_page, Built, Sub,
};
use crate::geometry::{Mbb, Point};
use crate::query::Target;
use crate::splittree::SplitTree;
use crate::storage::node::{Entry, NodeRef, Slot};
use crate::storage::{BufferPool, PageDevice, PageId, PageLayout};

struct Region {
    sub: Option<Sub>,
    split: Option<(SplitTree, Vec<usize>)>,
}

/// Largest `k` squared distances seen so far, for the k-NN qualification
/// bound.
struct TopK {
    k: usize,
    heap: BinaryHeap<u64>,
}

impl TopK {
    fn offer(&mut self, d: f64) {
        // Non-negative floats order like their bit patterns.
        let bits = d.to_bits();
        if self.heap.len() < self.k {
            self.heap.push(bits);
        } else if self.heap.peek().is_some_and(|&top| bits < top) {
            self.heap.pop();
            self.heap.push(bits);
        }
    }

    fn bound(&self) -> f64 {
        if self.heap.len() < self.k {
            f64::INFINITY
        } else {
            f64::from_bits(*self.heap.peek().unwrap())
        }
    }
}

pub(crate) struct Adaptive<'a, D> {
    pub pool: &'a mut BufferPool<D>,
    pub layout: PageLayout,
    pub rng: &'a mut ChaCha8Rng,
    pub query: Target<'a>,
    pub pending: &'a mut Vec<Option<Pending>>,
    pub log: &'a mut RefineLog,
    pub depth: usize,
    scratch: Vec<u8>,
    regions: Vec<Region>,
    leaves: usize,
    topk: Option<TopK>,
}

impl<'a, D: PageDevice> Adaptive<'a, D> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        pool: &'a mut BufferPool<D>,
        layout: PageLayout,
        rng: &'a mut ChaCha8Rng,
        query: Target<'a>,
        pending: &'a mut Vec<Option<Pending>>,
        log: &'a mut RefineLog,
        depth: usize,
    ) -> Self {
        let topk = match query {
            Target::Knn(_, k) => Some(TopK {
                k,
                heap: BinaryHeap::new(),
            }),
            Target::Window(_) => None,
        };
        Self {
            pool,
            layout,
            rng,
            query,
            pending,
            log,
            depth,
            scratch: vec![0u8; layout.page_size()],
            regions: Vec::new(),
            leaves: 0,
            topk,
        }
    }

    fn limit(&self) -> usize {
        working_pages(self.pool.capacity())
    }

    fn dist(&self, mbb: &Mbb) -> f64 {
        self.query.dist_sq(mbb)
    }

    fn qualified(&self, mbb: &Mbb) -> bool {
        match (&self.query, &self.topk) {
            (Target::Window(w), _) => w.intersects(mbb),
            (Target::Knn(c, _), Some(t)) => mbb.mindist_sq(c) <= t.bound(),
            _ => true,
        }
    }

    fn observe(&mut self, p: &Point) {
        if let (Target::Knn(c, _), Some(t)) = (&self.query, self.topk.as_mut()) {
            t.offer(p.dist_sq(c));
        }
    }

    /// Distributes `pages` (all full but the last) and writes the partial
    /// index over them.
    pub fn run(&mut self, pages: &[PageId], owned: bool, len: u64) -> Result<Built> {
        if pages.is_empty() {
            return Err(Error::EmptyPointSet);
        }
        let cb = self.layout.branch_capacity();
        let cl = self.layout.leaf_capacity();
        let a = alpha(self.pool.capacity(), cb);
        let full = if len == (pages.len() * cl) as u64 { pages.len() } else { pages.len() - 1 };
        if full < a * cb {
            return self.direct(pages, owned);
        }

        // Step 1.
        let mut picked = rand::seq::index::sample(self.rng, full, a * cb).into_vec();
        picked.sort_unstable();
        let mut sampled = vec![false; pages.len()];
        let mut seeds = Vec::with_capacity(a * cb * cl);
        for &i in &picked {
            sampled[i] = true;
            load_pages(self.pool, &self.layout, &pages[i..=i], owned, &mut seeds)?;
        }
        for p in &seeds {
            self.observe(p);
        }
        let (tree, parts) = SplitTree::build(seeds, cb, a, cl)?;
        let mut kids = Vec::with_capacity(cb);
        for part in parts {
            let sub = Sub::seeded(self.pool, cl, part)?;
            kids.push(self.regions.len());
            self.regions.push(Region { sub: Some(sub), split: None });
        }
        self.leaves = cb;
        let root = self.regions.len();
        self.regions.push(Region {
            sub: None,
            split: Some((tree, kids)),
        });

        // Step 2.
        let mut batch = Vec::with_capacity(cl);
        for (i, &id) in pages.iter().enumerate() {
            if sampled[i] {
                continue;
            }
            batch.clear();
            load_pages(self.pool, &self.layout, &[id], owned, &mut batch)?;
            for p in batch.drain(..) {
                self.observe(&p);
                self.push(root, p)?;
            }
        }
        for r in 0..self.regions.len() {
            if let Some(sub) = self.regions[r].sub.as_mut().filter(|s| !s.active) {
                sub.flush_mem(self.pool, &self.layout, &mut self.scratch)?;
            }
        }

        // Steps 3 and 4.
        let (entry, points) = self.emit(root)?;
        Ok(Built {
            root: entry.node_ref(),
            entries: entry.count as usize,
            mbb: entry.mbb,
            points,
        })
    }

    fn push(&mut self, mut r: usize, p: Point) -> Result<()> {
        let cl = self.layout.leaf_capacity();
        loop {
            if let Some((tree, kids)) = &self.regions[r].split {
                r = kids[tree.locate(&p.coords)];
                continue;
            }
            let limit = self.limit();
            let sub = self.regions[r].sub.as_mut().unwrap();
            if !sub.needs_page(cl) {
                sub.push(p);
                return Ok(());
            }
            if !sub.active && !sub.mem_pages.is_empty() {
                // A full retained page goes to disk.
                sub.flush_mem(self.pool, &self.layout, &mut self.scratch)?;
            }
            if self.pool.pinned() < limit {
                let sub = self.regions[r].sub.as_mut().unwrap();
                sub.mem_pages.push(alloc_pinned(self.pool)?);
                sub.push(p);
                return Ok(());
            }
            self.relieve()?;
        }
    }

    /// Frees buffer by deactivating the active subspace farthest from the
    /// query, or by splitting it when it is qualified and large enough.
    fn relieve(&mut self) -> Result<()> {
        let cl = self.layout.leaf_capacity();
        let cb = self.layout.branch_capacity();
        let mut best: Option<(f64, usize, usize)> = None;
        for (r, region) in self.regions.iter().enumerate() {
            let Some(sub) = region.sub.as_ref().filter(|s| s.active) else {
                continue;
            };
            let key = (self.dist(&sub.mbb), sub.mem_pages.len());
            if best.is_none_or(|(d, n, _)| key.0 > d || (key.0 == d && key.1 > n)) {
                best = Some((key.0, key.1, r));
            }
        }
        let Some((_, _, r)) = best else {
            return Err(Error::BufferFull(self.pool.capacity()));
        };
        let sub = self.regions[r].sub.as_ref().unwrap();
        let splittable = sub.mem.len() / cl >= cb && self.leaves + cb - 1 <= self.limit();
        if splittable && self.qualified(&sub.mbb) {
            return self.split(r);
        }
        let sub = self.regions[r].sub.as_mut().unwrap();
        sub.deactivate(self.pool, &self.layout, &mut self.scratch)?;
        self.log.evictions += 1;
        Ok(())
    }

    /// Replaces a qualified subspace by the subspaces of a minor split
    /// tree built from its in-memory pages.
    fn split(&mut self, r: usize) -> Result<()> {
        let cl = self.layout.leaf_capacity();
        let cb = self.layout.branch_capacity();
        let mut sub = self.regions[r].sub.take().unwrap();
        let beta = sub.mem.len() / cl / cb;
        let rest = sub.mem.split_off(beta * cb * cl);
        let mut pages = core::mem::take(&mut sub.mem_pages);
        for id in pages.split_off(beta * cb) {
            self.pool.unpin(id)?;
            self.pool.free_page(id);
        }
        let (tree, parts) = SplitTree::build(core::mem::take(&mut sub.mem), cb, beta, cl)?;
        let mut kids = Vec::with_capacity(cb);
        for (part, own) in parts.into_iter().zip(pages.chunks(beta)) {
            kids.push(self.regions.len());
            self.regions.push(Region {
                sub: Some(Sub::with_pages(part, own.to_vec())?),
                split: None,
            });
        }
        self.regions[r].split = Some((tree, kids));
        self.leaves += cb - 1;
        self.log.splits += 1;
        for p in rest {
            self.push(r, p)?;
        }
        Ok(())
    }

    /// Writes the node of a split region, nested regions first, and
    /// returns its entry and point count.
    fn emit(&mut self, r: usize) -> Result<(Entry, u64)> {
        let cb = self.layout.branch_capacity();
        let limit = self.limit();
        let (tree, kids) = self.regions[r].split.take().unwrap();
        let mut placed: Vec<Option<Entry>> = vec![None; kids.len()];
        let mut refined: Vec<Option<Vec<Entry>>> = vec![None; kids.len()];
        let mut reserve = vec![0usize; kids.len()];
        let mut counts = vec![None; kids.len()];
        let mut points = 0;
        for (i, &k) in kids.iter().enumerate() {
            if self.regions[k].split.is_some() {
                let (e, n) = self.emit(k)?;
                placed[i] = Some(e);
                points += n;
                continue;
            }
            let mut sub = self.regions[k].sub.take().unwrap();
            points += sub.count;
            if sub.active {
                let mut pts = core::mem::take(&mut sub.mem);
                let own = core::mem::take(&mut sub.mem_pages);
                let entries = refine_into(self.pool, &self.layout, &mut self.scratch, &mut pts, &own)?;
                counts[i] = Some(entries.len());
                refined[i] = Some(entries);
                self.log.refined += 1;
                continue;
            }
            let id = self.pending.len() as u64;
            if sub.disk.len() <= limit {
                reserve[i] = predicted_entries(sub.disk.len(), cb);
                counts[i] = Some(reserve[i]);
            }
            placed[i] = Some(Entry::unrefined(sub.mbb.clone(), id, sub.count));
            self.pending.push(Some(Pending {
                pages: sub.disk,
                count: sub.count,
                mbb: sub.mbb,
                slot: None,
                depth: self.depth + 1,
            }));
        }

        for group in merge_branches(&tree, &counts, cb) {
            if group.iter().all(|&i| refined[i].is_none()) {
                continue;
            }
            let slots: Vec<Slot> = group
                .iter()
                .map(|&i| match refined[i].as_ref() {
                    Some(e) => Slot::new(e.clone()),
                    None => Slot::with_reserve(Vec::new(), reserve[i]),
                })
                .collect();
            let page = write_node_page(self.pool, &self.layout, &mut self.scratch, &slots)?;
            for (slot, &i) in group.iter().enumerate() {
                let at = NodeRef::new(page, slot as u16);
                match refined[i].take() {
                    Some(e) => placed[i] = Some(Entry::node(union_of(&e), at, e.len())),
                    None => {
                        let id = placed[i].as_ref().unwrap().page as usize;
                        self.pending[id].as_mut().unwrap().slot = Some(at);
                    }
                }
            }
        }
        let entries: Vec<Entry> = placed.into_iter().map(Option::unwrap).collect();
        let mbb = union_of(&entries);
        let n = entries.len();
        let page = write_node_page(self.pool, &self.layout, &mut self.scratch, &[Slot::new(entries)])?;
        Ok((Entry::node(mbb, NodeRef::new(page, 0), n), points))
    }

    fn direct(&mut self, pages: &[PageId], owned: bool) -> Result<Built> {
        if pages.len() > self.limit() {
            return Err(Error::InsufficientBuffer {
                pages: self.pool.capacity(),
                required: pages.len() + 1,
            });
        }
        let mut points = Vec::new();
        load_pages(self.pool, &self.layout, pages, owned, &mut points)?;
        if points.is_empty() {
            return Err(Error::EmptyPointSet);
        }
        let need = points.len().div_ceil(self.layout.leaf_capacity());
        let out: Vec<PageId> = (0..need).map(|_| alloc_pinned(self.pool)).collect::<Result<_>>()?;
        let entries = generate_entries_with(self.pool, &self.layout, &mut points, &out, &mut self.scratch)?;
        self.log.refined += 1;
        let mbb = union_of(&entries);
        let count = entries.len();
        let page = write_node_page(self.pool, &self.layout, &mut self.scratch, &[Slot::new(entries)])?;
        Ok(Built {
            root: NodeRef::new(page, 0),
            entries: count,
            mbb,
            points: points.len() as u64,
        })
    }
}
