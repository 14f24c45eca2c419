//! In-process simulation of a cluster: a coordinator partitions the data
//! space among `m` servers with one scan, every server indexes its shard
//! in its own page file and buffer, and queries are routed only to servers
//! whose subspace can contribute.
//!
//! Costs are page-I/O counters, never wall-clock. The parallel cost of a
//! phase is the maximum over the servers taking part.

use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::boxed::Box;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ambi::{Ambi, AmbiConfig};
use crate::error::{Error, Result};
use crate::fmbi::{bulk_load, FmbiConfig};
use crate::geometry::{KnnQuery, Mbb, Point, Query, WindowQuery};
use crate::index::{Dataset, Index};
use crate::query::{cmp_points, run_query, QueryResult};
use crate::splittree::{SplitTree, TreeNode};
use crate::storage::{decode_points_into, encode_points, BufferPool, IoStats, MemDevice, PageDevice, PageId, PageLayout};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClusterConfig {
    /// Number of servers `m`.
    pub servers: usize,
    /// Buffer pages `M_i` of every server.
    pub server_buffer_pages: usize,
    pub seed: u64,
}

/// A server's subspace: a box that may be unbounded on any side.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Cell {
    fn everything(dims: usize) -> Self {
        Self {
            lo: vec![f64::NEG_INFINITY; dims],
            hi: vec![f64::INFINITY; dims],
        }
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn contains_point(&self, p: &[f64]) -> bool {
        p.iter().enumerate().all(|(i, &c)| self.lo[i] <= c && c <= self.hi[i])
    }

    pub fn intersects(&self, m: &Mbb) -> bool {
        (0..self.lo.len()).all(|i| self.lo[i] <= m.hi()[i] && m.lo()[i] <= self.hi[i])
    }

    pub fn mindist_sq(&self, p: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (i, &c) in p.iter().enumerate() {
            let d = if c < self.lo[i] {
                self.lo[i] - c
            } else if c > self.hi[i] {
                c - self.hi[i]
            } else {
                0.0
            };
            acc += d * d;
        }
        acc
    }
}

/// Cells of every subspace of `tree`, in subspace order.
fn cells(tree: &SplitTree, dims: usize) -> Vec<Cell> {
    let mut out = vec![Cell::everything(dims); tree.fanout()];
    let mut stack = vec![(tree.root(), Cell::everything(dims))];
    while let Some((i, cell)) = stack.pop() {
        match tree.node(i) {
            TreeNode::Leaf(s) => out[s] = cell,
            TreeNode::Split {
                dim,
                coord,
                left,
                right,
            } => {
                let mut l = cell.clone();
                l.hi[dim] = l.hi[dim].min(coord);
                let mut r = cell;
                r.lo[dim] = r.lo[dim].max(coord);
                stack.push((left, l));
                stack.push((right, r));
            }
        }
    }
    out
}

#[derive(Debug)]
pub enum LocalIndex {
    Unbuilt,
    Fmbi(Index),
    Ambi(Box<Ambi>),
}

#[derive(Debug)]
pub struct Server {
    pub id: usize,
    pub cell: Cell,
    pub shard: Dataset,
    pub pool: BufferPool<MemDevice>,
    pub index: LocalIndex,
    pub build_io: IoStats,
}

impl Server {
    fn query(&mut self, q: &Query) -> Result<(QueryResult, u64)> {
        match &mut self.index {
            LocalIndex::Unbuilt => Err(Error::InvalidArgument(alloc::format!("server {} has no index", self.id))),
            LocalIndex::Fmbi(ix) => {
                let r = run_query(&mut self.pool, ix, q)?;
                let cost = r.pages_read;
                Ok((r, cost))
            }
            LocalIndex::Ambi(a) => {
                let r = a.query(&mut self.pool, q)?;
                Ok((r.result, r.io.total()))
            }
        }
    }
}

#[derive(Debug)]
pub struct Cluster {
    pub layout: PageLayout,
    pub tree: SplitTree,
    pub servers: Vec<Server>,
    /// Coordinator traffic: the dataset scan plus every shard page sent.
    pub central_io: IoStats,
    /// Sampled pages per subspace.
    pub gamma: usize,
}

/// Per-server build costs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BuildSummary {
    pub per_server: Vec<IoStats>,
    /// The largest per-server total, i.e. the parallel cost.
    pub max: u64,
    pub sum: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Routed {
    pub result: QueryResult,
    pub servers_touched: usize,
    /// Servers contacted in the second k-NN round.
    pub second_round: usize,
    /// `(server, page I/O)` for every contacted server.
    pub per_server: Vec<(usize, u64)>,
    /// Critical-path cost: max over servers for windows, the home server
    /// plus the slowest second-round server for k-NN.
    pub parallel_cost: u64,
}

/// `P_i (1 + ceil(log_{C_B}(P_i / M_i)))`, reads plus writes of a build
/// that scans its input once per partitioning level.
pub fn analytic_cost(pages: u64, buffer: usize, branch_capacity: usize) -> f64 {
    let p = pages as f64;
    let ratio = p / buffer as f64;
    let levels = if ratio <= 1.0 {
        0.0
    } else {
        libm::ceil(libm::log(ratio) / libm::log(branch_capacity as f64))
    };
    p * (1.0 + levels)
}

/// Partitions a dataset among the servers of a new cluster.
///
/// `γ = floor(M / m)` pages per server are sampled (`M` is the capacity of
/// `pool`) and split by a tree of `m - 1` splits; the sampled points seed
/// the shards, and a scan of the remaining pages routes every other point.
pub fn partition_global<D: PageDevice>(
    pool: &mut BufferPool<D>,
    dataset: &Dataset,
    config: &ClusterConfig,
) -> Result<Cluster> {
    partition(pool, dataset, config, None).map(|(c, _)| c)
}

/// Like [`partition_global`], also answering `first` from the scan, as a
/// coordinator does when partitioning is triggered by a query.
pub fn partition_answering<D: PageDevice>(
    pool: &mut BufferPool<D>,
    dataset: &Dataset,
    config: &ClusterConfig,
    first: &Query,
) -> Result<(Cluster, QueryResult)> {
    let (c, r) = partition(pool, dataset, config, Some(first))?;
    Ok((c, r.expect("answer requested")))
}

struct ShardWriter {
    device: MemDevice,
    buf: Vec<Point>,
    len: u64,
}

/// Collects the answer to a query from a stream of points.
enum Scan<'a> {
    Window(&'a Mbb, Vec<Point>),
    Knn(&'a KnnQuery, BinaryHeap<Cand>),
}

impl Scan<'_> {
    fn see(&mut self, p: &Point) {
        match self {
            Scan::Window(rect, out) => {
                if rect.contains_point(&p.coords) {
                    out.push(p.clone());
                }
            }
            Scan::Knn(q, heap) => {
                heap.push(Cand {
                    d: p.dist_sq(&q.center.coords),
                    p: p.clone(),
                });
                if heap.len() > q.k {
                    heap.pop();
                }
            }
        }
    }

    fn finish(self, pages_read: u64) -> QueryResult {
        let (points, truncated) = match self {
            Scan::Window(_, mut out) => {
                out.sort_unstable_by(cmp_points);
                (out, false)
            }
            Scan::Knn(q, heap) => {
                let v: Vec<Point> = heap.into_sorted_vec().into_iter().map(|c| c.p).collect();
                let t = v.len() < q.k;
                (v, t)
            }
        };
        QueryResult {
            points,
            pages_read,
            truncated,
            ..Default::default()
        }
    }
}

struct Cand {
    d: f64,
    p: Point,
}

impl PartialEq for Cand {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Cand {}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d.total_cmp(&other.d).then_with(|| cmp_points(&self.p, &other.p))
    }
}

fn partition<D: PageDevice>(
    pool: &mut BufferPool<D>,
    dataset: &Dataset,
    config: &ClusterConfig,
    first: Option<&Query>,
) -> Result<(Cluster, Option<QueryResult>)> {
    let layout = dataset.layout;
    let m = config.servers;
    if m == 0 {
        return Err(Error::InvalidArgument("a cluster needs at least one server".into()));
    }
    if dataset.len == 0 {
        return Err(Error::EmptyPointSet);
    }
    if let Some(q) = first {
        let dims = match q {
            Query::Window(w) => w.rect.dims(),
            Query::Knn(k) => k.center.dims(),
        };
        if dims != layout.dims() {
            return Err(Error::DimensionMismatch {
                expected: layout.dims(),
                found: dims,
            });
        }
    }
    let cl = layout.leaf_capacity();
    let before = pool.stats();
    let pages = dataset.page_ids();
    let mut scan = first.map(|q| match q {
        Query::Window(w) => Scan::Window(&w.rect, Vec::new()),
        Query::Knn(k) => Scan::Knn(k, BinaryHeap::new()),
    });
    let mut writers: Vec<ShardWriter> = (0..m)
        .map(|_| ShardWriter {
            device: MemDevice::new(layout.page_size()),
            buf: Vec::with_capacity(cl),
            len: 0,
        })
        .collect();
    let mut sent = 0u64;
    let mut page_buf = vec![0u8; layout.page_size()];
    let mut send = |w: &mut ShardWriter, p: Point, sent: &mut u64| -> Result<()> {
        w.buf.push(p);
        w.len += 1;
        if w.buf.len() == cl {
            flush_shard(&layout, w, &mut page_buf)?;
            *sent += 1;
        }
        Ok(())
    };

    let mut sampled = vec![false; pages.len()];
    let (tree, gamma) = if m == 1 {
        (SplitTree::single(), 0)
    } else {
        let full = if dataset.len == pages.len() as u64 * cl as u64 {
            pages.len()
        } else {
            pages.len() - 1
        };
        let gamma = (pool.capacity() / m).min(full / m);
        if gamma == 0 {
            return Err(Error::InvalidArgument(alloc::format!(
                "{full} full pages and a {}-page buffer cannot seed {m} servers",
                pool.capacity()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut picked = rand::seq::index::sample(&mut rng, full, gamma * m).into_vec();
        picked.sort_unstable();
        let mut seeds = Vec::with_capacity(gamma * m * cl);
        for &i in &picked {
            sampled[i] = true;
            decode_points_into(&layout, pool.read(pages[i])?, pages[i], &mut seeds)?;
        }
        if let Some(s) = &mut scan {
            seeds.iter().for_each(|p| s.see(p));
        }
        let (tree, parts) = SplitTree::build(seeds, m, gamma, cl)?;
        for (w, part) in writers.iter_mut().zip(parts) {
            for p in part {
                send(w, p, &mut sent)?;
            }
        }
        (tree, gamma)
    };

    let mut batch = Vec::with_capacity(cl);
    for (i, &id) in pages.iter().enumerate() {
        if sampled[i] {
            continue;
        }
        batch.clear();
        decode_points_into(&layout, pool.read(id)?, id, &mut batch)?;
        for p in batch.drain(..) {
            if let Some(s) = &mut scan {
                s.see(&p);
            }
            let s = tree.locate(&p.coords);
            send(&mut writers[s], p, &mut sent)?;
        }
    }
    for w in &mut writers {
        if !w.buf.is_empty() {
            flush_shard(&layout, w, &mut page_buf)?;
            sent += 1;
        }
    }
    let reads = pool.stats().since(before).reads;
    let cells = cells(&tree, layout.dims());
    let mut servers = Vec::with_capacity(m);
    for (id, (w, cell)) in writers.into_iter().zip(cells).enumerate() {
        let shard = Dataset {
            layout,
            first_page: 0,
            pages: w.device.page_count(),
            len: w.len,
        };
        servers.push(Server {
            id,
            cell,
            shard,
            pool: BufferPool::new(w.device, config.server_buffer_pages.max(1))?,
            index: LocalIndex::Unbuilt,
            build_io: IoStats::default(),
        });
    }
    let cluster = Cluster {
        layout,
        tree,
        servers,
        central_io: IoStats { reads, writes: sent },
        gamma,
    };
    Ok((cluster, scan.map(|s| s.finish(reads))))
}

fn flush_shard(layout: &PageLayout, w: &mut ShardWriter, buf: &mut [u8]) -> Result<()> {
    encode_points(layout, &w.buf, buf)?;
    let id: PageId = w.device.grow()?;
    w.device.write_page(id, buf)?;
    w.buf.clear();
    Ok(())
}

impl Cluster {
    pub fn servers(&self) -> usize {
        self.servers.len()
    }

    pub fn len(&self) -> u64 {
        self.servers.iter().map(|s| s.shard.len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every server bulk loads its shard independently. Server `i` uses
    /// seed `config.seed + i`.
    pub fn build_fmbi(&mut self, config: &FmbiConfig) -> Result<BuildSummary> {
        let mut summary = BuildSummary::default();
        for s in &mut self.servers {
            if s.shard.len == 0 {
                summary.per_server.push(IoStats::default());
                continue;
            }
            let cfg = FmbiConfig {
                seed: config.seed.wrapping_add(s.id as u64),
                ..*config
            };
            let (index, report) = bulk_load(&mut s.pool, &s.shard, &cfg)?;
            s.index = LocalIndex::Fmbi(index);
            s.build_io = report.io;
            summary.per_server.push(report.io);
        }
        summary.max = summary.per_server.iter().map(IoStats::total).max().unwrap_or(0);
        summary.sum = summary.per_server.iter().map(IoStats::total).sum();
        Ok(summary)
    }

    /// Gives every server an adaptive index that refines on the queries it
    /// receives. Nothing is read or written until then.
    pub fn make_adaptive(&mut self, config: &AmbiConfig) {
        for s in &mut self.servers {
            if s.shard.len > 0 {
                let cfg = AmbiConfig {
                    seed: config.seed.wrapping_add(s.id as u64),
                    ..*config
                };
                s.index = LocalIndex::Ambi(Box::new(Ambi::new(s.shard, cfg)));
            }
        }
    }

    pub fn route(&mut self, q: &Query) -> Result<Routed> {
        match q {
            Query::Window(w) => self.route_window(w),
            Query::Knn(k) => self.route_knn(k),
        }
    }

    /// Sends the window to every server whose subspace meets it.
    pub fn route_window(&mut self, w: &WindowQuery) -> Result<Routed> {
        self.check_dims(w.rect.dims())?;
        let q = Query::Window(w.clone());
        let mut out = Routed::default();
        for s in &mut self.servers {
            if s.shard.len == 0 || !s.cell.intersects(&w.rect) {
                continue;
            }
            let (r, cost) = s.query(&q)?;
            absorb(&mut out.result, r);
            out.per_server.push((s.id, cost));
            out.parallel_cost = out.parallel_cost.max(cost);
        }
        out.servers_touched = out.per_server.len();
        out.result.points.sort_unstable_by(cmp_points);
        Ok(out)
    }

    /// Two rounds: the server covering the query point finds `k` candidates,
    /// then every other server whose subspace meets the ball through the
    /// `k`-th candidate is asked for its own `k` nearest.
    pub fn route_knn(&mut self, q: &KnnQuery) -> Result<Routed> {
        self.check_dims(q.center.dims())?;
        let query = Query::Knn(q.clone());
        let c = &q.center.coords;
        let home = self.tree.locate(c);
        let mut out = Routed::default();
        let mut radius_sq = f64::INFINITY;
        let mut first = 0;
        if self.servers[home].shard.len > 0 {
            let (r, cost) = self.servers[home].query(&query)?;
            if r.points.len() == q.k {
                radius_sq = r.points[q.k - 1].dist_sq(c);
            }
            absorb(&mut out.result, r);
            out.per_server.push((home, cost));
            first = cost;
        }
        let mut slowest = 0;
        for s in &mut self.servers {
            if s.id == home || s.shard.len == 0 || s.cell.mindist_sq(c) > radius_sq {
                continue;
            }
            let (r, cost) = s.query(&query)?;
            absorb(&mut out.result, r);
            out.per_server.push((s.id, cost));
            out.second_round += 1;
            slowest = slowest.max(cost);
        }
        out.servers_touched = out.per_server.len();
        out.parallel_cost = first + slowest;
        let res = &mut out.result;
        res.points
            .sort_unstable_by(|a, b| a.dist_sq(c).total_cmp(&b.dist_sq(c)).then_with(|| cmp_points(a, b)));
        res.points.truncate(q.k);
        res.truncated = (res.points.len()) < q.k;
        Ok(out)
    }

    fn check_dims(&self, dims: usize) -> Result<()> {
        if dims != self.layout.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.layout.dims(),
                found: dims,
            });
        }
        Ok(())
    }
}

fn absorb(into: &mut QueryResult, r: QueryResult) {
    into.points.extend(r.points);
    into.pages_read += r.pages_read;
    into.nodes_visited += r.nodes_visited;
    into.leaves_scanned += r.leaves_scanned;
}
