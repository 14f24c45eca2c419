//! The `mbi` command-line tool.
//!
//! Every command writes CSV (to `--csv` or stdout) preceded by `#` lines
//! recording the seed and configuration. Exit status is 0 on success, 2 on
//! invalid input and 1 on failures while running.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use mbi_core::ambi::{Ambi, AmbiConfig};
use mbi_core::distsim::{partition_global, ClusterConfig};
use mbi_core::fmbi::FmbiConfig;
use mbi_core::geometry::mbb_of;
use mbi_core::inspect::index_stats;
use mbi_core::storage::{BufferPool, MemDevice, Overlay, PageLayout};
use mbi_core::{Method, Query};

use crate::file::{create_index_device, finish_index, write_dataset, DatasetFile, IndexFile};
use crate::gen::{Distribution, GenConfig, Generator};
use crate::run::{build, replay_adaptive, replay_static, resolve_buffer};
use crate::workload::{generate, read_jsonl, write_jsonl, WorkloadConfig};
use crate::{csvio, Error};

#[derive(Debug, Parser)]
#[command(name = "mbi", version, about = "Disk-based multidimensional point indexes")]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset file.
    Gen(GenArgs),
    /// Load a CSV file into a dataset file.
    Ingest(IngestArgs),
    /// Write a dataset file out as CSV.
    Export(ExportArgs),
    /// Generate a query workload for a dataset.
    Workload(WorkloadArgs),
    /// Bulk load an index file from a dataset.
    Build(BuildArgs),
    /// Replay a workload against an index, or adaptively against a dataset.
    Query(QueryArgs),
    /// Build and query with several methods on one dataset.
    Bench(BenchArgs),
    /// Leaf statistics of an index file.
    Stats(StatsArgs),
    /// Simulate partitioned building and querying over several servers.
    Distsim(DistsimArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Seed for every random choice.
    #[arg(long, env = "MBI_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Where to write the CSV report (stdout when absent).
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BufferArgs {
    /// Buffer size as a percentage of the dataset pages.
    #[arg(long, alias = "buffer-pct-total")]
    pub buffer_pct: Option<f64>,
    /// Buffer size in pages.
    #[arg(long)]
    pub buffer_pages: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value = "uniform")]
    pub dist: String,
    #[arg(long, short = 'n')]
    pub n: u64,
    #[arg(long, short = 'd', default_value_t = 2)]
    pub dims: usize,
    #[arg(long, default_value_t = 4096)]
    pub page_size: usize,
    #[arg(long, default_value_t = 0.5)]
    pub mean: f64,
    #[arg(long, default_value_t = 0.125)]
    pub sigma: f64,
    #[arg(long, default_value_t = 32)]
    pub clusters: usize,
    #[arg(long, default_value_t = 1.2)]
    pub exponent: f64,
    #[arg(long, short = 'o')]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long, short = 'i')]
    pub input: PathBuf,
    #[arg(long, short = 'd')]
    pub dims: usize,
    #[arg(long, default_value_t = 4096)]
    pub page_size: usize,
    #[arg(long, short = 'o')]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// CSV destination (stdout when absent).
    #[arg(long, short = 'o')]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct WorkloadArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub windows: usize,
    #[arg(long, default_value_t = 0)]
    pub knn: usize,
    #[arg(long, value_delimiter = ',', default_value = "16,64,256")]
    pub ks: Vec<usize>,
    /// Volume fraction of the centered box confining the queries; windows
    /// larger than it shrink to fit.
    #[arg(long, default_value_t = 0.1)]
    pub focus: f64,
    #[arg(long, short = 'o')]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, short = 'm', default_value = "fmbi")]
    pub method: String,
    /// Override the derived branch capacity.
    #[arg(long)]
    pub branch_capacity: Option<usize>,
    #[arg(long, short = 'o')]
    pub out: PathBuf,
    #[command(flatten)]
    pub buffer: BufferArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    /// Index file to query.
    #[arg(long, conflicts_with = "adaptive")]
    pub index: Option<PathBuf>,
    /// Refine an adaptive index over `--data` while answering.
    #[arg(long, requires = "data")]
    pub adaptive: bool,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub workload: PathBuf,
    #[command(flatten)]
    pub buffer: BufferArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "fmbi,str,hilbert")]
    pub methods: Vec<String>,
    #[arg(long)]
    pub workload: Option<PathBuf>,
    #[arg(long)]
    pub branch_capacity: Option<usize>,
    #[command(flatten)]
    pub buffer: BufferArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct DistsimArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Number of servers.
    #[arg(long, alias = "m", default_value_t = 4)]
    pub servers: usize,
    /// Total buffer as a percentage of the dataset pages, split evenly
    /// among the servers; the coordinator gets the total.
    #[arg(long, alias = "buffer-pct-total", default_value_t = 5.0)]
    pub buffer_pct: f64,
    #[arg(long)]
    pub workload: Option<PathBuf>,
    /// Serve queries with adaptive per-server indexes instead of building.
    #[arg(long)]
    pub adaptive: bool,
    #[command(flatten)]
    pub common: Common,
}

/// Runs the tool and returns its exit status.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                2
            } else {
                1
            }
        }
    }
}

/// Replaces `--config FILE` with the flags named by the keys of the JSON
/// object in FILE. They are placed right after the subcommand, so flags on
/// the command line take precedence.
fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>, Error> {
    let Some(at) = args.iter().position(|a| a == "--config") else {
        return Ok(args);
    };
    let path = args
        .get(at + 1)
        .ok_or_else(|| Error::Invalid("--config needs a file".into()))?
        .clone();
    let text = std::fs::read_to_string(&path)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Invalid(format!("config {}: {e}", path.to_string_lossy())))?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::Invalid("config must be a JSON object".into()))?;
    let mut flags: Vec<OsString> = Vec::new();
    for (k, v) in obj {
        let flag = format!("--{}", k.replace('_', "-"));
        match v {
            serde_json::Value::Bool(true) => flags.push(flag.into()),
            serde_json::Value::Bool(false) | serde_json::Value::Null => {}
            serde_json::Value::String(s) => {
                flags.push(flag.into());
                flags.push(s.into());
            }
            serde_json::Value::Number(n) => {
                flags.push(flag.into());
                flags.push(n.to_string().into());
            }
            serde_json::Value::Array(items) => {
                let joined: Vec<String> = items
                    .iter()
                    .map(|i| i.as_str().map_or_else(|| i.to_string(), str::to_string))
                    .collect();
                flags.push(flag.into());
                flags.push(joined.join(",").into());
            }
            serde_json::Value::Object(_) => return Err(Error::Invalid(format!("config key {k}: nested objects unsupported"))),
        }
    }
    let mut rest: Vec<OsString> = args[..at].to_vec();
    rest.extend_from_slice(&args[at + 2..]);
    // program name, subcommand, then config flags
    let split = rest.len().min(2);
    let mut out: Vec<OsString> = rest[..split].to_vec();
    out.extend(flags);
    out.extend_from_slice(&rest[split..]);
    Ok(out)
}

pub fn run(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::Gen(a) => gen(a),
        Command::Ingest(a) => ingest(a),
        Command::Export(a) => export(a),
        Command::Workload(a) => workload(a),
        Command::Build(a) => build_cmd(a),
        Command::Query(a) => query(a),
        Command::Bench(a) => bench(a),
        Command::Stats(a) => stats(a),
        Command::Distsim(a) => distsim(a),
    }
}

/// CSV sink with `#` comment lines ahead of the rows.
struct Report {
    out: Box<dyn Write>,
}

impl Report {
    fn open(path: Option<&Path>) -> Result<Self, Error> {
        let out: Box<dyn Write> = match path {
            Some(p) => Box::new(BufWriter::new(File::create(p)?)),
            None => Box::new(BufWriter::new(std::io::stdout())),
        };
        Ok(Self { out })
    }

    fn note(&mut self, text: &str) -> Result<(), Error> {
        writeln!(self.out, "# {text}")?;
        Ok(())
    }

    fn row<S: ToString>(&mut self, fields: &[S]) -> Result<(), Error> {
        let line: Vec<String> = fields.iter().map(ToString::to_string).collect();
        writeln!(self.out, "{}", line.join(","))?;
        Ok(())
    }

    fn finish(mut self) -> Result<(), Error> {
        self.out.flush()?;
        Ok(())
    }
}

fn layout_note(l: &PageLayout) -> String {
    format!(
        "page_size={} d={} C_L={} C_B={}",
        l.page_size(),
        l.dims(),
        l.leaf_capacity(),
        l.branch_capacity()
    )
}

/// Smallest buffer a method can build with when sized by percentage.
fn buffer_floor(method: Method, layout: &PageLayout) -> usize {
    match method {
        Method::Fmbi | Method::Ambi => layout.branch_capacity() + 1,
        Method::Str | Method::Hilbert => 3,
    }
}

fn parse_method(s: &str) -> Result<Method, Error> {
    Method::parse(s).ok_or_else(|| Error::Invalid(format!("unknown method {s:?} (fmbi, ambi, str, hilbert)")))
}

fn gen(a: GenArgs) -> Result<(), Error> {
    let dist: Distribution = a.dist.parse()?;
    let cfg = GenConfig {
        mean: a.mean,
        sigma: a.sigma,
        clusters: a.clusters,
        exponent: a.exponent,
        ..GenConfig::new(dist, a.n, a.dims, a.common.seed)
    };
    let header = write_dataset(&a.out, Generator::new(cfg)?, a.dims, a.page_size)?;
    let layout = header.layout()?;
    let mut r = Report::open(a.common.csv.as_deref())?;
    r.note(&format!(
        "mbi gen dist={} n={} seed={} mean={} sigma={} clusters={} exponent={} {}",
        dist.name(),
        a.n,
        a.common.seed,
        a.mean,
        a.sigma,
        a.clusters,
        a.exponent,
        layout_note(&layout)
    ))?;
    r.row(&["points", "pages"])?;
    r.row(&[header.len, layout.pages_for(header.len)])?;
    r.finish()
}

fn ingest(a: IngestArgs) -> Result<(), Error> {
    let input = BufReader::new(File::open(&a.input)?);
    let rep = csvio::ingest(input, a.dims, a.page_size, &a.out)?;
    let layout = rep.header.layout()?;
    let mut r = Report::open(a.common.csv.as_deref())?;
    r.note(&format!("mbi ingest {}", layout_note(&layout)))?;
    r.row(&["points", "pages_written"])?;
    r.row(&[rep.header.len, rep.pages])?;
    r.finish()
}

fn export(a: ExportArgs) -> Result<(), Error> {
    let pts = DatasetFile::open(&a.data)?.read_all()?;
    match a.out {
        Some(p) => csvio::export(BufWriter::new(File::create(p)?), &pts),
        None => csvio::export(std::io::stdout().lock(), &pts),
    }
}

fn workload(a: WorkloadArgs) -> Result<(), Error> {
    let mut ds = DatasetFile::open(&a.data)?;
    let pts = ds.read_all()?;
    let extent = mbb_of(pts.iter())?;
    let mut cfg = WorkloadConfig {
        ks: a.ks.clone(),
        focus: a.focus,
        ..WorkloadConfig::for_points(ds.header.len, a.windows, a.knn, a.common.seed)
    };
    cfg.max_area = cfg.max_area.min(cfg.focus);
    cfg.min_area = cfg.min_area.min(cfg.max_area);
    let queries = generate(&extent, &cfg)?;
    write_jsonl(BufWriter::new(File::create(&a.out)?), &queries)?;
    let mut r = Report::open(a.common.csv.as_deref())?;
    r.note(&format!(
        "mbi workload seed={} windows={} knn={} ks={:?} focus={} areas={}..{}",
        a.common.seed, a.windows, a.knn, a.ks, a.focus, cfg.min_area, cfg.max_area
    ))?;
    r.row(&["queries"])?;
    r.row(&[queries.len()])?;
    r.finish()
}

fn with_branch(layout: PageLayout, branch: Option<usize>) -> Result<PageLayout, Error> {
    Ok(layout.with_capacities(None, branch)?)
}

fn build_cmd(a: BuildArgs) -> Result<(), Error> {
    let method = parse_method(&a.method)?;
    let ds = DatasetFile::open(&a.data)?;
    let layout = with_branch(ds.layout, a.branch_capacity)?;
    let dataset = mbi_core::Dataset { layout, ..ds.dataset() };
    let m = resolve_buffer(
        dataset.pages,
        a.buffer.buffer_pct,
        a.buffer.buffer_pages,
        buffer_floor(method, &layout),
    )?;
    if method == Method::Ambi {
        return Err(Error::Invalid("ambi is built by queries; use `query --adaptive`".into()));
    }
    let top = create_index_device(&a.out, layout.page_size())?;
    let built = (|| {
        let device = Overlay::new(ds.device, top)?;
        let base_pages = device.base_count();
        let mut pool = BufferPool::new(device, m)?;
        let (index, io) = build(&mut pool, &dataset, method, a.common.seed)?;
        let (_, top) = pool.into_device()?.into_parts();
        finish_index(top, &index, method, base_pages)?;
        Ok::<_, Error>(io)
    })();
    let io = match built {
        Ok(io) => io,
        Err(e) => {
            let _ = std::fs::remove_file(&a.out);
            return Err(e);
        }
    };

    let mut r = Report::open(a.common.csv.as_deref())?;
    r.note(&format!(
        "mbi build method={} seed={} buffer_pages={} n={} {}",
        method.name(),
        a.common.seed,
        m,
        dataset.len,
        layout_note(&layout)
    ))?;
    r.row(&["method", "points", "dataset_pages", "buffer_pages", "build_reads", "build_writes", "build_io"])?;
    r.row(&[
        method.name().to_string(),
        dataset.len.to_string(),
        dataset.pages.to_string(),
        m.to_string(),
        io.reads.to_string(),
        io.writes.to_string(),
        io.total().to_string(),
    ])?;
    r.finish()
}

fn load_workload(path: &Path) -> Result<Vec<Query>, Error> {
    read_jsonl(BufReader::new(File::open(path)?))
}

fn query_row(r: &mut Report, i: usize, q: &Query, c: &crate::run::QueryCost) -> Result<(), Error> {
    let (kind, k) = match q {
        Query::Window(_) => ("window", String::new()),
        Query::Knn(kq) => ("knn", kq.k.to_string()),
    };
    r.row(&[
        i.to_string(),
        kind.to_string(),
        k,
        c.results.to_string(),
        c.io.reads.to_string(),
        c.io.writes.to_string(),
        c.io.total().to_string(),
        c.cumulative.to_string(),
    ])
}

const QUERY_HEADER: [&str; 8] = ["query", "type", "k", "results", "reads", "writes", "io", "cumulative_io"];

fn query(a: QueryArgs) -> Result<(), Error> {
    let queries = load_workload(&a.workload)?;
    let mut r = Report::open(a.common.csv.as_deref())?;
    if a.adaptive {
        let ds = DatasetFile::open(a.data.as_deref().expect("clap requires data"))?;
        let dataset = ds.dataset();
        let m = resolve_buffer(
            dataset.pages,
            a.buffer.buffer_pct,
            a.buffer.buffer_pages,
            buffer_floor(Method::Ambi, &ds.layout),
        )?;
        let mut pool = BufferPool::new(Overlay::new(ds.device, MemDevice::new(ds.layout.page_size()))?, m)?;
        let mut ambi = Ambi::new(
            dataset,
            AmbiConfig {
                seed: a.common.seed,
                ..Default::default()
            },
        );
        let costs = replay_adaptive(&mut pool, &mut ambi, &queries)?;
        r.note(&format!(
            "mbi query method=ambi seed={} buffer_pages={} n={} queries={} {}",
            a.common.seed,
            m,
            dataset.len,
            queries.len(),
            layout_note(&ds.layout)
        ))?;
        r.row(&QUERY_HEADER)?;
        for (i, (q, c)) in queries.iter().zip(&costs).enumerate() {
            query_row(&mut r, i, q, c)?;
        }
    } else {
        let path = a
            .index
            .as_deref()
            .ok_or_else(|| Error::Invalid("give --index, or --adaptive with --data".into()))?;
        let f = IndexFile::open(path)?;
        let pages = f.index.layout.pages_for(f.index.len);
        let m = resolve_buffer(pages, a.buffer.buffer_pct, a.buffer.buffer_pages, 1)?;
        let mut pool = BufferPool::new(f.device, m)?;
        let costs = replay_static(&mut pool, &f.index, &queries, 0)?;
        r.note(&format!(
            "mbi query method={} seed={} buffer_pages={} n={} queries={} {}",
            f.method.name(),
            a.common.seed,
            m,
            f.index.len,
            queries.len(),
            layout_note(&f.index.layout)
        ))?;
        r.row(&QUERY_HEADER)?;
        for (i, (q, c)) in queries.iter().zip(&costs).enumerate() {
            query_row(&mut r, i, q, c)?;
        }
    }
    r.finish()
}

fn bench(a: BenchArgs) -> Result<(), Error> {
    let methods: Vec<Method> = a.methods.iter().map(|m| parse_method(m)).collect::<Result<_, _>>()?;
    let queries = match &a.workload {
        Some(p) => load_workload(p)?,
        None => Vec::new(),
    };
    let probe = DatasetFile::open(&a.data)?;
    let layout = with_branch(probe.layout, a.branch_capacity)?;
    let dataset = mbi_core::Dataset { layout, ..probe.dataset() };
    drop(probe);
    let floor = methods.iter().map(|&m| buffer_floor(m, &layout)).max().unwrap_or(1);
    let m = resolve_buffer(dataset.pages, a.buffer.buffer_pct, a.buffer.buffer_pages, floor)?;

    let mut r = Report::open(a.common.csv.as_deref())?;
    r.note(&format!(
        "mbi bench seed={} buffer_pages={} n={} queries={} {}",
        a.common.seed,
        m,
        dataset.len,
        queries.len(),
        layout_note(&layout)
    ))?;
    r.row(&[
        "method",
        "build_reads",
        "build_writes",
        "build_io",
        "queries",
        "query_io",
        "avg_query_io",
        "total_io",
        "leaf_count",
        "perimeter",
        "area",
    ])?;
    for method in methods {
        let ds = DatasetFile::open(&a.data)?;
        let device = Overlay::new(ds.device, MemDevice::new(layout.page_size()))?;
        let (build_io, query_io, stats) = if method == Method::Ambi {
            let mut pool = BufferPool::new(device, m)?;
            let mut ambi = Ambi::new(
                dataset,
                AmbiConfig {
                    seed: a.common.seed,
                    ..Default::default()
                },
            );
            let costs = replay_adaptive(&mut pool, &mut ambi, &queries)?;
            let q = costs.last().map_or(0, |c| c.cumulative);
            let stats = match ambi.index() {
                Some(ix) => Some(index_stats(&mut pool, &ix)?),
                None => None,
            };
            (Default::default(), q, stats)
        } else {
            let mut pool = BufferPool::new(device, m)?;
            let (index, io) = build(&mut pool, &dataset, method, a.common.seed)?;
            // queries start with a cold buffer
            let mut pool = BufferPool::new(pool.into_device()?, m)?;
            let costs = replay_static(&mut pool, &index, &queries, 0)?;
            let q = costs.last().map_or(0, |c| c.cumulative);
            (io, q, Some(index_stats(&mut pool, &index)?))
        };
        let avg = if queries.is_empty() {
            0.0
        } else {
            query_io as f64 / queries.len() as f64
        };
        let (leaves, perim, area) = stats.map_or((0, 0.0, 0.0), |s| (s.leaf_count, s.perimeter, s.area));
        r.row(&[
            method.name().to_string(),
            build_io.reads.to_string(),
            build_io.writes.to_string(),
            build_io.total().to_string(),
            queries.len().to_string(),
            query_io.to_string(),
            avg.to_string(),
            (build_io.total() + query_io).to_string(),
            leaves.to_string(),
            perim.to_string(),
            area.to_string(),
        ])?;
    }
    r.finish()
}

fn stats(a: StatsArgs) -> Result<(), Error> {
    let f = IndexFile::open(&a.index)?;
    let mut pool = BufferPool::new(f.device, 64)?;
    let s = index_stats(&mut pool, &f.index)?;
    let mut r = Report::open(a.common.csv.as_deref())?;
    r.note(&format!("mbi stats method={} n={} {}", f.method.name(), f.index.len, layout_note(&f.index.layout)))?;
    r.row(&["method", "leaf_count", "perimeter", "area", "height", "node_pages", "points"])?;
    r.row(&[
        f.method.name().to_string(),
        s.leaf_count.to_string(),
        s.perimeter.to_string(),
        s.area.to_string(),
        s.height.to_string(),
        s.node_pages.to_string(),
        s.points.to_string(),
    ])?;
    r.finish()
}

fn distsim(a: DistsimArgs) -> Result<(), Error> {
    let ds = DatasetFile::open(&a.data)?;
    let dataset = ds.dataset();
    if a.servers == 0 {
        return Err(Error::Invalid("need at least one server".into()));
    }
    let floor = buffer_floor(Method::Fmbi, &dataset.layout);
    let total = resolve_buffer(dataset.pages, Some(a.buffer_pct), None, floor * a.servers)?;
    let cfg = ClusterConfig {
        servers: a.servers,
        server_buffer_pages: total / a.servers,
        seed: a.common.seed,
    };
    let queries = match &a.workload {
        Some(p) => load_workload(p)?,
        None => Vec::new(),
    };
    let mut pool = BufferPool::new(ds.device, total)?;
    let mut cluster = partition_global(&mut pool, &dataset, &cfg)?;
    let builds = if a.adaptive {
        cluster.make_adaptive(&AmbiConfig {
            seed: a.common.seed,
            ..Default::default()
        });
        vec![Default::default(); a.servers]
    } else {
        cluster
            .build_fmbi(&FmbiConfig {
                seed: a.common.seed,
                ..Default::default()
            })?
            .per_server
    };
    let mut query_io = vec![0u64; a.servers];
    let mut parallel = 0u64;
    for q in &queries {
        let routed = cluster.route(q)?;
        for (s, c) in &routed.per_server {
            query_io[*s] += c;
        }
        parallel += routed.parallel_cost;
    }

    let mut r = Report::open(a.common.csv.as_deref())?;
    r.note(&format!(
        "mbi distsim servers={} seed={} buffer_pct_total={} coordinator_pages={} server_pages={} adaptive={} queries={} {}",
        a.servers,
        a.common.seed,
        a.buffer_pct,
        total,
        cfg.server_buffer_pages,
        a.adaptive,
        queries.len(),
        layout_note(&dataset.layout)
    ))?;
    r.row(&["server", "shard_points", "shard_pages", "build_reads", "build_writes", "build_io", "query_io"])?;
    r.row(&[
        "central".to_string(),
        dataset.len.to_string(),
        dataset.pages.to_string(),
        cluster.central_io.reads.to_string(),
        cluster.central_io.writes.to_string(),
        cluster.central_io.total().to_string(),
        String::new(),
    ])?;
    for (s, io) in cluster.servers.iter().zip(&builds) {
        r.row(&[
            s.id.to_string(),
            s.shard.len.to_string(),
            s.shard.pages.to_string(),
            io.reads.to_string(),
            io.writes.to_string(),
            io.total().to_string(),
            query_io[s.id].to_string(),
        ])?;
    }
    let max_build = builds.iter().map(|b| b.total()).max().unwrap_or(0);
    let max_shard = cluster.servers.iter().map(|s| s.shard.pages).max().unwrap_or(0);
    r.row(&[
        "max".to_string(),
        String::new(),
        max_shard.to_string(),
        String::new(),
        String::new(),
        max_build.to_string(),
        parallel.to_string(),
    ])?;
    r.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn config_flags_go_before_explicit_ones() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(&cfg, r#"{"m": 8, "buffer_pct_total": 2.5, "seed": 3, "adaptive": true}"#).unwrap();
        let args = os(&["mbi", "distsim", "--config", cfg.to_str().unwrap(), "--data", "x", "--seed", "9"]);
        let out = expand_config(args).unwrap();
        let s: Vec<String> = out.iter().map(|a| a.to_string_lossy().into_owned()).collect();
        assert_eq!(&s[..2], &["mbi", "distsim"]);
        assert_eq!(s.last().unwrap(), "9");
        let cli = Cli::try_parse_from(out).unwrap();
        let Command::Distsim(d) = cli.command else { panic!() };
        assert_eq!((d.servers, d.buffer_pct, d.common.seed, d.adaptive), (8, 2.5, 9, true));
    }

    #[test]
    fn unknown_method_is_a_validation_error() {
        let e = parse_method("rtree").unwrap_err();
        assert!(e.is_validation());
    }
}
