//! Build and replay helpers shared by the command-line tool and the
//! experiment suites.

use mbi_core::ambi::Ambi;
use mbi_core::baselines::{hilbert_bulk_load, str_bulk_load, HilbertConfig};
use mbi_core::fmbi::{bulk_load, FmbiConfig};
use mbi_core::query::run_query;
use mbi_core::storage::{BufferPool, IoStats, PageDevice};
use mbi_core::{Dataset, Index, Method, Query};

use crate::Error;

/// Buffer size in pages: an explicit count, or a percentage of the dataset
/// pages rounded down and raised to at least `floor` pages (and one).
pub fn resolve_buffer(dataset_pages: u64, pct: Option<f64>, pages: Option<usize>, floor: usize) -> Result<usize, Error> {
    match (pct, pages) {
        (Some(_), Some(_)) => Err(Error::Invalid("give either a buffer percentage or a page count".into())),
        (_, Some(0)) => Err(Error::Invalid("buffer must hold at least one page".into())),
        (_, Some(p)) => Ok(p),
        (Some(pct), None) => {
            if !(pct > 0.0 && pct <= 100.0) {
                return Err(Error::Invalid(format!("buffer percentage {pct} outside (0, 100]")));
            }
            Ok(((dataset_pages as f64 * pct / 100.0).floor() as usize).max(floor).max(1))
        }
        (None, None) => resolve_buffer(dataset_pages, Some(1.0), None, floor),
    }
}

/// Bulk loads with a non-adaptive method. The pool is flushed on return.
pub fn build<D: PageDevice>(
    pool: &mut BufferPool<D>,
    dataset: &Dataset,
    method: Method,
    seed: u64,
) -> Result<(Index, IoStats), Error> {
    let (index, io) = match method {
        Method::Fmbi => {
            let cfg = FmbiConfig {
                seed,
                ..Default::default()
            };
            let (i, r) = bulk_load(pool, dataset, &cfg)?;
            (i, r.io)
        }
        Method::Str => {
            let (i, r) = str_bulk_load(pool, dataset)?;
            (i, r.io)
        }
        Method::Hilbert => {
            let (i, r) = hilbert_bulk_load(pool, dataset, &HilbertConfig::default())?;
            (i, r.io)
        }
        Method::Ambi => {
            return Err(Error::Invalid(
                "ambi has no separate build; it is built by the queries it answers".into(),
            ))
        }
    };
    Ok((index, io))
}

/// Cost of one query in a replay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryCost {
    pub results: usize,
    /// All page traffic of the query, refinement writes included.
    pub io: IoStats,
    /// Running total over the replay, including any cost passed in as the
    /// starting point.
    pub cumulative: u64,
}

pub fn replay_static<D: PageDevice>(
    pool: &mut BufferPool<D>,
    index: &Index,
    queries: &[Query],
    start: u64,
) -> Result<Vec<QueryCost>, Error> {
    let mut acc = start;
    let mut out = Vec::with_capacity(queries.len());
    for q in queries {
        let before = pool.stats();
        let r = run_query(pool, index, q)?;
        let io = pool.stats().since(before);
        acc += io.total();
        out.push(QueryCost {
            results: r.points.len(),
            io,
            cumulative: acc,
        });
    }
    Ok(out)
}

pub fn replay_adaptive<D: PageDevice>(
    pool: &mut BufferPool<D>,
    ambi: &mut Ambi,
    queries: &[Query],
) -> Result<Vec<QueryCost>, Error> {
    let mut acc = 0;
    let mut out = Vec::with_capacity(queries.len());
    for q in queries {
        let r = ambi.query(pool, q)?;
        acc += r.io.total();
        out.push(QueryCost {
            results: r.result.points.len(),
            io: r.io,
            cumulative: acc,
        });
    }
    Ok(out)
}
