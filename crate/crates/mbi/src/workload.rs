//! Query workloads: generation and the JSON-lines file format.
//!
//! One query per line, either
//! `{"type":"window","lo":[..],"hi":[..]}` or
//! `{"type":"knn","center":[..],"k":16}`.

use std::io::{BufRead, Write};

use mbi_core::{KnnQuery, Mbb, Point, Query, WindowQuery};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadConfig {
    pub windows: usize,
    pub knn: usize,
    /// k values drawn uniformly for k-NN queries.
    pub ks: Vec<usize>,
    /// Window volume range as fractions of the data extent's volume.
    pub min_area: f64,
    pub max_area: f64,
    /// Volume fraction of a centered box that confines every query.
    pub focus: f64,
    pub seed: u64,
}

impl WorkloadConfig {
    /// Windows between `64/N` and `1024/N` of the space, k in {16, 64, 256},
    /// queries anywhere.
    pub fn for_points(n: u64, windows: usize, knn: usize, seed: u64) -> Self {
        Self {
            windows,
            knn,
            ks: vec![16, 64, 256],
            min_area: (64.0 / n as f64).min(1.0),
            max_area: (1024.0 / n as f64).min(1.0),
            focus: 1.0,
            seed,
        }
    }

    fn validate(&self) -> Result<(), Error> {
        if !(self.focus > 0.0 && self.focus <= 1.0) {
            return Err(Error::Invalid(format!("focus {} outside (0, 1]", self.focus)));
        }
        if !(self.min_area > 0.0 && self.min_area <= self.max_area && self.max_area <= self.focus) {
            return Err(Error::Invalid("window areas must satisfy 0 < min <= max <= focus".into()));
        }
        if self.knn > 0 && (self.ks.is_empty() || self.ks.contains(&0)) {
            return Err(Error::Invalid("k-NN queries need k values >= 1".into()));
        }
        Ok(())
    }
}

/// The centered box holding `fraction` of the volume of `extent`.
pub fn focus_box(extent: &Mbb, fraction: f64) -> Mbb {
    let d = extent.dims();
    let scale = fraction.powf(1.0 / d as f64);
    let c = extent.center();
    let lo = (0..d).map(|i| c[i] - extent.extent(i) * scale / 2.0).collect();
    let hi = (0..d).map(|i| c[i] + extent.extent(i) * scale / 2.0).collect();
    Mbb::new(lo, hi).expect("scaled box is valid")
}

/// Windows first, then k-NN queries, all inside the focus box. Windows
/// keep the aspect ratio of `extent`.
pub fn generate(extent: &Mbb, cfg: &WorkloadConfig) -> Result<Vec<Query>, Error> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let focus = focus_box(extent, cfg.focus);
    let d = extent.dims();
    let mut out = Vec::with_capacity(cfg.windows + cfg.knn);
    for _ in 0..cfg.windows {
        let area = rng.random_range(cfg.min_area..=cfg.max_area);
        let scale = area.powf(1.0 / d as f64);
        let mut lo = Vec::with_capacity(d);
        let mut hi = Vec::with_capacity(d);
        for i in 0..d {
            let side = extent.extent(i) * scale;
            let room = (focus.extent(i) - side).max(0.0);
            let l = focus.lo()[i] + rng.random::<f64>() * room;
            lo.push(l);
            hi.push(l + side);
        }
        out.push(Query::Window(WindowQuery::new(Mbb::new(lo, hi)?)));
    }
    for _ in 0..cfg.knn {
        let c: Vec<f64> = (0..d).map(|i| focus.lo()[i] + rng.random::<f64>() * focus.extent(i)).collect();
        let k = cfg.ks[rng.random_range(0..cfg.ks.len())];
        out.push(Query::Knn(KnnQuery::new(Point::new(c), k)?));
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Line {
    Window { lo: Vec<f64>, hi: Vec<f64> },
    Knn { center: Vec<f64>, k: usize },
}

pub fn write_jsonl<W: Write>(mut w: W, queries: &[Query]) -> Result<(), Error> {
    for q in queries {
        let line = match q {
            Query::Window(win) => Line::Window {
                lo: win.rect.lo().to_vec(),
                hi: win.rect.hi().to_vec(),
            },
            Query::Knn(k) => Line::Knn {
                center: k.center.coords.clone(),
                k: k.k,
            },
        };
        serde_json::to_writer(&mut w, &line).map_err(|e| Error::Format(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads queries, skipping blank lines. Errors name the 1-based line.
pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<Query>, Error> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let at = |msg: String| Error::Invalid(format!("workload line {}: {msg}", i + 1));
        let parsed: Line = serde_json::from_str(&line).map_err(|e| at(e.to_string()))?;
        let q = match parsed {
            Line::Window { lo, hi } => Query::Window(WindowQuery::new(Mbb::new(lo, hi).map_err(|e| at(e.to_string()))?)),
            Line::Knn { center, k } => {
                let p = Point::new(center);
                p.validate(p.dims()).map_err(|e| at(e.to_string()))?;
                Query::Knn(KnnQuery::new(p, k).map_err(|e| at(e.to_string()))?)
            }
        };
        out.push(q);
    }
    Ok(out)
}
