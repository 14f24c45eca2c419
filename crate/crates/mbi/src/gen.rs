//! Seeded synthetic point sets.

use std::str::FromStr;

use mbi_core::Point;
use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};

use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Distribution {
    /// Independent uniform coordinates in `[0, 1)`.
    Uniform,
    /// Independent normal coordinates around `mean` with deviation `sigma`.
    Gaussian,
    /// A mixture of small normal clusters with power-law sizes.
    Skewed,
}

impl Distribution {
    pub fn name(self) -> &'static str {
        match self {
            Distribution::Uniform => "uniform",
            Distribution::Gaussian => "gaussian",
            Distribution::Skewed => "skewed",
        }
    }
}

impl FromStr for Distribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "uniform" => Ok(Distribution::Uniform),
            "gaussian" => Ok(Distribution::Gaussian),
            "skewed" => Ok(Distribution::Skewed),
            other => Err(Error::Invalid(format!("unknown distribution {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub dist: Distribution,
    pub n: u64,
    pub dims: usize,
    pub seed: u64,
    pub mean: f64,
    pub sigma: f64,
    /// Cluster count of the skewed mixture.
    pub clusters: usize,
    /// Cluster `i` (from 0) gets weight `(i + 1)^-exponent`.
    pub exponent: f64,
}

impl GenConfig {
    pub fn new(dist: Distribution, n: u64, dims: usize, seed: u64) -> Self {
        Self {
            dist,
            n,
            dims,
            seed,
            mean: 0.5,
            sigma: 0.125,
            clusters: 32,
            exponent: 1.2,
        }
    }

    fn validate(&self) -> Result<(), Error> {
        if self.n == 0 {
            return Err(Error::Invalid("N must be at least 1".into()));
        }
        if !(2..=16).contains(&self.dims) {
            return Err(Error::Invalid(format!("d = {} outside 2..=16", self.dims)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite() && self.mean.is_finite()) {
            return Err(Error::Invalid("gaussian mean must be finite and sigma positive".into()));
        }
        if self.clusters == 0 || !self.exponent.is_finite() {
            return Err(Error::Invalid("skewed mixture needs clusters >= 1 and a finite exponent".into()));
        }
        Ok(())
    }
}

/// Center and per-coordinate noise of one skewed-mixture cluster.
type Cluster = (Vec<f64>, Normal<f64>);

/// Points `0..n` of a configured distribution, ids equal to their index.
pub struct Generator {
    cfg: GenConfig,
    rng: ChaCha8Rng,
    next: u64,
    normal: Normal<f64>,
    mixture: Option<(WeightedIndex<f64>, Vec<Cluster>)>,
}

impl Generator {
    pub fn new(cfg: GenConfig) -> Result<Self, Error> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let normal = Normal::new(cfg.mean, cfg.sigma).expect("validated sigma");
        let mixture = if cfg.dist == Distribution::Skewed {
            let weights: Vec<f64> = (0..cfg.clusters).map(|i| ((i + 1) as f64).powf(-cfg.exponent)).collect();
            let clusters = (0..cfg.clusters)
                .map(|_| {
                    let center: Vec<f64> = (0..cfg.dims).map(|_| rng.random_range(0.1..0.9)).collect();
                    let spread = rng.random_range(0.005..0.03);
                    (center, Normal::new(0.0, spread).expect("positive spread"))
                })
                .collect();
            Some((WeightedIndex::new(weights).expect("positive weights"), clusters))
        } else {
            None
        };
        Ok(Self {
            cfg,
            rng,
            next: 0,
            normal,
            mixture,
        })
    }
}

impl Iterator for Generator {
    type Item = Point;

    fn next(&mut self) -> Option<Point> {
        if self.next == self.cfg.n {
            return None;
        }
        let d = self.cfg.dims;
        let coords: Vec<f64> = match self.cfg.dist {
            Distribution::Uniform => (0..d).map(|_| self.rng.random::<f64>()).collect(),
            Distribution::Gaussian => (0..d).map(|_| self.normal.sample(&mut self.rng)).collect(),
            Distribution::Skewed => {
                let (pick, clusters) = self.mixture.as_ref().expect("mixture");
                let (center, n) = &clusters[pick.sample(&mut self.rng)];
                center.iter().map(|c| c + n.sample(&mut self.rng)).collect()
            }
        };
        let p = Point::with_id(coords, self.next);
        self.next += 1;
        Some(p)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.cfg.n - self.next) as usize;
        (left, Some(left))
    }
}

pub fn generate(cfg: &GenConfig) -> Result<Vec<Point>, Error> {
    Ok(Generator::new(cfg.clone())?.collect())
}
