//! Points, axis-aligned bounding boxes and the distance/overlap predicates
//! every other module is built on.

use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};

pub const MIN_DIMS: usize = 2;
pub const MAX_DIMS: usize = 16;

/// A d-dimensional data point with an optional record identifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub coords: Vec<f64>,
    pub id: Option<u64>,
}

impl Point {
    pub fn new(coords: Vec<f64>) -> Self {
        Self { coords, id: None }
    }

    pub fn with_id(coords: Vec<f64>, id: u64) -> Self {
        Self {
            coords,
            id: Some(id),
        }
    }

    #[inline]
    pub fn dims(&self) -> usize {
        self.coords.len()
    }

    /// Checks the point against a dataset dimensionality.
    pub fn validate(&self, dims: usize) -> Result<()> {
        check_dims(dims)?;
        if self.coords.len() != dims {
            return Err(Error::DimensionMismatch {
                expected: dims,
                found: self.coords.len(),
            });
        }
        if self.coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(())
    }

    /// Squared Euclidean distance to another point.
    pub fn dist_sq(&self, other: &[f64]) -> f64 {
        self.coords
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    /// Total order used wherever points must be ranked on one axis:
    /// the axis value first, then the remaining coordinates, then the id.
    pub fn cmp_on(&self, other: &Point, dim: usize) -> Ordering {
        self.coords[dim]
            .total_cmp(&other.coords[dim])
            .then_with(|| self.cmp_lex(other))
    }

    /// Lexicographic order over coordinates, then id.
    pub fn cmp_lex(&self, other: &Point) -> Ordering {
        for (a, b) in self.coords.iter().zip(&other.coords) {
            match a.total_cmp(b) {
                Ordering::Equal => continue,
                ord => return ord,
            }
        }
        self.id.cmp(&other.id)
    }
}

pub fn check_dims(dims: usize) -> Result<()> {
    if (MIN_DIMS..=MAX_DIMS).contains(&dims) {
        Ok(())
    } else {
        Err(Error::UnsupportedDimensionality(dims))
    }
}

/// Axis-aligned minimum bounding box with closed bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct Mbb {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Mbb {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                expected: lo.len(),
                found: hi.len(),
            });
        }
        for (axis, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if !l.is_finite() || !h.is_finite() {
                return Err(Error::NonFinite);
            }
            if l > h {
                return Err(Error::InvalidBox { axis });
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn of_point(p: &Point) -> Self {
        Self {
            lo: p.coords.clone(),
            hi: p.coords.clone(),
        }
    }

    #[inline]
    pub fn dims(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    #[inline]
    pub fn extent(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    pub fn expand_point(&mut self, p: &[f64]) {
        for (i, &c) in p.iter().enumerate() {
            if c < self.lo[i] {
                self.lo[i] = c;
            }
            if c > self.hi[i] {
                self.hi[i] = c;
            }
        }
    }

    pub fn expand(&mut self, other: &Mbb) {
        for i in 0..self.lo.len() {
            if other.lo[i] < self.lo[i] {
                self.lo[i] = other.lo[i];
            }
            if other.hi[i] > self.hi[i] {
                self.hi[i] = other.hi[i];
            }
        }
    }

    pub fn union(&self, other: &Mbb) -> Mbb {
        let mut out = self.clone();
        out.expand(other);
        out
    }

    pub fn contains_point(&self, p: &[f64]) -> bool {
        p.iter()
            .enumerate()
            .all(|(i, &c)| self.lo[i] <= c && c <= self.hi[i])
    }

    pub fn contains(&self, other: &Mbb) -> bool {
        (0..self.lo.len()).all(|i| self.lo[i] <= other.lo[i] && other.hi[i] <= self.hi[i])
    }

    /// Closed-box intersection: boxes sharing only a face or corner intersect.
    pub fn intersects(&self, other: &Mbb) -> bool {
        (0..self.lo.len()).all(|i| self.lo[i] <= other.hi[i] && other.lo[i] <= self.hi[i])
    }

    /// True when the open interiors overlap, i.e. the boxes share positive
    /// length on every axis.
    pub fn interiors_overlap(&self, other: &Mbb) -> bool {
        (0..self.lo.len()).all(|i| self.lo[i] < other.hi[i] && other.lo[i] < self.hi[i])
    }

    /// d-dimensional volume.
    pub fn area(&self) -> f64 {
        (0..self.lo.len()).map(|i| self.extent(i)).product()
    }

    /// Sum of extents over all axes.
    pub fn margin(&self) -> f64 {
        (0..self.lo.len()).map(|i| self.extent(i)).sum()
    }

    /// Perimeter in 2-d; for higher dimensionality the sum of extents.
    pub fn perimeter(&self) -> f64 {
        if self.dims() == 2 {
            2.0 * self.margin()
        } else {
            self.margin()
        }
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| l + (h - l) / 2.0)
            .collect()
    }

    /// Squared distance from a point to the nearest point of the box.
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

    /// Squared distance between the closest points of two boxes; zero when
    /// they intersect.
    pub fn box_dist_sq(&self, other: &Mbb) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.lo.len() {
            let d = if other.hi[i] < self.lo[i] {
                self.lo[i] - other.hi[i]
            } else if other.lo[i] > self.hi[i] {
                other.lo[i] - self.hi[i]
            } else {
                0.0
            };
            acc += d * d;
        }
        acc
    }
}

/// Componentwise min/max of a point sequence.
pub fn mbb_of<'a, I>(points: I) -> Result<Mbb>
where
    I: IntoIterator<Item = &'a Point>,
{
    let mut it = points.into_iter();
    let first = it.next().ok_or(Error::EmptyPointSet)?;
    let mut mbb = Mbb::of_point(first);
    for p in it {
        if p.dims() != mbb.dims() {
            return Err(Error::DimensionMismatch {
                expected: mbb.dims(),
                found: p.dims(),
            });
        }
        mbb.expand_point(&p.coords);
    }
    Ok(mbb)
}

/// Axis of largest extent; ties go to the lowest index.
pub fn longest_dimension(mbb: &Mbb) -> usize {
    let mut best = 0;
    let mut best_len = mbb.extent(0);
    for axis in 1..mbb.dims() {
        let len = mbb.extent(axis);
        if len > best_len {
            best = axis;
            best_len = len;
        }
    }
    best
}

/// Euclidean distance from `q` to the nearest point of `mbb`.
pub fn mindist(q: &Point, mbb: &Mbb) -> f64 {
    libm::sqrt(mbb.mindist_sq(&q.coords))
}

pub fn intersects(a: &Mbb, b: &Mbb) -> bool {
    a.intersects(b)
}

/// A rectangular range query with closed bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowQuery {
    pub rect: Mbb,
}

impl WindowQuery {
    pub fn new(rect: Mbb) -> Self {
        Self { rect }
    }
}

/// A k-nearest-neighbour query under Euclidean distance.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnQuery {
    pub center: Point,
    pub k: usize,
}

impl KnnQuery {
    pub fn new(center: Point, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidK);
        }
        Ok(Self { center, k })
    }
}

/// Either query kind, as read from a workload.
#[derive(Debug, Clone, PartialEq)]
pub enum Query {
    Window(WindowQuery),
    Knn(KnnQuery),
}

impl Query {
    pub fn dims(&self) -> usize {
        match self {
            Query::Window(w) => w.rect.dims(),
            Query::Knn(k) => k.center.dims(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn bx(lo: &[f64], hi: &[f64]) -> Mbb {
        Mbb::new(lo.to_vec(), hi.to_vec()).unwrap()
    }

    #[test]
    fn mbb_of_single_point() {
        let m = mbb_of(&[Point::new(vec![1.0, 2.0])]).unwrap();
        assert_eq!(m.lo(), &[1.0, 2.0]);
        assert_eq!(m.hi(), &[1.0, 2.0]);
    }

    #[test]
    fn mbb_of_three_points() {
        let pts = [
            Point::new(vec![0.0, 0.0]),
            Point::new(vec![2.0, 1.0]),
            Point::new(vec![1.0, 3.0]),
        ];
        let m = mbb_of(&pts).unwrap();
        assert_eq!(m.lo(), &[0.0, 0.0]);
        assert_eq!(m.hi(), &[2.0, 3.0]);
    }

    #[test]
    fn mbb_of_empty_is_error() {
        assert_eq!(mbb_of(&[] as &[Point]), Err(Error::EmptyPointSet));
    }

    #[test]
    fn mbb_of_random_matches_fold() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Point> = (0..1000)
            .map(|_| Point::new((0..3).map(|_| rng.random_range(-50.0..50.0)).collect()))
            .collect();
        let m = mbb_of(&pts).unwrap();
        for axis in 0..3 {
            let lo = pts.iter().map(|p| p.coords[axis]).fold(f64::INFINITY, f64::min);
            let hi = pts
                .iter()
                .map(|p| p.coords[axis])
                .fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(m.lo()[axis], lo);
            assert_eq!(m.hi()[axis], hi);
        }
    }

    #[test]
    fn longest_dimension_cases() {
        assert_eq!(longest_dimension(&bx(&[0.0, 0.0], &[10.0, 5.0])), 0);
        assert_eq!(longest_dimension(&bx(&[0.0, 0.0], &[4.0, 4.0])), 0);
        assert_eq!(longest_dimension(&bx(&[0.0, 0.0, 0.0], &[1.0, 7.0, 3.0])), 1);
    }

    #[test]
    fn mindist_cases() {
        let b = bx(&[0.0, 0.0], &[2.0, 2.0]);
        assert_eq!(mindist(&Point::new(vec![1.0, 1.0]), &b), 0.0);
        assert_eq!(mindist(&Point::new(vec![3.0, 0.0]), &b), 1.0);
        assert!((mindist(&Point::new(vec![3.0, 3.0]), &b) - libm::sqrt(2.0)).abs() < 1e-15);
    }

    #[test]
    fn intersects_cases() {
        let a = bx(&[0.0, 0.0], &[1.0, 1.0]);
        assert!(intersects(&a, &bx(&[1.0, 1.0], &[2.0, 2.0])));
        assert!(!intersects(&a, &bx(&[2.0, 2.0], &[3.0, 3.0])));
        assert!(!a.interiors_overlap(&bx(&[1.0, 0.0], &[2.0, 1.0])));
    }

    #[test]
    fn invalid_box_rejected() {
        assert_eq!(
            Mbb::new(vec![0.0, 2.0], vec![1.0, 1.0]),
            Err(Error::InvalidBox { axis: 1 })
        );
    }

    #[test]
    fn point_validation() {
        assert!(Point::new(vec![0.0, 1.0]).validate(2).is_ok());
        assert_eq!(
            Point::new(vec![0.0]).validate(2),
            Err(Error::DimensionMismatch {
                expected: 2,
                found: 1
            })
        );
        assert_eq!(
            Point::new(vec![0.0, f64::NAN]).validate(2),
            Err(Error::NonFinite)
        );
        assert_eq!(
            Point::new(vec![0.0]).validate(1),
            Err(Error::UnsupportedDimensionality(1))
        );
    }

    fn arb_box(d: usize) -> impl Strategy<Value = Mbb> {
        proptest::collection::vec((-100.0f64..100.0, 0.0f64..50.0), d).prop_map(|axes| {
            let lo: Vec<f64> = axes.iter().map(|a| a.0).collect();
            let hi: Vec<f64> = axes.iter().map(|a| a.0 + a.1).collect();
            Mbb::new(lo, hi).unwrap()
        })
    }

    proptest! {
        #[test]
        fn mbb_permutation_invariant(
            pts in proptest::collection::vec(proptest::collection::vec(-1e3f64..1e3, 3), 1..50),
            seed in any::<u64>()
        ) {
            let pts: Vec<Point> = pts.into_iter().map(Point::new).collect();
            let mut shuffled = pts.clone();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
            prop_assert_eq!(mbb_of(&pts).unwrap(), mbb_of(&shuffled).unwrap());
        }

        #[test]
        fn mindist_zero_iff_contained(b in arb_box(3), q in proptest::collection::vec(-200.0f64..200.0, 3)) {
            let p = Point::new(q);
            prop_assert_eq!(mindist(&p, &b) == 0.0, b.contains_point(&p.coords));
        }

        #[test]
        fn mindist_monotone_under_nesting(
            a in arb_box(2),
            grow in proptest::collection::vec(0.0f64..10.0, 4),
            q in proptest::collection::vec(-200.0f64..200.0, 2)
        ) {
            let b = Mbb::new(
                vec![a.lo()[0] - grow[0], a.lo()[1] - grow[1]],
                vec![a.hi()[0] + grow[2], a.hi()[1] + grow[3]],
            ).unwrap();
            let p = Point::new(q);
            prop_assert!(mindist(&p, &b) <= mindist(&p, &a));
        }

        #[test]
        fn intersects_matches_axis_oracle(a in arb_box(3), b in arb_box(3)) {
            let oracle = (0..3).all(|i| !(a.hi()[i] < b.lo()[i] || b.hi()[i] < a.lo()[i]));
            prop_assert_eq!(intersects(&a, &b), oracle);
            prop_assert_eq!(a.box_dist_sq(&b) == 0.0, oracle);
        }
    }
}
