//! Binary trees of median splits whose leaves are subspaces.
//!
//! The same structure serves as the major tree of a build (fanout `C_B`),
//! the minor trees that split a single subspace, and the global
//! partitioning of a cluster (fanout `m`).

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::geometry::{longest_dimension, mbb_of, Point};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TreeNode {
    /// Points with `coords[dim] <= coord` go left, the rest right.
    Split {
        dim: usize,
        coord: f64,
        left: usize,
        right: usize,
    },
    /// A subspace, numbered left to right from 0.
    Leaf(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitTree {
    nodes: Vec<TreeNode>,
    parents: Vec<Option<usize>>,
    leaves: Vec<usize>,
}

impl SplitTree {
    /// Partitions `points`, which must fill exactly `fanout * quantum` pages
    /// of `leaf_capacity` points, into `fanout` subspaces of `quantum` pages.
    ///
    /// Each step sorts the current points on their longest dimension and
    /// splits after page `floor(f/2) * quantum`, where `f` is the number of
    /// leaves still to be produced on that side. The split coordinate is
    /// that of the last point of the left part.
    ///
    /// Returns the tree and the points of each subspace.
    pub fn build(
        mut points: Vec<Point>,
        fanout: usize,
        quantum: usize,
        leaf_capacity: usize,
    ) -> Result<(SplitTree, Vec<Vec<Point>>)> {
        if fanout == 0 || quantum == 0 || leaf_capacity == 0 {
            return Err(Error::InvalidArgument(
                "split tree needs positive fanout, quantum and leaf capacity".into(),
            ));
        }
        let expected = fanout * quantum;
        if points.len() != expected * leaf_capacity {
            return Err(Error::PageCountMismatch {
                expected,
                found: points.len().div_ceil(leaf_capacity),
            });
        }
        let mut tree = SplitTree {
            nodes: Vec::with_capacity(2 * fanout - 1),
            parents: Vec::with_capacity(2 * fanout - 1),
            leaves: Vec::with_capacity(fanout),
        };
        tree.grow(&mut points, fanout, quantum * leaf_capacity, None);
        let mut parts = Vec::with_capacity(fanout);
        let per_leaf = quantum * leaf_capacity;
        // Leaves are numbered in slice order, so the slice chunks line up.
        while !points.is_empty() {
            let rest = points.split_off(per_leaf);
            parts.push(core::mem::replace(&mut points, rest));
        }
        Ok((tree, parts))
    }

    fn grow(&mut self, points: &mut [Point], f: usize, per_leaf: usize, parent: Option<usize>) -> usize {
        let me = self.nodes.len();
        self.parents.push(parent);
        if f == 1 {
            self.nodes.push(TreeNode::Leaf(self.leaves.len()));
            self.leaves.push(me);
            return me;
        }
        // Placeholder until the children exist.
        self.nodes.push(TreeNode::Leaf(usize::MAX));
        let dim = longest_dimension(&mbb_of(points.iter()).expect("non-empty split input"));
        let cut = (f / 2) * per_leaf;
        points.select_nth_unstable_by(cut - 1, |a, b| a.cmp_on(b, dim));
        let coord = points[cut - 1].coords[dim];
        let (lo, hi) = points.split_at_mut(cut);
        let left = self.grow(lo, f / 2, per_leaf, Some(me));
        let right = self.grow(hi, f - f / 2, per_leaf, Some(me));
        self.nodes[me] = TreeNode::Split {
            dim,
            coord,
            left,
            right,
        };
        me
    }

    /// A tree with no splits and a single subspace.
    pub fn single() -> Self {
        SplitTree {
            nodes: vec![TreeNode::Leaf(0)],
            parents: vec![None],
            leaves: vec![0],
        }
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn node(&self, i: usize) -> TreeNode {
        self.nodes[i]
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.parents[i]
    }

    /// Tree node holding subspace `s`.
    pub fn leaf_node(&self, s: usize) -> usize {
        self.leaves[s]
    }

    pub fn fanout(&self) -> usize {
        self.leaves.len()
    }

    pub fn split_count(&self) -> usize {
        self.nodes.len() - self.leaves.len()
    }

    /// Subspace covering `p`.
    pub fn locate(&self, p: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf(s) => return s,
                TreeNode::Split {
                    dim,
                    coord,
                    left,
                    right,
                } => i = if p[dim] <= coord { left } else { right },
            }
        }
    }

    /// Node indices in post order (children before parents, left first).
    pub fn post_order(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![(0usize, false)];
        while let Some((i, expanded)) = stack.pop() {
            match self.nodes[i] {
                TreeNode::Split { left, right, .. } if !expanded => {
                    stack.push((i, true));
                    stack.push((right, false));
                    stack.push((left, false));
                }
                _ => out.push(i),
            }
        }
        out
    }

    /// `(dim, coord)` of every split in node order.
    pub fn splits(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.nodes.iter().filter_map(|n| match *n {
            TreeNode::Split { dim, coord, .. } => Some((dim, coord)),
            TreeNode::Leaf(_) => None,
        })
    }

    /// Depth of the deepest leaf (0 for a single subspace).
    pub fn depth(&self) -> usize {
        (0..self.nodes.len())
            .filter(|&i| matches!(self.nodes[i], TreeNode::Leaf(_)))
            .map(|mut i| {
                let mut d = 0;
                while let Some(p) = self.parents[i] {
                    i = p;
                    d += 1;
                }
                d
            })
            .max()
            .unwrap_or(0)
    }
}

/// Compares points on one axis with the same total order used for splits.
pub fn axis_order(dim: usize) -> impl Fn(&Point, &Point) -> Ordering {
    move |a, b| a.cmp_on(b, dim)
}
