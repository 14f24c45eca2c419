use alloc::vec::Vec;

use crate::splittree::{SplitTree, TreeNode};

/// Groups subspace nodes that share one page.
///
/// `entries[s]` is the entry count of subspace `s`'s node, or `None` for a
/// subspace that is not processed at this point (dense). The tree is
/// walked in post order. A processed subspace is a merge candidate; at a
/// split, a missing side passes the other one up, two candidates whose
/// combined entries fit within `branch_capacity` are merged into one unit,
/// and otherwise the one with fewer entries (the right one on ties) moves
/// up while the other is final.
///
/// Returns the groups in order of their first subspace; every processed
/// subspace appears in exactly one group.
pub fn merge_branches(tree: &SplitTree, entries: &[Option<usize>], branch_capacity: usize) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = (0..entries.len()).map(|s| Vec::from([s])).collect();
    let mut totals: Vec<usize> = entries.iter().map(|e| e.unwrap_or(0)).collect();
    let mut result: Vec<Option<usize>> = alloc::vec![None; tree.post_order().len()];
    for i in tree.post_order() {
        result[i] = match tree.node(i) {
            TreeNode::Leaf(s) => entries[s].map(|_| s),
            TreeNode::Split { left, right, .. } => match (result[left], result[right]) {
                (None, r) => r,
                (l, None) => l,
                (Some(l), Some(r)) => {
                    if totals[l] + totals[r] <= branch_capacity {
                        let moved = core::mem::take(&mut groups[r]);
                        groups[l].extend(moved);
                        totals[l] += totals[r];
                        totals[r] = 0;
                        Some(l)
                    } else if totals[l] < totals[r] {
                        Some(l)
                    } else {
                        Some(r)
                    }
                }
            },
        };
    }
    groups
        .into_iter()
        .enumerate()
        .filter(|(s, g)| !g.is_empty() && entries[*s].is_some())
        .map(|(_, g)| g)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;
    use alloc::vec;
    use proptest::prelude::*;

    fn balanced(f: usize) -> SplitTree {
        let pts = (0..f).map(|i| Point::new(vec![i as f64, 0.0])).collect();
        SplitTree::build(pts, f, 1, 1).unwrap().0
    }

    #[test]
    fn running_example() {
        // n1..n8 with n4, n5 dense; n7 + n8 = 5 entries.
        let t = balanced(8);
        let counts = [Some(8), Some(6), Some(2), None, None, Some(7), Some(3), Some(2)];
        let groups = merge_branches(&t, &counts, 8);
        assert_eq!(groups, vec![vec![0], vec![1, 2], vec![5], vec![6, 7]]);
    }

    #[test]
    fn all_dense_merges_nothing() {
        let t = balanced(4);
        assert!(merge_branches(&t, &[None; 4], 8).is_empty());
    }

    #[test]
    fn chained_merges() {
        let t = balanced(4);
        let groups = merge_branches(&t, &[Some(1), Some(1), Some(1), Some(1)], 8);
        assert_eq!(groups, vec![vec![0, 1, 2, 3]]);
    }

    proptest! {
        #[test]
        fn at_most_one_underflow(
            f in 1usize..40,
            cb in 2usize..30,
            raw in proptest::collection::vec(proptest::option::weighted(0.8, 1usize..100), 40),
        ) {
            let t = balanced(f);
            let counts: Vec<Option<usize>> = raw[..f].iter().map(|c| c.map(|c| 1 + c % cb)).collect();
            let groups = merge_branches(&t, &counts, cb);
            let mut seen: Vec<usize> = groups.concat();
            seen.sort_unstable();
            let processed: Vec<usize> = (0..f).filter(|&s| counts[s].is_some()).collect();
            prop_assert_eq!(seen, processed);
            let sizes: Vec<usize> = groups.iter().map(|g| g.iter().map(|&s| counts[s].unwrap()).sum()).collect();
            prop_assert!(sizes.iter().all(|&n| n <= cb));
            prop_assert!(sizes.iter().filter(|&&n| 2 * n <= cb).count() <= 1);
        }
    }
}
