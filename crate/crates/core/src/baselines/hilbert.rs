use crate::geometry::Mbb;

/// Hilbert rank of up to 16 dimensions at up to 16 bits each, most
/// significant word first.
pub type HilbertKey = [u64; 4];

/// Rank of `coords` on the Hilbert curve after quantizing each axis of
/// `extent` to `2^bits` cells.
pub fn hilbert_key(coords: &[f64], extent: &Mbb, bits: u32) -> HilbertKey {
    let mut x = [0u32; 16];
    let top = ((1u64 << bits) - 1) as f64;
    for (i, &c) in coords.iter().enumerate() {
        let (lo, hi) = (extent.lo()[i], extent.hi()[i]);
        let t = if hi > lo { (c - lo) / (hi - lo) } else { 0.0 };
        x[i] = libm::floor(t.clamp(0.0, 1.0) * top) as u32;
    }
    rank(&mut x[..coords.len()], bits)
}

/// Skilling's axes-to-transpose followed by bit interleaving.
pub(crate) fn rank(x: &mut [u32], bits: u32) -> HilbertKey {
    let n = x.len();
    let m = 1u32 << (bits - 1);
    let mut q = m;
    while q > 1 {
        let p = q - 1;
        for i in 0..n {
            if x[i] & q != 0 {
                x[0] ^= p;
            } else {
                let t = (x[0] ^ x[i]) & p;
                x[0] ^= t;
                x[i] ^= t;
            }
        }
        q >>= 1;
    }
    for i in 1..n {
        x[i] ^= x[i - 1];
    }
    let mut t = 0;
    let mut q = m;
    while q > 1 {
        if x[n - 1] & q != 0 {
            t ^= q - 1;
        }
        q >>= 1;
    }
    for v in x.iter_mut() {
        *v ^= t;
    }
    let total = n as u32 * bits;
    let mut key = [0u64; 4];
    let mut pos = 256 - total;
    for b in (0..bits).rev() {
        for v in x.iter() {
            if (v >> b) & 1 == 1 {
                key[(pos / 64) as usize] |= 1 << (63 - pos % 64);
            }
            pos += 1;
        }
    }
    key
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    fn scalar(k: HilbertKey) -> u128 {
        ((k[2] as u128) << 64) | k[3] as u128
    }

    /// Classic recursive quadrant mapping on an `n x n` grid.
    fn xy2d(n: u32, mut x: u32, mut y: u32) -> u128 {
        let mut d = 0u128;
        let mut s = n / 2;
        while s > 0 {
            let rx = (x & s > 0) as u32;
            let ry = (y & s > 0) as u32;
            d += (s as u128) * (s as u128) * ((3 * rx) ^ ry) as u128;
            if ry == 0 {
                if rx == 1 {
                    x = n - 1 - x;
                    y = n - 1 - y;
                }
                core::mem::swap(&mut x, &mut y);
            }
            s /= 2;
        }
        d
    }

    #[test]
    fn order_one_quadrants() {
        let want = [((0, 0), 0), ((0, 1), 1), ((1, 1), 2), ((1, 0), 3)];
        for ((x, y), r) in want {
            assert_eq!(scalar(rank(&mut [x, y], 1)), r, "({x},{y})");
        }
    }

    #[test]
    fn matches_recursive_mapping_on_grid() {
        for bits in 1..=5 {
            let n = 1u32 << bits;
            for x in 0..n {
                for y in 0..n {
                    assert_eq!(scalar(rank(&mut [x, y], bits)), xy2d(n, x, y), "bits={bits} ({x},{y})");
                }
            }
        }
    }

    #[test]
    fn ranks_are_a_unit_step_walk() {
        for (d, bits) in [(3usize, 3u32), (4, 2), (5, 2)] {
            let cells = 1usize << (d as u32 * bits);
            let mut by_rank: Vec<Option<Vec<u32>>> = vec![None; cells];
            for c in 0..cells {
                let coords: Vec<u32> = (0..d).map(|i| ((c >> (i as u32 * bits)) & ((1 << bits) - 1)) as u32).collect();
                let r = scalar(rank(&mut coords.clone(), bits)) as usize;
                assert!(by_rank[r].is_none(), "rank {r} repeated");
                by_rank[r] = Some(coords);
            }
            for w in by_rank.windows(2) {
                let (a, b) = (w[0].as_ref().unwrap(), w[1].as_ref().unwrap());
                let step: u32 = a.iter().zip(b).map(|(p, q)| p.abs_diff(*q)).sum();
                assert_eq!(step, 1);
            }
        }
    }

    #[test]
    fn quantizes_over_extent() {
        let ext = Mbb::new(vec![10.0, 10.0], vec![12.0, 12.0]).unwrap();
        assert_eq!(hilbert_key(&[10.0, 10.0], &ext, 1), rank(&mut [0, 0], 1));
        assert_eq!(hilbert_key(&[12.0, 10.0], &ext, 1), rank(&mut [1, 0], 1));
        assert_eq!(hilbert_key(&[10.0, 12.0], &ext, 1), rank(&mut [0, 1], 1));
    }

    #[test]
    fn sixteen_dims_full_resolution_fit() {
        let ext = Mbb::new(vec![0.0; 16], vec![1.0; 16]).unwrap();
        let k = hilbert_key(&[1.0; 16], &ext, 16);
        assert_ne!(k, [0; 4]);
    }
}
