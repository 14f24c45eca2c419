use mbi_core::ambi::{Ambi, AmbiConfig};
use mbi_core::baselines::{hilbert_bulk_load, str_bulk_load, HilbertConfig};
use mbi_core::distsim::{partition_global, ClusterConfig};
use mbi_core::fmbi::{bulk_load, FmbiConfig};
use mbi_core::inspect::{check_structure, collect_points, index_stats};
use mbi_core::query::{cmp_points, run_query};
use mbi_core::storage::{decode_points, BufferPool, MemDevice, PageLayout};
use mbi_core::{Dataset, Index, KnnQuery, Mbb, Method, Point, Query, WindowQuery};
use proptest::prelude::*;

fn layout(dims: usize) -> PageLayout {
    PageLayout::new(4096, dims, true)
        .unwrap()
        .with_capacities(Some(12), Some(6))
        .unwrap()
}

fn store(points: &[Point], dims: usize) -> (MemDevice, Dataset) {
    let mut dev = MemDevice::new(4096);
    let ds = Dataset::write(&mut dev, layout(dims), points).unwrap();
    (dev, ds)
}

fn oracle(points: &[Point], q: &Query) -> Vec<Point> {
    match q {
        Query::Window(w) => {
            let mut v: Vec<Point> = points.iter().filter(|p| w.rect.contains_point(&p.coords)).cloned().collect();
            v.sort_by(cmp_points);
            v
        }
        Query::Knn(k) => {
            let c = &k.center.coords;
            let mut v = points.to_vec();
            v.sort_by(|a, b| a.dist_sq(c).total_cmp(&b.dist_sq(c)).then_with(|| cmp_points(a, b)));
            v.truncate(k.k);
            v
        }
    }
}

fn sorted(mut v: Vec<Point>) -> Vec<Point> {
    v.sort_by(cmp_points);
    v
}

/// Points on a coarse grid, so duplicates and ties are common.
fn points(dims: usize, max: usize) -> impl Strategy<Value = Vec<Point>> {
    prop::collection::vec(prop::collection::vec(0u8..40, dims), 1..max).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, r)| Point::with_id(r.into_iter().map(|c| c as f64 / 4.0).collect(), i as u64))
            .collect()
    })
}

fn queries(dims: usize) -> impl Strategy<Value = Vec<Query>> {
    let window = (prop::collection::vec(0u8..40, dims), prop::collection::vec(0u8..20, dims)).prop_map(|(lo, ext)| {
        let lo: Vec<f64> = lo.into_iter().map(|c| c as f64 / 4.0).collect();
        let hi = lo.iter().zip(ext).map(|(l, e)| l + e as f64 / 4.0).collect();
        Query::Window(WindowQuery::new(Mbb::new(lo, hi).unwrap()))
    });
    let knn = (prop::collection::vec(0u8..40, dims), 1usize..40).prop_map(|(c, k)| {
        Query::Knn(KnnQuery::new(Point::new(c.into_iter().map(|x| x as f64 / 4.0).collect()), k).unwrap())
    });
    prop::collection::vec(prop_oneof![window, knn], 1..12)
}

fn build(method: Method, pool: &mut BufferPool<MemDevice>, ds: &Dataset, seed: u64) -> Index {
    match method {
        Method::Fmbi => bulk_load(pool, ds, &FmbiConfig { seed, ..Default::default() }).unwrap().0,
        Method::Str => str_bulk_load(pool, ds).unwrap().0,
        Method::Hilbert => hilbert_bulk_load(pool, ds, &HilbertConfig::default()).unwrap().0,
        Method::Ambi => unreachable!(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn static_indexes_hold_every_point_and_answer_exactly(
        seed in any::<u64>(),
        m in 7usize..24,
        (dims, pts, qs) in (2usize..5).prop_flat_map(|d| (Just(d), points(d, 600), queries(d))),
    ) {
        let (dev, ds) = store(&pts, dims);
        for method in [Method::Fmbi, Method::Str, Method::Hilbert] {
            let mut pool = BufferPool::new(dev.clone(), m).unwrap();
            let index = build(method, &mut pool, &ds, seed);
            prop_assert_eq!(sorted(collect_points(&mut pool, &index).unwrap()), sorted(pts.clone()));
            let s = check_structure(&mut pool, &index).unwrap();
            prop_assert_eq!(s.over_capacity, 0);
            prop_assert_eq!(s.loose_boxes, 0);
            prop_assert_eq!(s.count_mismatches, 0);
            if method == Method::Fmbi {
                prop_assert_eq!(s.overlapping_pairs, 0);
            } else {
                prop_assert_eq!(index_stats(&mut pool, &index).unwrap().leaf_count, ds.pages);
            }
            for q in &qs {
                prop_assert_eq!(run_query(&mut pool, &index, q).unwrap().points, oracle(&pts, q));
            }
            prop_assert_eq!(pool.pinned(), 0);
        }
    }

    #[test]
    fn adaptive_answers_match_the_oracle_in_any_order(
        seed in any::<u64>(),
        m in 7usize..24,
        pts in points(2, 800),
        qs in queries(2),
    ) {
        let (dev, ds) = store(&pts, 2);
        let mut pool = BufferPool::new(dev, m).unwrap();
        let mut ambi = Ambi::new(ds, AmbiConfig { seed, ..Default::default() });
        for q in &qs {
            prop_assert_eq!(ambi.query(&mut pool, q).unwrap().result.points, oracle(&pts, q));
        }
        prop_assert_eq!(pool.pinned(), 0);
    }

    #[test]
    fn adaptive_updates_stay_exact(
        seed in any::<u64>(),
        pts in points(2, 500),
        extra in points(2, 200),
        qs in queries(2),
        deletes in prop::collection::vec(any::<prop::sample::Index>(), 0..60),
    ) {
        let (dev, ds) = store(&pts, 2);
        let mut pool = BufferPool::new(dev, 12).unwrap();
        let mut ambi = Ambi::new(ds, AmbiConfig { seed, ..Default::default() });
        ambi.query(&mut pool, &qs[0]).unwrap();
        let mut live = pts.clone();
        for (i, p) in extra.into_iter().enumerate() {
            let p = Point::with_id(p.coords, 1_000_000 + i as u64);
            ambi.insert(&mut pool, p.clone()).unwrap();
            live.push(p);
        }
        for d in deletes {
            if live.is_empty() {
                break;
            }
            let p = live.swap_remove(d.index(live.len()));
            prop_assert!(ambi.delete(&mut pool, &p).unwrap());
        }
        prop_assert_eq!(ambi.len(), live.len() as u64);
        for q in &qs {
            prop_assert_eq!(ambi.query(&mut pool, q).unwrap().result.points, oracle(&live, q));
        }
    }

    #[test]
    fn shards_partition_the_input_and_routing_is_exact(
        servers in 1usize..6,
        seed in any::<u64>(),
        pts in points(2, 1500),
        qs in queries(2),
    ) {
        let (dev, ds) = store(&pts, 2);
        let mut pool = BufferPool::new(dev, 8 * servers).unwrap();
        let cfg = ClusterConfig { servers, server_buffer_pages: 8, seed };
        let Ok(mut cluster) = partition_global(&mut pool, &ds, &cfg) else {
            // too few pages to sample a seed for every server
            return Ok(());
        };
        let mut shards = Vec::new();
        for s in &mut cluster.servers {
            for page in s.shard.page_ids() {
                let buf = s.pool.read(page).unwrap().to_vec();
                let got = decode_points(&s.shard.layout, &buf, page).unwrap();
                prop_assert!(got.iter().all(|p| s.cell.contains_point(&p.coords)));
                shards.extend(got);
            }
        }
        prop_assert_eq!(sorted(shards), sorted(pts.clone()));
        cluster.build_fmbi(&FmbiConfig { seed, ..Default::default() }).unwrap();
        for q in &qs {
            prop_assert_eq!(cluster.route(q).unwrap().result.points, oracle(&pts, q));
        }
    }
}
