use mbi::csvio;
use mbi::file::{write_dataset, DatasetFile, DATASET_HEADER};
use mbi::workload::{read_jsonl, write_jsonl};
use mbi_core::{KnnQuery, Mbb, Point, Query, WindowQuery};
use proptest::prelude::*;

fn coord() -> impl Strategy<Value = f64> {
    prop_oneof![-1e9..1e9f64, -1.0..1.0f64, Just(0.0), Just(-0.0), Just(f64::MIN_POSITIVE)]
}

fn point_sets() -> impl Strategy<Value = (usize, Vec<Point>)> {
    (2usize..6).prop_flat_map(|d| {
        let pts = prop::collection::vec((prop::collection::vec(coord(), d), any::<u64>()), 1..400)
            .prop_map(|rows| rows.into_iter().map(|(c, id)| Point::with_id(c, id)).collect());
        (Just(d), pts)
    })
}

fn query() -> impl Strategy<Value = Query> {
    (2usize..5).prop_flat_map(|d| {
        let window = (prop::collection::vec(coord(), d), prop::collection::vec(0.0..1e3f64, d)).prop_map(|(lo, ext)| {
            let hi = lo.iter().zip(&ext).map(|(l, e)| l + e).collect();
            Query::Window(WindowQuery::new(Mbb::new(lo, hi).unwrap()))
        });
        let knn = (prop::collection::vec(coord(), d), 1usize..1000)
            .prop_map(|(c, k)| Query::Knn(KnnQuery::new(Point::new(c), k).unwrap()));
        prop_oneof![window, knn]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dataset_files_round_trip((d, pts) in point_sets(), page in prop::sample::select(vec![512usize, 1024, 4096])) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.mbid");
        let header = write_dataset(&path, pts.clone(), d, page).unwrap();
        let layout = header.layout().unwrap();
        let pages = layout.pages_for(pts.len() as u64);
        prop_assert_eq!(std::fs::metadata(&path).unwrap().len(), DATASET_HEADER + pages * page as u64);
        let mut f = DatasetFile::open(&path).unwrap();
        prop_assert_eq!(f.dataset().pages, pages);
        prop_assert_eq!(f.read_all().unwrap(), pts);
    }

    #[test]
    fn csv_export_then_ingest_is_lossless((d, pts) in point_sets()) {
        let dir = tempfile::tempdir().unwrap();
        let mut csv = Vec::new();
        csvio::export(&mut csv, &pts).unwrap();
        let out = dir.path().join("d.mbid");
        let report = csvio::ingest(&csv[..], d, 4096, &out).unwrap();
        prop_assert_eq!(report.header.len, pts.len() as u64);
        prop_assert_eq!(DatasetFile::open(&out).unwrap().read_all().unwrap(), pts);
    }

    #[test]
    fn workloads_round_trip(qs in prop::collection::vec(query(), 0..50)) {
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &qs).unwrap();
        prop_assert_eq!(read_jsonl(&buf[..]).unwrap(), qs);
    }
}
