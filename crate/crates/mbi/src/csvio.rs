//! CSV import and export of point sets.
//!
//! A row holds `d` coordinates, optionally followed by an id. Rows without
//! an id get their 0-based data-row number. A first row that does not parse
//! as numbers is taken as a header.

use std::io::{Read, Write};
use std::path::Path;

use mbi_core::storage::PageLayout;
use mbi_core::Point;

use crate::file::{DatasetHeader, DatasetWriter};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IngestReport {
    pub header: DatasetHeader,
    /// Data pages written.
    pub pages: u64,
}

pub fn ingest<R: Read>(input: R, dims: usize, page_size: usize, out: &Path) -> Result<IngestReport, Error> {
    let layout = PageLayout::new(page_size, dims, true)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(input);
    let mut w = DatasetWriter::create(out, layout)?;
    let mut row = 0u64;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Invalid(format!("csv: {e}")))?;
        let line = rec.position().map_or(i as u64 + 1, |p| p.line());
        match parse_row(&rec, dims, row) {
            Ok(p) => {
                w.push(p).map_err(|e| Error::Invalid(format!("line {line}: {e}")))?;
                row += 1;
            }
            Err(_) if i == 0 => continue,
            Err(msg) => return Err(Error::Invalid(format!("line {line}: {msg}"))),
        }
    }
    if row == 0 {
        return Err(Error::Invalid("no data rows".into()));
    }
    let (header, pages) = w.finish()?;
    Ok(IngestReport { header, pages })
}

fn parse_row(rec: &csv::StringRecord, dims: usize, row: u64) -> Result<Point, String> {
    if rec.len() != dims && rec.len() != dims + 1 {
        return Err(format!("expected {dims} or {} fields, found {}", dims + 1, rec.len()));
    }
    let mut coords = Vec::with_capacity(dims);
    for (j, f) in rec.iter().take(dims).enumerate() {
        let v: f64 = f.parse().map_err(|_| format!("field {} ({f:?}) is not a number", j + 1))?;
        if !v.is_finite() {
            return Err(format!("field {} is not finite", j + 1));
        }
        coords.push(v);
    }
    let id = match rec.get(dims) {
        Some(f) => f.parse().map_err(|_| format!("id {f:?} is not an unsigned integer"))?,
        None => row,
    };
    Ok(Point::with_id(coords, id))
}

/// Writes points with a header row `x0,..,x{d-1},id`. Coordinates use the
/// shortest representation that reads back exactly.
pub fn export<W: Write>(out: W, points: &[Point]) -> Result<(), Error> {
    let mut w = csv::Writer::from_writer(out);
    let d = points.first().map_or(0, |p| p.dims());
    let mut head: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
    head.push("id".into());
    w.write_record(&head).map_err(csv_err)?;
    for p in points {
        let mut rec: Vec<String> = p.coords.iter().map(|c| format!("{c:?}")).collect();
        rec.push(p.id.map_or(String::new(), |id| id.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::file::DatasetFile;

    #[test]
    fn three_rows() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("d.mbid");
        let r = ingest("x,y\n1,2\n3,4\n5,6\n".as_bytes(), 2, 4096, &out).unwrap();
        assert_eq!(r.header.len, 3);
        assert_eq!(r.pages, 1);
        let pts = DatasetFile::open(&out).unwrap().read_all().unwrap();
        assert_eq!(pts[2], Point::with_id(vec![5.0, 6.0], 2));
    }

    #[test]
    fn explicit_ids_are_kept() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("d.mbid");
        ingest("1,2,70\n3,4,71\n".as_bytes(), 2, 4096, &out).unwrap();
        let pts = DatasetFile::open(&out).unwrap().read_all().unwrap();
        assert_eq!(pts[1].id, Some(71));
    }

    #[test]
    fn malformed_rows_name_their_line() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("d.mbid");
        let err = ingest("1,2\n3,4\n5,oops\n".as_bytes(), 2, 4096, &out).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        let err = ingest("1,2\n3\n".as_bytes(), 2, 4096, &out).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }
}
