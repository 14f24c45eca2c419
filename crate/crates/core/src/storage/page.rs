use alloc::format;
use alloc::vec::Vec;

use super::{PageId, PageLayout, DATA_HEADER};
use crate::error::{Error, Result};
use crate::geometry::{Mbb, Point};

pub(crate) fn get_u16(buf: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([buf[at], buf[at + 1]])
}

pub(crate) fn get_u32(buf: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(buf[at..at + 4].try_into().unwrap())
}

pub(crate) fn get_u64(buf: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(buf[at..at + 8].try_into().unwrap())
}

pub(crate) fn get_f64(buf: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(buf[at..at + 8].try_into().unwrap())
}

pub(crate) fn put_u16(buf: &mut [u8], at: usize, v: u16) {
    buf[at..at + 2].copy_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u32(buf: &mut [u8], at: usize, v: u32) {
    buf[at..at + 4].copy_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u64(buf: &mut [u8], at: usize, v: u64) {
    buf[at..at + 8].copy_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_f64(buf: &mut [u8], at: usize, v: f64) {
    buf[at..at + 8].copy_from_slice(&v.to_le_bytes());
}

/// Number of points stored in a data page.
pub fn data_page_len(buf: &[u8]) -> usize {
    get_u32(buf, 0) as usize
}

/// Serializes up to `C_L` points into a data page. Missing ids are stored
/// as 0 when the layout carries ids.
pub fn encode_points(layout: &PageLayout, points: &[Point], buf: &mut [u8]) -> Result<()> {
    if points.len() > layout.leaf_capacity() {
        return Err(Error::InvalidArgument(format!(
            "{} points exceed leaf capacity {}",
            points.len(),
            layout.leaf_capacity()
        )));
    }
    let d = layout.dims();
    put_u32(buf, 0, points.len() as u32);
    let mut at = DATA_HEADER;
    for p in points {
        if p.coords.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: p.coords.len(),
            });
        }
        for &c in &p.coords {
            put_f64(buf, at, c);
            at += 8;
        }
        if layout.has_ids() {
            put_u64(buf, at, p.id.unwrap_or(0));
            at += 8;
        }
    }
    buf[at..].fill(0);
    Ok(())
}

/// Deserializes a data page. `page` is only used for error reporting.
pub fn decode_points(layout: &PageLayout, buf: &[u8], page: PageId) -> Result<Vec<Point>> {
    let mut out = Vec::new();
    decode_points_into(layout, buf, page, &mut out)?;
    Ok(out)
}

pub fn decode_points_into(
    layout: &PageLayout,
    buf: &[u8],
    page: PageId,
    out: &mut Vec<Point>,
) -> Result<()> {
    let n = data_page_len(buf);
    if n > layout.derived_leaf_capacity() {
        return Err(Error::Corrupt {
            page,
            reason: format!("point count {n} exceeds page capacity"),
        });
    }
    let d = layout.dims();
    let mut at = DATA_HEADER;
    out.reserve(n);
    for _ in 0..n {
        let coords: Vec<f64> = (0..d).map(|i| get_f64(buf, at + 8 * i)).collect();
        at += 8 * d;
        let id = if layout.has_ids() {
            let id = get_u64(buf, at);
            at += 8;
            Some(id)
        } else {
            None
        };
        out.push(Point { coords, id });
    }
    Ok(())
}

/// MBB of a data page's points without materializing them. `None` for an
/// empty page.
pub fn data_page_mbb(layout: &PageLayout, buf: &[u8]) -> Option<Mbb> {
    let n = data_page_len(buf);
    if n == 0 {
        return None;
    }
    let d = layout.dims();
    let stride = layout.point_bytes();
    let mut lo = alloc::vec![f64::INFINITY; d];
    let mut hi = alloc::vec![f64::NEG_INFINITY; d];
    for k in 0..n {
        let at = DATA_HEADER + k * stride;
        for i in 0..d {
            let c = get_f64(buf, at + 8 * i);
            lo[i] = lo[i].min(c);
            hi[i] = hi[i].max(c);
        }
    }
    Mbb::new(lo, hi).ok()
}
