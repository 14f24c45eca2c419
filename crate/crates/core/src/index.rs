use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{Mbb, Point};
use crate::storage::node::NodeRef;
use crate::storage::{encode_points, PageDevice, PageId, PageLayout};

/// A finished disk index: a root node reachable through a buffer pool.
///
/// FMBI and the baseline loaders all produce this shape; only the
/// arrangement of nodes differs.
#[derive(Debug, Clone, PartialEq)]
pub struct Index {
    pub layout: PageLayout,
    pub root: NodeRef,
    /// Number of indexed points.
    pub len: u64,
    /// Extent of all indexed points.
    pub mbb: Mbb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Fmbi,
    Ambi,
    Str,
    Hilbert,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Fmbi => "fmbi",
            Method::Ambi => "ambi",
            Method::Str => "str",
            Method::Hilbert => "hilbert",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "fmbi" => Some(Method::Fmbi),
            "ambi" => Some(Method::Ambi),
            "str" => Some(Method::Str),
            "hilbert" => Some(Method::Hilbert),
            _ => None,
        }
    }
}

/// A point set stored as consecutive data pages, all full except possibly
/// the last.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dataset {
    pub layout: PageLayout,
    pub first_page: PageId,
    pub pages: u64,
    pub len: u64,
}

impl Dataset {
    /// A dataset of `len` points packed from page 0.
    pub fn packed(layout: PageLayout, len: u64) -> Self {
        Self {
            layout,
            first_page: 0,
            pages: layout.pages_for(len),
            len,
        }
    }

    /// Appends `points` to the end of `device` as packed data pages.
    pub fn write<D: PageDevice>(device: &mut D, layout: PageLayout, points: &[Point]) -> Result<Self> {
        if device.page_size() != layout.page_size() {
            return Err(Error::InvalidArgument("device and layout page sizes differ".into()));
        }
        if points.is_empty() {
            return Err(Error::EmptyPointSet);
        }
        let first_page = device.page_count();
        let mut buf = vec![0u8; layout.page_size()];
        for chunk in points.chunks(layout.leaf_capacity()) {
            for p in chunk {
                p.validate(layout.dims())?;
            }
            encode_points(&layout, chunk, &mut buf)?;
            let id = device.grow()?;
            device.write_page(id, &buf)?;
        }
        Ok(Self {
            layout,
            first_page,
            pages: device.page_count() - first_page,
            len: points.len() as u64,
        })
    }

    pub fn page_ids(&self) -> Vec<PageId> {
        (self.first_page..self.first_page + self.pages).collect()
    }
}
