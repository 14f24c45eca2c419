use alloc::format;

use crate::error::{Error, Result};
use crate::geometry::check_dims;

/// Bytes reserved at the start of a data page for the point count.
pub const DATA_HEADER: usize = 4;
/// Bytes reserved at the start of a node page for the slot directory count.
pub const NODE_PAGE_HEADER: usize = 4;
/// Per-node header inside a node page (entry count, reserved entries).
pub const NODE_SLOT_HEADER: usize = 4;
/// Child reference part of a branch entry: page (u32), slot (u16), kind
/// (u8), padding (u8), count (u32).
pub const ENTRY_REF_BYTES: usize = 12;

pub const DEFAULT_PAGE_SIZE: usize = 4096;

/// Byte geometry of data and node pages for one dataset.
///
/// Leaf capacity `C_L` and branch capacity `C_B` are derived from the page
/// size and dimensionality; either can be lowered explicitly, which is how
/// experiments mirror a particular capacity regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PageLayout {
    page_size: usize,
    dims: usize,
    ids: bool,
    leaf_capacity: usize,
    branch_capacity: usize,
}

impl PageLayout {
    pub fn new(page_size: usize, dims: usize, ids: bool) -> Result<Self> {
        check_dims(dims)?;
        if page_size > u32::MAX as usize {
            return Err(Error::InvalidLayout(format!("page size {page_size} too large")));
        }
        let mut layout = Self {
            page_size,
            dims,
            ids,
            leaf_capacity: 0,
            branch_capacity: 0,
        };
        layout.leaf_capacity = layout.derived_leaf_capacity();
        layout.branch_capacity = layout.derived_branch_capacity();
        layout.validate()?;
        Ok(layout)
    }

    /// Overrides the derived capacities. Values larger than what fits in a
    /// page are rejected.
    pub fn with_capacities(mut self, leaf: Option<usize>, branch: Option<usize>) -> Result<Self> {
        if let Some(l) = leaf {
            self.leaf_capacity = l;
        }
        if let Some(b) = branch {
            self.branch_capacity = b;
        }
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if self.leaf_capacity == 0 {
            return Err(Error::InvalidLayout(format!(
                "page size {} holds no {}-d point",
                self.page_size, self.dims
            )));
        }
        if self.leaf_capacity > self.derived_leaf_capacity() {
            return Err(Error::InvalidLayout(format!(
                "leaf capacity {} exceeds the {} points a {}-byte page holds",
                self.leaf_capacity,
                self.derived_leaf_capacity(),
                self.page_size
            )));
        }
        if self.branch_capacity < 2 {
            return Err(Error::InvalidLayout(format!(
                "branch capacity {} below 2 (page size {})",
                self.branch_capacity, self.page_size
            )));
        }
        if self.branch_capacity > self.derived_branch_capacity() {
            return Err(Error::InvalidLayout(format!(
                "branch capacity {} exceeds the {} entries a {}-byte page holds",
                self.branch_capacity,
                self.derived_branch_capacity(),
                self.page_size
            )));
        }
        Ok(())
    }

    pub fn page_size(&self) -> usize {
        self.page_size
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn has_ids(&self) -> bool {
        self.ids
    }

    /// `C_L`: maximum points per data page.
    pub fn leaf_capacity(&self) -> usize {
        self.leaf_capacity
    }

    /// `C_B`: maximum entries per branch node.
    pub fn branch_capacity(&self) -> usize {
        self.branch_capacity
    }

    pub fn point_bytes(&self) -> usize {
        8 * self.dims + if self.ids { 8 } else { 0 }
    }

    pub fn entry_bytes(&self) -> usize {
        16 * self.dims + ENTRY_REF_BYTES
    }

    pub fn derived_leaf_capacity(&self) -> usize {
        self.page_size.saturating_sub(DATA_HEADER) / self.point_bytes()
    }

    /// Every entry also budgets one slot header so that any grouping of
    /// nodes with at most `C_B` entries in total fits one page.
    pub fn derived_branch_capacity(&self) -> usize {
        self.page_size.saturating_sub(NODE_PAGE_HEADER) / (self.entry_bytes() + NODE_SLOT_HEADER)
    }

    /// Pages needed to hold `n` points at full packing.
    pub fn pages_for(&self, n: u64) -> u64 {
        n.div_ceil(self.leaf_capacity as u64)
    }
}
