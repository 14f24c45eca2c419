//! Branch node codec.
//!
//! A node page holds one or more nodes ("slots") back to back:
//!
//! ```text
//! u16 slot count | u16 magic | slot 0 | slot 1 | ...
//! slot: u16 entry count | u16 reserved entries | entries
//! ```
//!
//! A slot occupies room for `max(entries, reserved)` entries, so a node
//! can grow in place up to its reservation.

use alloc::format;
use alloc::vec::Vec;

use super::{
    get_f64, get_u16, get_u32, put_f64, put_u16, put_u32, PageId, PageLayout, NODE_PAGE_HEADER,
    NODE_SLOT_HEADER,
};
use crate::error::{Error, Result};
use crate::geometry::Mbb;

const NODE_MAGIC: u16 = 0x4E42;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChildKind {
    /// A data page holding `count` points.
    Data,
    /// A branch node holding `count` entries.
    Node,
    /// A subspace not yet refined into nodes; `page` is its id in the
    /// adaptive index's subspace table and `count` its point count.
    Unrefined,
}

impl ChildKind {
    fn code(self) -> u8 {
        match self {
            ChildKind::Data => 0,
            ChildKind::Node => 1,
            ChildKind::Unrefined => 2,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(ChildKind::Data),
            1 => Some(ChildKind::Node),
            2 => Some(ChildKind::Unrefined),
            _ => None,
        }
    }
}

/// Location of a node: its page and slot within that page.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeRef {
    pub page: PageId,
    pub slot: u16,
}

impl NodeRef {
    pub fn new(page: PageId, slot: u16) -> Self {
        Self { page, slot }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub mbb: Mbb,
    pub kind: ChildKind,
    pub page: PageId,
    pub slot: u16,
    pub count: u32,
}

impl Entry {
    pub fn data(mbb: Mbb, page: PageId, points: usize) -> Self {
        Self {
            mbb,
            kind: ChildKind::Data,
            page,
            slot: 0,
            count: points as u32,
        }
    }

    pub fn node(mbb: Mbb, at: NodeRef, entries: usize) -> Self {
        Self {
            mbb,
            kind: ChildKind::Node,
            page: at.page,
            slot: at.slot,
            count: entries as u32,
        }
    }

    pub fn unrefined(mbb: Mbb, id: u64, points: u64) -> Self {
        Self {
            mbb,
            kind: ChildKind::Unrefined,
            page: id,
            slot: 0,
            count: points.min(u32::MAX as u64) as u32,
        }
    }

    pub fn node_ref(&self) -> NodeRef {
        NodeRef::new(self.page, self.slot)
    }
}

/// One node as stored in a page slot.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Slot {
    pub entries: Vec<Entry>,
    /// Entry capacity kept free for in-place growth.
    pub reserve: u16,
}

impl Slot {
    pub fn new(entries: Vec<Entry>) -> Self {
        Self { entries, reserve: 0 }
    }

    pub fn with_reserve(entries: Vec<Entry>, reserve: usize) -> Self {
        Self {
            entries,
            reserve: reserve as u16,
        }
    }

    fn room(&self) -> usize {
        self.entries.len().max(self.reserve as usize)
    }
}

/// Total entry room a set of slots needs, counting reservations.
pub fn slots_room(slots: &[Slot]) -> usize {
    slots.iter().map(Slot::room).sum()
}

fn page_bytes(layout: &PageLayout, slots: &[Slot]) -> usize {
    NODE_PAGE_HEADER + slots.iter().map(|s| NODE_SLOT_HEADER + s.room() * layout.entry_bytes()).sum::<usize>()
}

/// Whether a group of slots fits in one page and within `C_B` entries.
pub fn fits(layout: &PageLayout, slots: &[Slot]) -> bool {
    slots_room(slots) <= layout.branch_capacity() && page_bytes(layout, slots) <= layout.page_size()
}

pub fn encode_node_page(layout: &PageLayout, slots: &[Slot], buf: &mut [u8]) -> Result<()> {
    if slots.is_empty() || slots.len() > u16::MAX as usize {
        return Err(Error::InvalidArgument(format!("{} slots in a node page", slots.len())));
    }
    for s in slots {
        if s.entries.len() > layout.branch_capacity() {
            return Err(Error::NodeOverflow {
                entries: s.entries.len(),
            });
        }
    }
    if page_bytes(layout, slots) > layout.page_size() {
        return Err(Error::NodeOverflow {
            entries: slots_room(slots),
        });
    }
    let d = layout.dims();
    put_u16(buf, 0, slots.len() as u16);
    put_u16(buf, 2, NODE_MAGIC);
    let mut at = NODE_PAGE_HEADER;
    for s in slots {
        put_u16(buf, at, s.entries.len() as u16);
        put_u16(buf, at + 2, s.reserve);
        at += NODE_SLOT_HEADER;
        let end = at + s.room() * layout.entry_bytes();
        for e in &s.entries {
            if e.page > u32::MAX as u64 {
                return Err(Error::InvalidArgument(format!("page id {} exceeds 32 bits", e.page)));
            }
            for i in 0..d {
                put_f64(buf, at + 8 * i, e.mbb.lo()[i]);
                put_f64(buf, at + 8 * (d + i), e.mbb.hi()[i]);
            }
            at += 16 * d;
            put_u32(buf, at, e.page as u32);
            put_u16(buf, at + 4, e.slot);
            buf[at + 6] = e.kind.code();
            buf[at + 7] = 0;
            put_u32(buf, at + 8, e.count);
            at += 12;
        }
        buf[at..end].fill(0);
        at = end;
    }
    buf[at..].fill(0);
    Ok(())
}

fn corrupt(page: PageId, reason: alloc::string::String) -> Error {
    Error::Corrupt { page, reason }
}

pub fn decode_node_page(layout: &PageLayout, buf: &[u8], page: PageId) -> Result<Vec<Slot>> {
    let n = get_u16(buf, 0) as usize;
    if get_u16(buf, 2) != NODE_MAGIC || n == 0 {
        return Err(corrupt(page, "not a node page".into()));
    }
    let d = layout.dims();
    let mut slots = Vec::with_capacity(n);
    let mut at = NODE_PAGE_HEADER;
    for _ in 0..n {
        if at + NODE_SLOT_HEADER > buf.len() {
            return Err(corrupt(page, "slot directory overruns page".into()));
        }
        let count = get_u16(buf, at) as usize;
        let reserve = get_u16(buf, at + 2);
        at += NODE_SLOT_HEADER;
        let room = count.max(reserve as usize);
        if at + room * layout.entry_bytes() > buf.len() {
            return Err(corrupt(page, format!("slot of {room} entries overruns page")));
        }
        let end = at + room * layout.entry_bytes();
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let lo = (0..d).map(|i| get_f64(buf, at + 8 * i)).collect();
            let hi = (0..d).map(|i| get_f64(buf, at + 8 * (d + i))).collect();
            let mbb = Mbb::new(lo, hi).map_err(|_| corrupt(page, "invalid entry box".into()))?;
            at += 16 * d;
            let kind = ChildKind::from_code(buf[at + 6])
                .ok_or_else(|| corrupt(page, format!("unknown entry kind {}", buf[at + 6])))?;
            entries.push(Entry {
                mbb,
                kind,
                page: get_u32(buf, at) as u64,
                slot: get_u16(buf, at + 4),
                count: get_u32(buf, at + 8),
            });
            at += 12;
        }
        at = end;
        slots.push(Slot { entries, reserve });
    }
    Ok(slots)
}

/// Decodes the entries of one node.
pub fn decode_node(layout: &PageLayout, buf: &[u8], at: NodeRef) -> Result<Vec<Entry>> {
    let mut slots = decode_node_page(layout, buf, at.page)?;
    let i = at.slot as usize;
    if i >= slots.len() {
        return Err(corrupt(at.page, format!("slot {i} of {}", slots.len())));
    }
    Ok(core::mem::take(&mut slots[i].entries))
}

/// Number of nodes stored in a node page.
pub fn node_page_slots(buf: &[u8]) -> usize {
    get_u16(buf, 0) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn entry(i: usize, kind: ChildKind, d: usize) -> Entry {
        let x = i as f64;
        let lo: Vec<f64> = (0..d).map(|k| x - k as f64).collect();
        let hi: Vec<f64> = (0..d).map(|k| x + k as f64 + 0.5).collect();
        Entry {
            mbb: Mbb::new(lo, hi).unwrap(),
            kind,
            page: 100 + i as u64,
            slot: (i % 3) as u16,
            count: i as u32 * 7,
        }
    }

    #[test]
    fn multi_slot_roundtrip() {
        let layout = PageLayout::new(1024, 3, true).unwrap();
        let cb = layout.branch_capacity();
        let a: Vec<Entry> = (0..3).map(|i| entry(i, ChildKind::Data, 3)).collect();
        let b: Vec<Entry> = (3..5).map(|i| entry(i, ChildKind::Node, 3)).collect();
        let c = vec![entry(9, ChildKind::Unrefined, 3)];
        let slots = vec![Slot::new(a), Slot::with_reserve(b, 4), Slot::new(c)];
        assert_eq!(slots_room(&slots), 8);
        assert!(8 <= cb);
        assert!(fits(&layout, &slots));
        let mut buf = vec![0u8; 1024];
        encode_node_page(&layout, &slots, &mut buf).unwrap();
        assert_eq!(node_page_slots(&buf), 3);
        assert_eq!(decode_node_page(&layout, &buf, 5).unwrap(), slots);
        assert_eq!(
            decode_node(&layout, &buf, NodeRef::new(5, 1)).unwrap(),
            slots[1].entries
        );
    }

    #[test]
    fn full_branch_capacity_fits_in_many_slots() {
        let layout = PageLayout::new(4096, 2, true).unwrap();
        let cb = layout.branch_capacity();
        let slots: Vec<Slot> = (0..cb).map(|i| Slot::new(vec![entry(i, ChildKind::Data, 2)])).collect();
        assert!(fits(&layout, &slots));
        let mut buf = vec![0u8; 4096];
        encode_node_page(&layout, &slots, &mut buf).unwrap();
        assert_eq!(decode_node_page(&layout, &buf, 0).unwrap().len(), cb);
    }

    #[test]
    fn data_page_is_not_a_node() {
        let layout = PageLayout::new(256, 2, false).unwrap();
        let buf = vec![0u8; 256];
        assert!(decode_node_page(&layout, &buf, 3).is_err());
    }
}
