//! On-disk dataset (`MBID`) and index (`MBIX`) files.
//!
//! A dataset file is a 28-byte header followed by packed data pages. An
//! index file is a 48-byte header, the pages a build created, and a trailer
//! naming the root. All integers are little-endian.

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::Path;

use mbi_core::storage::{encode_points, Absent, Overlay, PageDevice, PageId, PageLayout};
use mbi_core::storage::node::NodeRef;
use mbi_core::{Dataset, Index, Mbb, Method, Point};

use crate::Error;

pub const DATASET_MAGIC: &[u8; 4] = b"MBID";
pub const INDEX_MAGIC: &[u8; 4] = b"MBIX";
const TRAILER_MAGIC: &[u8; 4] = b"MBIT";
pub const VERSION: u32 = 1;
pub const DATASET_HEADER: u64 = 28;
pub const INDEX_HEADER: u64 = 48;
const FLAG_IDS: u32 = 1;

fn io(e: std::io::Error) -> mbi_core::Error {
    mbi_core::Error::Io(e.to_string())
}

/// Pages of a region of a file, starting `offset` bytes in.
#[derive(Debug)]
pub struct FileDevice {
    file: File,
    offset: u64,
    page_size: usize,
    count: u64,
}

impl FileDevice {
    pub fn new(file: File, offset: u64, page_size: usize, count: u64) -> Self {
        Self {
            file,
            offset,
            page_size,
            count,
        }
    }

    pub fn into_file(self) -> File {
        self.file
    }

    fn seek(&mut self, id: PageId) -> mbi_core::Result<()> {
        if id >= self.count {
            return Err(mbi_core::Error::PageOutOfRange {
                page: id,
                count: self.count,
            });
        }
        self.file
            .seek(SeekFrom::Start(self.offset + id * self.page_size as u64))
            .map_err(io)?;
        Ok(())
    }
}

impl PageDevice for FileDevice {
    fn page_size(&self) -> usize {
        self.page_size
    }

    fn page_count(&self) -> u64 {
        self.count
    }

    fn read_page(&mut self, id: PageId, buf: &mut [u8]) -> mbi_core::Result<()> {
        self.seek(id)?;
        self.file.read_exact(buf).map_err(io)
    }

    fn write_page(&mut self, id: PageId, buf: &[u8]) -> mbi_core::Result<()> {
        self.seek(id)?;
        self.file.write_all(buf).map_err(io)
    }

    fn grow(&mut self) -> mbi_core::Result<PageId> {
        let id = self.count;
        self.count += 1;
        self.file
            .set_len(self.offset + self.count * self.page_size as u64)
            .map_err(io)?;
        Ok(id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetHeader {
    pub dims: usize,
    pub len: u64,
    pub page_size: usize,
    pub ids: bool,
}

impl DatasetHeader {
    pub fn layout(&self) -> Result<PageLayout, Error> {
        Ok(PageLayout::new(self.page_size, self.dims, self.ids)?)
    }

    fn encode(&self) -> [u8; DATASET_HEADER as usize] {
        let mut b = [0u8; DATASET_HEADER as usize];
        b[0..4].copy_from_slice(DATASET_MAGIC);
        b[4..8].copy_from_slice(&VERSION.to_le_bytes());
        b[8..12].copy_from_slice(&(self.dims as u32).to_le_bytes());
        b[12..20].copy_from_slice(&self.len.to_le_bytes());
        b[20..24].copy_from_slice(&(self.page_size as u32).to_le_bytes());
        let flags = if self.ids { FLAG_IDS } else { 0 };
        b[24..28].copy_from_slice(&flags.to_le_bytes());
        b
    }

    fn decode(b: &[u8]) -> Result<Self, Error> {
        if &b[0..4] != DATASET_MAGIC {
            return Err(Error::Format("not a dataset file (bad magic)".into()));
        }
        let version = u32_at(b, 4);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        Ok(Self {
            dims: u32_at(b, 8) as usize,
            len: u64_at(b, 12),
            page_size: u32_at(b, 20) as usize,
            ids: u32_at(b, 24) & FLAG_IDS != 0,
        })
    }
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}

/// Streams points into a new dataset file.
pub struct DatasetWriter {
    file: std::io::BufWriter<File>,
    layout: PageLayout,
    buf: Vec<Point>,
    page: Vec<u8>,
    len: u64,
    pages: u64,
}

impl DatasetWriter {
    pub fn create(path: &Path, layout: PageLayout) -> Result<Self, Error> {
        let file = File::create(path)?;
        let mut w = Self {
            file: std::io::BufWriter::new(file),
            buf: Vec::with_capacity(layout.leaf_capacity()),
            page: vec![0u8; layout.page_size()],
            layout,
            len: 0,
            pages: 0,
        };
        w.file.write_all(&w.header().encode())?;
        Ok(w)
    }

    fn header(&self) -> DatasetHeader {
        DatasetHeader {
            dims: self.layout.dims(),
            len: self.len,
            page_size: self.layout.page_size(),
            ids: self.layout.has_ids(),
        }
    }

    pub fn push(&mut self, p: Point) -> Result<(), Error> {
        p.validate(self.layout.dims())?;
        self.buf.push(p);
        self.len += 1;
        if self.buf.len() == self.layout.leaf_capacity() {
            self.flush_page()?;
        }
        Ok(())
    }

    fn flush_page(&mut self) -> Result<(), Error> {
        encode_points(&self.layout, &self.buf, &mut self.page)?;
        self.file.write_all(&self.page)?;
        self.buf.clear();
        self.pages += 1;
        Ok(())
    }

    /// Writes the last partial page and the final header. Returns the
    /// header and the number of pages written.
    pub fn finish(mut self) -> Result<(DatasetHeader, u64), Error> {
        if !self.buf.is_empty() {
            self.flush_page()?;
        }
        if self.len == 0 {
            return Err(mbi_core::Error::EmptyPointSet.into());
        }
        let header = self.header();
        let mut file = self.file.into_inner().map_err(|e| e.into_error())?;
        file.seek(SeekFrom::Start(0))?;
        file.write_all(&header.encode())?;
        file.sync_all()?;
        Ok((header, self.pages))
    }
}

/// Writes `points` as a dataset file with ids and the derived capacities.
pub fn write_dataset(path: &Path, points: impl IntoIterator<Item = Point>, dims: usize, page_size: usize) -> Result<DatasetHeader, Error> {
    let layout = PageLayout::new(page_size, dims, true)?;
    let mut w = DatasetWriter::create(path, layout)?;
    for p in points {
        w.push(p)?;
    }
    Ok(w.finish()?.0)
}

/// An opened dataset file.
#[derive(Debug)]
pub struct DatasetFile {
    pub header: DatasetHeader,
    pub layout: PageLayout,
    pub device: FileDevice,
}

impl DatasetFile {
    pub fn open(path: &Path) -> Result<Self, Error> {
        let mut file = File::open(path)?;
        let mut b = [0u8; DATASET_HEADER as usize];
        file.read_exact(&mut b)
            .map_err(|_| Error::Format("file too short for a dataset header".into()))?;
        let header = DatasetHeader::decode(&b)?;
        let layout = header.layout()?;
        let pages = layout.pages_for(header.len);
        let need = DATASET_HEADER + pages * layout.page_size() as u64;
        let have = file.metadata()?.len();
        if have < need {
            return Err(Error::Format(format!("dataset file holds {have} bytes, header implies {need}")));
        }
        Ok(Self {
            header,
            layout,
            device: FileDevice::new(file, DATASET_HEADER, layout.page_size(), pages),
        })
    }

    pub fn dataset(&self) -> Dataset {
        Dataset::packed(self.layout, self.header.len)
    }

    /// Every point in file order.
    pub fn read_all(&mut self) -> Result<Vec<Point>, Error> {
        let mut out = Vec::with_capacity(self.header.len as usize);
        let mut page = vec![0u8; self.layout.page_size()];
        for id in 0..self.device.page_count() {
            self.device.read_page(id, &mut page)?;
            mbi_core::storage::decode_points_into(&self.layout, &page, id, &mut out)?;
        }
        Ok(out)
    }
}

pub fn method_code(m: Method) -> u32 {
    match m {
        Method::Fmbi => 0,
        Method::Ambi => 1,
        Method::Str => 2,
        Method::Hilbert => 3,
    }
}

fn method_from(code: u32) -> Result<Method, Error> {
    Ok(match code {
        0 => Method::Fmbi,
        1 => Method::Ambi,
        2 => Method::Str,
        3 => Method::Hilbert,
        c => return Err(Error::Format(format!("unknown method code {c}"))),
    })
}

/// Opens a fresh index file whose pages will follow `base_pages` dataset
/// pages in one address space.
pub fn create_index_device(path: &Path, page_size: usize) -> Result<FileDevice, Error> {
    let mut file = OpenOptions::new()
        .read(true)
        .write(true)
        .create(true)
        .truncate(true)
        .open(path)?;
    file.write_all(&[0u8; INDEX_HEADER as usize])?;
    Ok(FileDevice::new(file, INDEX_HEADER, page_size, 0))
}

/// Completes an index file: writes the header and the trailer.
pub fn finish_index(device: FileDevice, index: &Index, method: Method, base_pages: u64) -> Result<(), Error> {
    let pages = device.page_count();
    let page_size = device.page_size();
    let mut file = device.into_file();
    let l = &index.layout;
    let mut h = Vec::with_capacity(INDEX_HEADER as usize);
    h.extend_from_slice(INDEX_MAGIC);
    h.extend_from_slice(&VERSION.to_le_bytes());
    h.extend_from_slice(&(l.dims() as u32).to_le_bytes());
    h.extend_from_slice(&index.len.to_le_bytes());
    h.extend_from_slice(&(page_size as u32).to_le_bytes());
    h.extend_from_slice(&(if l.has_ids() { FLAG_IDS } else { 0 }).to_le_bytes());
    h.extend_from_slice(&(l.leaf_capacity() as u32).to_le_bytes());
    h.extend_from_slice(&(l.branch_capacity() as u32).to_le_bytes());
    h.extend_from_slice(&method_code(method).to_le_bytes());
    h.extend_from_slice(&base_pages.to_le_bytes());
    debug_assert_eq!(h.len() as u64, INDEX_HEADER);
    file.seek(SeekFrom::Start(0))?;
    file.write_all(&h)?;

    let mut t = Vec::new();
    t.extend_from_slice(&index.root.page.to_le_bytes());
    t.extend_from_slice(&(index.root.slot as u32).to_le_bytes());
    t.extend_from_slice(&pages.to_le_bytes());
    for v in index.mbb.lo().iter().chain(index.mbb.hi()) {
        t.extend_from_slice(&v.to_le_bytes());
    }
    t.extend_from_slice(TRAILER_MAGIC);
    file.seek(SeekFrom::Start(INDEX_HEADER + pages * page_size as u64))?;
    file.write_all(&t)?;
    file.set_len(INDEX_HEADER + pages * page_size as u64 + t.len() as u64)?;
    file.sync_all()?;
    Ok(())
}

/// An opened index file. Its pages are addressed above a detached range
/// standing in for the dataset it was built from.
#[derive(Debug)]
pub struct IndexFile {
    pub index: Index,
    pub method: Method,
    pub base_pages: u64,
    pub device: Overlay<Absent, FileDevice>,
}

impl IndexFile {
    pub fn open(path: &Path) -> Result<Self, Error> {
        let mut file = File::open(path)?;
        let mut h = [0u8; INDEX_HEADER as usize];
        file.read_exact(&mut h)
            .map_err(|_| Error::Format("file too short for an index header".into()))?;
        if &h[0..4] != INDEX_MAGIC {
            return Err(Error::Format("not an index file (bad magic)".into()));
        }
        if u32_at(&h, 4) != VERSION {
            return Err(Error::Format(format!("unsupported index version {}", u32_at(&h, 4))));
        }
        let dims = u32_at(&h, 8) as usize;
        let len = u64_at(&h, 12);
        let page_size = u32_at(&h, 20) as usize;
        let ids = u32_at(&h, 24) & FLAG_IDS != 0;
        let layout = PageLayout::new(page_size, dims, ids)?
            .with_capacities(Some(u32_at(&h, 28) as usize), Some(u32_at(&h, 32) as usize))?;
        let method = method_from(u32_at(&h, 36))?;
        let base_pages = u64_at(&h, 40);

        let trailer = 8 + 4 + 8 + 16 * dims as u64 + 4;
        let size = file.metadata()?.len();
        if size < INDEX_HEADER + trailer {
            return Err(Error::Format("index file truncated".into()));
        }
        file.seek(SeekFrom::Start(size - trailer))?;
        let mut t = vec![0u8; trailer as usize];
        file.read_exact(&mut t)?;
        if &t[t.len() - 4..] != TRAILER_MAGIC {
            return Err(Error::Format("index trailer missing".into()));
        }
        let root = NodeRef::new(u64_at(&t, 0), u32_at(&t, 8) as u16);
        let pages = u64_at(&t, 12);
        if INDEX_HEADER + pages * page_size as u64 + trailer != size {
            return Err(Error::Format("index page count disagrees with file size".into()));
        }
        let f = |i: usize| f64::from_le_bytes(t[20 + 8 * i..28 + 8 * i].try_into().expect("8 bytes"));
        let lo = (0..dims).map(f).collect();
        let hi = (dims..2 * dims).map(f).collect();
        let mbb = Mbb::new(lo, hi)?;
        let device = Overlay::new(
            Absent::new(page_size, base_pages),
            FileDevice::new(file, INDEX_HEADER, page_size, pages),
        )?;
        Ok(Self {
            index: Index {
                layout,
                root,
                len,
                mbb,
            },
            method,
            base_pages,
            device,
        })
    }
}
