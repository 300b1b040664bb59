//! Hierarchical container files.
//!
//! A container holds groups, typed N-dimensional datasets, and attributes
//! in a single file (see [`format`] for the layout). Writes go through a
//! [`Container`] opened in write mode; any number of readers may open the
//! same file afterwards. One writer per file, writers and readers not
//! interleaved on the same handle: that is the whole concurrency model.
//!
//! Datasets whose filter chain is the UDF marker hold a signed program
//! instead of element bytes. Reading one requires an execution engine, so
//! [`Container::read_dataset`] refuses and [`Container::read_dataset_with`]
//! hands the stored payload to a caller-supplied [`UdfResolver`].

mod chunk;
pub mod format;
pub mod varstr;

pub use format::{AttrValue, ChunkRecord, ContainerIndex, DatasetMeta, Layout};

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{Seek, SeekFrom, Write as _};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use crate::dtype::{DType, MAX_DIMS};
use crate::filters::{self, FilterSpec, FILTER_UDF};
use crate::instrument;
use crate::{Error, Result};

use chunk::ChunkGrid;
use format::{FOOTER_LEN, FORMAT_VERSION, HEADER_LEN, MAGIC};

/// Executes the program stored in a UDF dataset and returns its elements.
pub trait UdfResolver {
    fn execute_udf(
        &self,
        container: &Container,
        meta: &DatasetMeta,
        payload: &[u8],
    ) -> Result<Vec<u8>>;
}

/// What a caller asks `create_dataset` to build; the container fills in the
/// chunk index as it writes.
#[derive(Debug, Clone)]
pub struct DatasetRequest {
    pub path: String,
    pub dtype: DType,
    pub shape: Vec<u64>,
    pub layout: Layout,
    pub filters: Vec<FilterSpec>,
}

impl DatasetRequest {
    pub fn contiguous(path: &str, dtype: DType, shape: &[u64]) -> DatasetRequest {
        DatasetRequest {
            path: path.to_string(),
            dtype,
            shape: shape.to_vec(),
            layout: Layout::Contiguous,
            filters: Vec::new(),
        }
    }

    pub fn chunked(path: &str, dtype: DType, shape: &[u64], chunk: &[u64]) -> DatasetRequest {
        DatasetRequest {
            path: path.to_string(),
            dtype,
            shape: shape.to_vec(),
            layout: Layout::Chunked(chunk.to_vec()),
            filters: Vec::new(),
        }
    }

    pub fn with_filters(mut self, filters: Vec<FilterSpec>) -> DatasetRequest {
        self.filters = filters;
        self
    }
}

/// Kind of entry a listing reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryKind {
    Group,
    Dataset,
}

/// One row of a listing.
#[derive(Debug, Clone, Copy)]
pub struct Entry<'a> {
    pub path: &'a str,
    pub kind: EntryKind,
    pub meta: Option<&'a DatasetMeta>,
}

pub struct Container {
    file: File,
    path: PathBuf,
    writable: bool,
    /// First byte past the data region; the index starts here.
    data_end: u64,
    index: ContainerIndex,
    by_path: BTreeMap<String, usize>,
}

impl Container {
    /// Creates a fresh container file, truncating anything already there.
    pub fn create(path: impl AsRef<Path>) -> Result<Container> {
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(true)
            .open(path.as_ref())?;
        let mut c = Container {
            file,
            path: path.as_ref().to_path_buf(),
            writable: true,
            data_end: HEADER_LEN,
            index: ContainerIndex::default(),
            by_path: BTreeMap::new(),
        };
        c.file.write_all(MAGIC)?;
        c.file.write_all(&FORMAT_VERSION.to_le_bytes())?;
        c.rewrite_index()?;
        Ok(c)
    }

    /// Opens an existing container read-only.
    pub fn open(path: impl AsRef<Path>) -> Result<Container> {
        Container::open_impl(path.as_ref(), false)
    }

    /// Opens an existing container for appending datasets.
    pub fn open_rw(path: impl AsRef<Path>) -> Result<Container> {
        Container::open_impl(path.as_ref(), true)
    }

    fn open_impl(path: &Path, writable: bool) -> Result<Container> {
        let file = OpenOptions::new().read(true).write(writable).open(path)?;
        let len = file.metadata()?.len();
        if len < HEADER_LEN + FOOTER_LEN {
            return Err(Error::CorruptContainer("file too short".into()));
        }

        let mut header = [0u8; HEADER_LEN as usize];
        file.read_exact_at(&mut header, 0)?;
        if &header[..4] != MAGIC {
            return Err(Error::CorruptContainer("bad header magic".into()));
        }
        let version = u16::from_le_bytes([header[4], header[5]]);
        if version != FORMAT_VERSION {
            return Err(Error::CorruptContainer(format!(
                "unsupported format version {version}"
            )));
        }

        let mut footer = [0u8; FOOTER_LEN as usize];
        file.read_exact_at(&mut footer, len - FOOTER_LEN)?;
        if &footer[8..] != MAGIC {
            return Err(Error::CorruptContainer("bad footer magic".into()));
        }
        let index_offset = u64::from_le_bytes(footer[..8].try_into().unwrap());
        if index_offset < HEADER_LEN || index_offset > len - FOOTER_LEN {
            return Err(Error::CorruptContainer(
                "footer points outside the file".into(),
            ));
        }

        let mut index_bytes = vec![0u8; (len - FOOTER_LEN - index_offset) as usize];
        file.read_exact_at(&mut index_bytes, index_offset)?;
        let index = format::parse_index(&index_bytes)?;

        let by_path = index
            .datasets
            .iter()
            .enumerate()
            .map(|(i, d)| (d.path.clone(), i))
            .collect();
        Ok(Container {
            file,
            path: path.to_path_buf(),
            writable,
            data_end: index_offset,
            index,
            by_path,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn dataset(&self, path: &str) -> Result<&DatasetMeta> {
        let norm = normalize_path(path)?;
        self.by_path
            .get(&norm)
            .map(|&i| &self.index.datasets[i])
            .ok_or(Error::NotFound(norm))
    }

    pub fn is_group(&self, path: &str) -> bool {
        normalize_path(path)
            .map(|p| self.index.groups.contains(&p))
            .unwrap_or(false)
    }

    /// Writes a full dataset in one call.
    ///
    /// `data` is the element buffer in flat row-major order: for fixed-size
    /// dtypes exactly `product(shape) * dtype.size()` bytes, for var-strings
    /// the offsets-plus-heap form of [`varstr`]. Chunks are cut, pushed
    /// through the filter chain, and appended; the index is rewritten and
    /// the file flushed before returning.
    pub fn create_dataset(&mut self, req: DatasetRequest, data: &[u8]) -> Result<()> {
        if req.filters.iter().any(|f| f.id == FILTER_UDF) {
            return Err(Error::BadFilterParams {
                id: FILTER_UDF,
                reason: "attach user-defined functions through the engine".into(),
            });
        }
        filters::validate_chain(&req.filters)?;
        if !req.filters.is_empty() && matches!(req.layout, Layout::Contiguous) {
            return Err(Error::ShapeFilterConflict(
                "filters require a chunked layout".into(),
            ));
        }

        let (path, grid, elements) = self.prepare_create(&req)?;

        // Var-strings are validated and split per tile as decoded strings;
        // everything else moves as raw bytes.
        let var_strings = if req.dtype == DType::VarString {
            Some(varstr::decode(data, elements)?)
        } else {
            let want = elements * req.dtype.size();
            if data.len() != want {
                return Err(Error::ShapeMismatch(format!(
                    "buffer is {} bytes, dataset needs {want}",
                    data.len()
                )));
            }
            None
        };

        let elem_size = req.dtype.size();
        let mut chunk_index = Vec::with_capacity(grid.chunk_count() as usize);
        let mut pos = self.data_end;
        self.file.seek(SeekFrom::Start(pos))?;
        for idx in 0..grid.chunk_count() {
            let tile: Vec<u8> = match &var_strings {
                Some(strings) => {
                    let mut tile_strings =
                        Vec::with_capacity(grid.tile_elements(idx) as usize);
                    grid.for_each_run(idx, |global, _, len| {
                        tile_strings.extend(strings[global..global + len].iter().cloned());
                    });
                    varstr::encode(&tile_strings)
                }
                None => grid.gather(idx, data, elem_size),
            };
            let stored = if req.filters.is_empty() {
                tile
            } else {
                filters::apply_write_chain(&req.filters, &tile)?
            };
            self.file
                .write_all(&stored)
                .map_err(|e| Error::from_io(e, "writing chunk"))?;
            chunk_index.push(ChunkRecord {
                offset: pos,
                stored_len: stored.len() as u64,
            });
            pos += stored.len() as u64;
        }

        self.data_end = pos;
        self.commit_dataset(DatasetMeta {
            path,
            dtype: req.dtype,
            shape: req.shape,
            layout: req.layout,
            filters: req.filters,
            chunk_index,
        })
    }

    /// Stores a UDF payload block as a single-block dataset flagged with the
    /// UDF filter id. The declared dtype and shape describe the output the
    /// program will produce, not the stored bytes.
    pub fn create_udf_dataset(
        &mut self,
        path: &str,
        dtype: DType,
        shape: &[u64],
        block: &[u8],
    ) -> Result<()> {
        let req = DatasetRequest {
            path: path.to_string(),
            dtype,
            shape: shape.to_vec(),
            layout: Layout::Contiguous,
            filters: vec![FilterSpec::udf()],
        };
        let (norm, _, _) = self.prepare_create(&req)?;
        let offset = self.data_end;
        self.file.seek(SeekFrom::Start(offset))?;
        self.file
            .write_all(block)
            .map_err(|e| Error::from_io(e, "writing udf payload"))?;
        self.data_end += block.len() as u64;
        self.commit_dataset(DatasetMeta {
            path: norm,
            dtype: req.dtype,
            shape: req.shape,
            layout: Layout::Contiguous,
            filters: req.filters,
            chunk_index: vec![ChunkRecord {
                offset,
                stored_len: block.len() as u64,
            }],
        })
    }

    /// Shared validation for both dataset flavors: path rules, dtype and
    /// shape invariants, parent groups. Returns the normalized path, the
    /// tile grid, and the element count.
    fn prepare_create(&mut self, req: &DatasetRequest) -> Result<(String, ChunkGrid, usize)> {
        if !self.writable {
            return Err(Error::ReadOnly("container opened read-only".into()));
        }
        let path = normalize_path(&req.path)?;
        if path == "/" {
            return Err(Error::InvalidDType("the root cannot be a dataset".into()));
        }
        if self.by_path.contains_key(&path) || self.index.groups.contains(&path) {
            return Err(Error::DuplicatePath(path));
        }
        req.dtype.validate()?;
        if req.shape.is_empty() || req.shape.len() > MAX_DIMS {
            return Err(Error::ShapeMismatch(format!(
                "rank must be 1..={MAX_DIMS}, got {}",
                req.shape.len()
            )));
        }
        if req.shape.iter().any(|&e| e == 0) {
            return Err(Error::ShapeMismatch("extents must be at least 1".into()));
        }
        let elements = req
            .shape
            .iter()
            .try_fold(1usize, |a, &e| a.checked_mul(e as usize))
            .ok_or_else(|| Error::ShapeMismatch("shape overflows".into()))?;

        let grid = match &req.layout {
            Layout::Contiguous => ChunkGrid::single(&req.shape),
            Layout::Chunked(chunk) => {
                if chunk.len() != req.shape.len() {
                    return Err(Error::ShapeMismatch(
                        "chunk rank differs from dataset rank".into(),
                    ));
                }
                if chunk
                    .iter()
                    .zip(&req.shape)
                    .any(|(&c, &s)| c == 0 || c > s)
                {
                    return Err(Error::ShapeMismatch(
                        "chunk extents must be in 1..=shape".into(),
                    ));
                }
                ChunkGrid::new(&req.shape, chunk)
            }
        };

        // Parents become groups on demand; a dataset in the way is an error.
        for ancestor in ancestors(&path) {
            if self.by_path.contains_key(&ancestor) {
                return Err(Error::DuplicatePath(format!(
                    "{ancestor} is a dataset, cannot contain {path}"
                )));
            }
            self.index.groups.insert(ancestor);
        }
        Ok((path, grid, elements))
    }

    fn commit_dataset(&mut self, meta: DatasetMeta) -> Result<()> {
        self.by_path
            .insert(meta.path.clone(), self.index.datasets.len());
        self.index.datasets.push(meta);
        self.rewrite_index()
    }

    /// Creates (or re-asserts) a group.
    pub fn ensure_group(&mut self, path: &str) -> Result<()> {
        if !self.writable {
            return Err(Error::ReadOnly("container opened read-only".into()));
        }
        let path = normalize_path(path)?;
        if path == "/" {
            return Ok(());
        }
        if self.by_path.contains_key(&path) {
            return Err(Error::DuplicatePath(path));
        }
        for ancestor in ancestors(&path) {
            if self.by_path.contains_key(&ancestor) {
                return Err(Error::DuplicatePath(format!("{ancestor} is a dataset")));
            }
            self.index.groups.insert(ancestor);
        }
        self.index.groups.insert(path);
        self.rewrite_index()
    }

    /// Attaches a small metadata value to an existing group or dataset.
    pub fn set_attr(&mut self, path: &str, key: &str, value: AttrValue) -> Result<()> {
        if !self.writable {
            return Err(Error::ReadOnly("container opened read-only".into()));
        }
        let path = normalize_path(path)?;
        if !self.by_path.contains_key(&path) && !self.index.groups.contains(&path) {
            return Err(Error::NotFound(path));
        }
        self.index.attrs.insert((path, key.to_string()), value);
        self.rewrite_index()
    }

    pub fn attr(&self, path: &str, key: &str) -> Option<&AttrValue> {
        let path = normalize_path(path).ok()?;
        self.index.attrs.get(&(path, key.to_string()))
    }

    /// Reads a plain dataset back as its flat element buffer.
    pub fn read_dataset(&self, path: &str) -> Result<Vec<u8>> {
        self.read_dataset_with_opt(path, None)
    }

    /// Like [`Container::read_dataset`], but UDF datasets are handed to
    /// `resolver` for on-the-fly execution.
    pub fn read_dataset_with(&self, path: &str, resolver: &dyn UdfResolver) -> Result<Vec<u8>> {
        self.read_dataset_with_opt(path, Some(resolver))
    }

    fn read_dataset_with_opt(
        &self,
        path: &str,
        resolver: Option<&dyn UdfResolver>,
    ) -> Result<Vec<u8>> {
        let meta = self.dataset(path)?;
        if meta.filters.iter().any(|f| f.id == FILTER_UDF) {
            let payload = self.read_block(&meta.chunk_index[0])?;
            return match resolver {
                Some(r) => r.execute_udf(self, meta, &payload),
                None => Err(Error::UdfDataset(meta.path.clone())),
            };
        }
        self.read_plain(meta)
    }

    fn read_plain(&self, meta: &DatasetMeta) -> Result<Vec<u8>> {
        let elem_size = meta.dtype.size();
        let elements = meta.element_count() as usize;
        let grid = match &meta.layout {
            Layout::Contiguous => ChunkGrid::single(&meta.shape),
            Layout::Chunked(chunk) => ChunkGrid::new(&meta.shape, chunk),
        };
        if meta.chunk_index.len() as u64 != grid.chunk_count() {
            return Err(Error::CorruptContainer(format!(
                "{}: chunk index has {} records, layout needs {}",
                meta.path,
                meta.chunk_index.len(),
                grid.chunk_count()
            )));
        }

        if meta.dtype == DType::VarString {
            // Decode every tile, then re-encode the whole dataset so the
            // caller sees one normalized offsets-plus-heap buffer.
            let mut strings: Vec<String> = vec![String::new(); elements];
            for (idx, record) in meta.chunk_index.iter().enumerate() {
                let stored = self.read_block(record)?;
                let tile = filters::apply_read_chain(&meta.filters, &stored, None)?;
                let tile_strings = varstr::decode(&tile, grid.tile_elements(idx as u64) as usize)?;
                grid.for_each_run(idx as u64, |global, local, len| {
                    for k in 0..len {
                        strings[global + k] = tile_strings[local + k].clone();
                    }
                });
            }
            return Ok(varstr::encode(&strings));
        }

        let mut out = vec![0u8; elements * elem_size];
        for (idx, record) in meta.chunk_index.iter().enumerate() {
            let expected = grid.tile_elements(idx as u64) as usize * elem_size;
            let stored = self.read_block(record)?;
            let tile = filters::apply_read_chain(&meta.filters, &stored, Some(expected))?;
            grid.scatter(idx as u64, &tile, elem_size, &mut out);
        }
        Ok(out)
    }

    /// Raw stored block of a UDF dataset.
    pub fn udf_payload(&self, path: &str) -> Result<Vec<u8>> {
        let meta = self.dataset(path)?;
        if !meta.filters.iter().any(|f| f.id == FILTER_UDF) {
            return Err(Error::NotFound(format!(
                "{} is not a user-defined function dataset",
                meta.path
            )));
        }
        self.read_block(&meta.chunk_index[0])
    }

    fn read_block(&self, record: &ChunkRecord) -> Result<Vec<u8>> {
        instrument::record_data_read();
        let mut buf = vec![0u8; record.stored_len as usize];
        self.file.read_exact_at(&mut buf, record.offset)?;
        Ok(buf)
    }

    /// Lexicographically sorted entries at or under `prefix`.
    pub fn list(&self, prefix: &str) -> Result<Vec<Entry<'_>>> {
        let prefix = normalize_path(prefix)?;
        let matches = |p: &str| {
            prefix == "/" || p == prefix || p.starts_with(&format!("{prefix}/"))
        };
        let mut entries: Vec<Entry<'_>> = Vec::new();
        for g in &self.index.groups {
            if matches(g) {
                entries.push(Entry {
                    path: g,
                    kind: EntryKind::Group,
                    meta: None,
                });
            }
        }
        for ds in &self.index.datasets {
            if matches(&ds.path) {
                entries.push(Entry {
                    path: &ds.path,
                    kind: EntryKind::Dataset,
                    meta: Some(ds),
                });
            }
        }
        entries.sort_by(|a, b| a.path.cmp(b.path));
        Ok(entries)
    }

    fn rewrite_index(&mut self) -> Result<()> {
        let bytes = format::serialize_index(&self.index);
        self.file.seek(SeekFrom::Start(self.data_end))?;
        self.file
            .write_all(&bytes)
            .map_err(|e| Error::from_io(e, "writing index"))?;
        self.file
            .write_all(&self.data_end.to_le_bytes())
            .map_err(|e| Error::from_io(e, "writing footer"))?;
        self.file
            .write_all(MAGIC)
            .map_err(|e| Error::from_io(e, "writing footer"))?;
        let end = self.data_end + bytes.len() as u64 + FOOTER_LEN;
        self.file.set_len(end)?;
        self.file.sync_data()?;
        Ok(())
    }
}

/// Validates and normalizes an absolute path: leading slash, nonempty
/// segments, no trailing slash. `/` denotes the root and is valid only
/// where a group can appear.
pub fn normalize_path(path: &str) -> Result<String> {
    if path == "/" {
        return Ok("/".to_string());
    }
    let Some(rest) = path.strip_prefix('/') else {
        return Err(Error::NotFound(format!("path must be absolute: {path}")));
    };
    if rest.is_empty() || rest.split('/').any(|seg| seg.is_empty()) {
        return Err(Error::NotFound(format!("malformed path: {path}")));
    }
    Ok(path.to_string())
}

/// Proper ancestors of a normalized path, nearest the root first.
fn ancestors(path: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut at = 0;
    while let Some(next) = path[at + 1..].find('/') {
        at = at + 1 + next;
        out.push(path[..at].to_string());
    }
    out
}
