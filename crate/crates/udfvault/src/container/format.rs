//! On-disk index encoding.
//!
//! A container file is laid out as
//!
//! ```text
//! +--------+----------------------+-------+--------+
//! | header | data region          | index | footer |
//! +--------+----------------------+-------+--------+
//! ```
//!
//! The header is the 4-byte magic `SDC1` followed by a u16 format version.
//! The footer is the index's file offset as a u64 followed by the magic
//! again; a reader finds the index by walking 12 bytes back from the end of
//! the file. All multi-byte integers are little-endian and floats are
//! IEEE-754, so the bytes mean the same thing on every platform.
//!
//! The index itself repeats the magic and version, then lists groups
//! (sorted), datasets (creation order), and attributes (sorted by path and
//! key). Every collection is length-prefixed and every string is UTF-8 with
//! a length prefix. Nothing in the encoding depends on hash order or time,
//! so serializing the same index twice yields the same bytes.

use std::collections::{BTreeMap, BTreeSet};

use crate::dtype::{CompoundMember, CompoundType, DType};
use crate::filters::FilterSpec;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SDC1";
pub const FORMAT_VERSION: u16 = 1;
/// Header: magic + version.
pub const HEADER_LEN: u64 = 6;
/// Footer: index offset + magic.
pub const FOOTER_LEN: u64 = 12;

/// Storage placement of one chunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkRecord {
    /// Absolute file offset of the stored bytes.
    pub offset: u64,
    /// Length on disk, after the write-direction filter chain.
    pub stored_len: u64,
}

/// Physical arrangement of a dataset's elements.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Layout {
    /// One block holding the whole element stream.
    Contiguous,
    /// Row-major tiles of the given chunk shape.
    Chunked(Vec<u64>),
}

/// Everything the index knows about one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub path: String,
    pub dtype: DType,
    pub shape: Vec<u64>,
    pub layout: Layout,
    pub filters: Vec<FilterSpec>,
    pub chunk_index: Vec<ChunkRecord>,
}

impl DatasetMeta {
    pub fn element_count(&self) -> u64 {
        self.shape.iter().product()
    }

    /// Sum of on-disk chunk lengths.
    pub fn stored_bytes(&self) -> u64 {
        self.chunk_index.iter().map(|c| c.stored_len).sum()
    }
}

/// Attribute values are small metadata riders on groups and datasets; they
/// are stored text-encoded inside the index, never in the data region.
#[derive(Debug, Clone, PartialEq)]
pub enum AttrValue {
    Int(i64),
    Float(f64),
    Text(String),
    IntArray(Vec<i64>),
    FloatArray(Vec<f64>),
    TextArray(Vec<String>),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContainerIndex {
    pub groups: BTreeSet<String>,
    pub datasets: Vec<DatasetMeta>,
    pub attrs: BTreeMap<(String, String), AttrValue>,
}

// ---------------------------------------------------------------- encoding

fn put_str16(out: &mut Vec<u8>, s: &str) {
    debug_assert!(s.len() <= u16::MAX as usize);
    out.extend((s.len() as u16).to_le_bytes());
    out.extend(s.as_bytes());
}

fn put_str32(out: &mut Vec<u8>, s: &str) {
    out.extend((s.len() as u32).to_le_bytes());
    out.extend(s.as_bytes());
}

fn put_dtype(out: &mut Vec<u8>, dtype: &DType) {
    let tag: u8 = match dtype {
        DType::Int8 => 1,
        DType::Int16 => 2,
        DType::Int32 => 3,
        DType::Int64 => 4,
        DType::UInt8 => 5,
        DType::UInt16 => 6,
        DType::UInt32 => 7,
        DType::UInt64 => 8,
        DType::Float32 => 9,
        DType::Float64 => 10,
        DType::FixedString(_) => 11,
        DType::VarString => 12,
        DType::Compound(_) => 13,
    };
    out.push(tag);
    match dtype {
        DType::FixedString(len) => out.extend((*len as u32).to_le_bytes()),
        DType::Compound(c) => {
            out.extend((c.size as u32).to_le_bytes());
            out.extend((c.members.len() as u16).to_le_bytes());
            for m in &c.members {
                put_str16(out, &m.raw_name);
                put_dtype(out, &m.dtype);
                out.extend((m.offset as u32).to_le_bytes());
            }
        }
        _ => {}
    }
}

fn attr_tag_and_text(value: &AttrValue) -> (u8, String) {
    match value {
        AttrValue::Int(v) => (1, v.to_string()),
        AttrValue::Float(v) => (2, format!("{v:?}")),
        AttrValue::Text(v) => (3, v.clone()),
        AttrValue::IntArray(v) => (
            4,
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(","),
        ),
        AttrValue::FloatArray(v) => (
            5,
            v.iter()
                .map(|x| format!("{x:?}"))
                .collect::<Vec<_>>()
                .join(","),
        ),
        // Text arrays need escaping for the separator, so they ride as a
        // JSON array; the other encodings stay bare for readability.
        AttrValue::TextArray(v) => (6, serde_json::to_string(v).expect("string array")),
    }
}

fn attr_from_text(tag: u8, text: &str) -> Result<AttrValue> {
    let bad = |what: &str| Error::CorruptContainer(format!("bad {what} attribute text"));
    Ok(match tag {
        1 => AttrValue::Int(text.parse().map_err(|_| bad("int"))?),
        2 => AttrValue::Float(text.parse().map_err(|_| bad("float"))?),
        3 => AttrValue::Text(text.to_string()),
        4 => AttrValue::IntArray(if text.is_empty() {
            Vec::new()
        } else {
            text.split(',')
                .map(|p| p.parse().map_err(|_| bad("int array")))
                .collect::<Result<_>>()?
        }),
        5 => AttrValue::FloatArray(if text.is_empty() {
            Vec::new()
        } else {
            text.split(',')
                .map(|p| p.parse().map_err(|_| bad("float array")))
                .collect::<Result<_>>()?
        }),
        6 => AttrValue::TextArray(serde_json::from_str(text).map_err(|_| bad("text array"))?),
        other => {
            return Err(Error::CorruptContainer(format!(
                "unknown attribute tag {other}"
            )))
        }
    })
}

pub fn serialize_index(index: &ContainerIndex) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend(MAGIC);
    out.extend(FORMAT_VERSION.to_le_bytes());

    out.extend((index.groups.len() as u32).to_le_bytes());
    for g in &index.groups {
        put_str16(&mut out, g);
    }

    out.extend((index.datasets.len() as u32).to_le_bytes());
    for ds in &index.datasets {
        put_str16(&mut out, &ds.path);
        put_dtype(&mut out, &ds.dtype);
        out.push(ds.shape.len() as u8);
        for &e in &ds.shape {
            out.extend(e.to_le_bytes());
        }
        match &ds.layout {
            Layout::Contiguous => out.push(0),
            Layout::Chunked(chunk) => {
                out.push(1);
                out.push(chunk.len() as u8);
                for &e in chunk {
                    out.extend(e.to_le_bytes());
                }
            }
        }
        out.push(ds.filters.len() as u8);
        for f in &ds.filters {
            out.extend(f.id.to_le_bytes());
            out.push(f.params.len() as u8);
            for &p in &f.params {
                out.extend(p.to_le_bytes());
            }
        }
        out.extend((ds.chunk_index.len() as u32).to_le_bytes());
        for c in &ds.chunk_index {
            out.extend(c.offset.to_le_bytes());
            out.extend(c.stored_len.to_le_bytes());
        }
    }

    out.extend((index.attrs.len() as u32).to_le_bytes());
    for ((path, key), value) in &index.attrs {
        put_str16(&mut out, path);
        put_str16(&mut out, key);
        let (tag, text) = attr_tag_and_text(value);
        out.push(tag);
        put_str32(&mut out, &text);
    }
    out
}

// ---------------------------------------------------------------- decoding

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::CorruptContainer("truncated index".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str16(&mut self) -> Result<String> {
        let len = self.u16()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::CorruptContainer("non-utf8 string in index".into()))
    }

    fn str32(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::CorruptContainer("non-utf8 string in index".into()))
    }

    fn dtype(&mut self) -> Result<DType> {
        let dt = match self.u8()? {
            1 => DType::Int8,
            2 => DType::Int16,
            3 => DType::Int32,
            4 => DType::Int64,
            5 => DType::UInt8,
            6 => DType::UInt16,
            7 => DType::UInt32,
            8 => DType::UInt64,
            9 => DType::Float32,
            10 => DType::Float64,
            11 => DType::FixedString(self.u32()? as usize),
            12 => DType::VarString,
            13 => {
                let size = self.u32()? as usize;
                let n = self.u16()? as usize;
                let mut members = Vec::with_capacity(n);
                for _ in 0..n {
                    let raw_name = self.str16()?;
                    let dtype = self.dtype()?;
                    let offset = self.u32()? as usize;
                    members.push(CompoundMember {
                        raw_name,
                        dtype,
                        offset,
                    });
                }
                DType::Compound(CompoundType { members, size })
            }
            other => {
                return Err(Error::CorruptContainer(format!(
                    "unknown dtype tag {other}"
                )))
            }
        };
        dt.validate()
            .map_err(|e| Error::CorruptContainer(format!("invalid stored dtype: {e}")))?;
        Ok(dt)
    }
}

pub fn parse_index(buf: &[u8]) -> Result<ContainerIndex> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::CorruptContainer("bad index magic".into()));
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::CorruptContainer(format!(
            "unsupported format version {version}"
        )));
    }

    let mut index = ContainerIndex::default();
    for _ in 0..r.u32()? {
        index.groups.insert(r.str16()?);
    }

    let n_datasets = r.u32()?;
    for _ in 0..n_datasets {
        let path = r.str16()?;
        let dtype = r.dtype()?;
        let ndims = r.u8()? as usize;
        let mut shape = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            shape.push(r.u64()?);
        }
        let layout = match r.u8()? {
            0 => Layout::Contiguous,
            1 => {
                let n = r.u8()? as usize;
                let mut chunk = Vec::with_capacity(n);
                for _ in 0..n {
                    chunk.push(r.u64()?);
                }
                Layout::Chunked(chunk)
            }
            other => {
                return Err(Error::CorruptContainer(format!(
                    "unknown layout tag {other}"
                )))
            }
        };
        let mut filters = Vec::new();
        for _ in 0..r.u8()? {
            let id = r.u32()?;
            let mut params = Vec::new();
            for _ in 0..r.u8()? {
                params.push(r.u32()?);
            }
            filters.push(FilterSpec { id, params });
        }
        let mut chunk_index = Vec::new();
        for _ in 0..r.u32()? {
            chunk_index.push(ChunkRecord {
                offset: r.u64()?,
                stored_len: r.u64()?,
            });
        }
        index.datasets.push(DatasetMeta {
            path,
            dtype,
            shape,
            layout,
            filters,
            chunk_index,
        });
    }

    for _ in 0..r.u32()? {
        let path = r.str16()?;
        let key = r.str16()?;
        let tag = r.u8()?;
        let text = r.str32()?;
        index.attrs.insert((path, key), attr_from_text(tag, &text)?);
    }

    if r.pos != buf.len() {
        return Err(Error::CorruptContainer(
            "trailing bytes after index".into(),
        ));
    }
    Ok(index)
}
