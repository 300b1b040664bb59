//! Element datatypes.
//!
//! Every dataset carries a [`DType`] describing its element layout. Scalar
//! types map directly onto little-endian machine words. Fixed strings occupy
//! a constant number of bytes per element. Variable strings store a 4-byte
//! reference into a per-chunk heap (see [`crate::runtime::strings`]).
//! Compounds pack named scalar members at explicit byte offsets inside a
//! record of declared size, which lets a container mirror records produced
//! by foreign writers, padding included.

use std::fmt;

use crate::{Error, Result};

/// Storage footprint of one variable-length string reference.
pub const VAR_STRING_REF_SIZE: usize = 4;

/// Highest coordinate dimension addressable by an expression (`d0`..`d31`).
pub const MAX_DIMS: usize = 32;

/// One named field inside a compound record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompoundMember {
    /// Name exactly as the producing application spelled it.
    pub raw_name: String,
    /// Member type; scalars and fixed strings only.
    pub dtype: DType,
    /// Byte offset of the member inside the record.
    pub offset: usize,
}

/// Record layout for compound elements.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompoundType {
    pub members: Vec<CompoundMember>,
    /// Declared record size; may exceed the packed extent of the members,
    /// leaving explicit padding holes.
    pub size: usize,
}

/// Element datatype of a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DType {
    Int8,
    Int16,
    Int32,
    Int64,
    UInt8,
    UInt16,
    UInt32,
    UInt64,
    Float32,
    Float64,
    /// Fixed-width string of exactly `len` bytes per element.
    FixedString(usize),
    /// Variable-length string; elements store heap references.
    VarString,
    Compound(CompoundType),
}

impl DType {
    /// Bytes one element occupies in the element stream.
    pub fn size(&self) -> usize {
        match self {
            DType::Int8 | DType::UInt8 => 1,
            DType::Int16 | DType::UInt16 => 2,
            DType::Int32 | DType::UInt32 | DType::Float32 => 4,
            DType::Int64 | DType::UInt64 | DType::Float64 => 8,
            DType::FixedString(len) => *len,
            DType::VarString => VAR_STRING_REF_SIZE,
            DType::Compound(c) => c.size,
        }
    }

    pub fn is_numeric(&self) -> bool {
        !matches!(
            self,
            DType::FixedString(_) | DType::VarString | DType::Compound(_)
        )
    }

    pub fn is_string(&self) -> bool {
        matches!(self, DType::FixedString(_) | DType::VarString)
    }

    /// Checks the structural invariants that make a dtype storable.
    ///
    /// Fixed strings must be at least one byte wide. Compound members must
    /// carry unique raw names, sit at strictly increasing, non-overlapping
    /// offsets, and fit inside the declared record size; members themselves
    /// must be scalars or fixed strings.
    pub fn validate(&self) -> Result<()> {
        match self {
            DType::FixedString(0) => Err(Error::InvalidDType(
                "fixed string length must be at least 1".into(),
            )),
            DType::Compound(c) => validate_compound(c),
            _ => Ok(()),
        }
    }
}

fn validate_compound(c: &CompoundType) -> Result<()> {
    if c.members.is_empty() {
        return Err(Error::InvalidDType("compound with no members".into()));
    }
    let mut end = 0usize;
    for (idx, m) in c.members.iter().enumerate() {
        match m.dtype {
            DType::Compound(_) => {
                return Err(Error::InvalidDType(format!(
                    "member `{}` nests a compound",
                    m.raw_name
                )));
            }
            DType::VarString => {
                return Err(Error::InvalidDType(format!(
                    "member `{}` is a variable-length string",
                    m.raw_name
                )));
            }
            _ => m.dtype.validate()?,
        }
        if c.members[..idx].iter().any(|p| p.raw_name == m.raw_name) {
            return Err(Error::InvalidDType(format!(
                "duplicate member name `{}`",
                m.raw_name
            )));
        }
        if m.offset < end {
            return Err(Error::InvalidDType(format!(
                "member `{}` at offset {} overlaps the previous member",
                m.raw_name, m.offset
            )));
        }
        end = m.offset + m.dtype.size();
    }
    if c.size < end {
        return Err(Error::InvalidDType(format!(
            "declared size {} smaller than member extent {}",
            c.size, end
        )));
    }
    Ok(())
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DType::Int8 => f.write_str("int8"),
            DType::Int16 => f.write_str("int16"),
            DType::Int32 => f.write_str("int32"),
            DType::Int64 => f.write_str("int64"),
            DType::UInt8 => f.write_str("uint8"),
            DType::UInt16 => f.write_str("uint16"),
            DType::UInt32 => f.write_str("uint32"),
            DType::UInt64 => f.write_str("uint64"),
            DType::Float32 => f.write_str("float32"),
            DType::Float64 => f.write_str("float64"),
            DType::FixedString(len) => write!(f, "string({len})"),
            DType::VarString => f.write_str("string"),
            DType::Compound(_) => f.write_str("compound"),
        }
    }
}

/// Resolves a datatype name as it appears in payload headers and on the
/// command line. Accepts the canonical names plus the conventional aliases
/// `float` and `double`.
pub fn parse_name(name: &str) -> Result<DType> {
    let t = name.trim();
    let dt = match t {
        "int8" => DType::Int8,
        "int16" => DType::Int16,
        "int32" => DType::Int32,
        "int64" => DType::Int64,
        "uint8" => DType::UInt8,
        "uint16" => DType::UInt16,
        "uint32" => DType::UInt32,
        "uint64" => DType::UInt64,
        "float32" | "float" => DType::Float32,
        "float64" | "double" => DType::Float64,
        "string" => DType::VarString,
        _ => {
            if let Some(len) = t
                .strip_prefix("string(")
                .and_then(|r| r.strip_suffix(')'))
                .and_then(|n| n.parse::<usize>().ok())
            {
                let dt = DType::FixedString(len);
                dt.validate()?;
                return Ok(dt);
            }
            return Err(Error::InvalidDType(format!("unknown datatype `{name}`")));
        }
    };
    Ok(dt)
}

/// Reads element `idx` of a numeric buffer as binary64.
///
/// Integer values up to 2^53 convert exactly; wider magnitudes round to the
/// nearest representable binary64 as usual.
pub fn read_scalar_f64(dtype: &DType, buf: &[u8], idx: usize) -> f64 {
    let s = dtype.size();
    let at = idx * s;
    let b = &buf[at..at + s];
    match dtype {
        DType::Int8 => i8::from_le_bytes([b[0]]) as f64,
        DType::Int16 => i16::from_le_bytes([b[0], b[1]]) as f64,
        DType::Int32 => i32::from_le_bytes(b.try_into().unwrap()) as f64,
        DType::Int64 => i64::from_le_bytes(b.try_into().unwrap()) as f64,
        DType::UInt8 => b[0] as f64,
        DType::UInt16 => u16::from_le_bytes([b[0], b[1]]) as f64,
        DType::UInt32 => u32::from_le_bytes(b.try_into().unwrap()) as f64,
        DType::UInt64 => u64::from_le_bytes(b.try_into().unwrap()) as f64,
        DType::Float32 => f32::from_le_bytes(b.try_into().unwrap()) as f64,
        DType::Float64 => f64::from_le_bytes(b.try_into().unwrap()),
        _ => unreachable!("caller guarantees a numeric dtype"),
    }
}

/// Converts a binary64 into the wire form of a numeric dtype and appends it.
///
/// Integer targets round half to even, saturate at the type bounds, and map
/// NaN to zero. Float32 narrows with the default round-to-nearest.
pub fn write_scalar_f64(dtype: &DType, value: f64, out: &mut Vec<u8>) {
    match dtype {
        DType::Int8 => out.extend((value.round_ties_even() as i8).to_le_bytes()),
        DType::Int16 => out.extend((value.round_ties_even() as i16).to_le_bytes()),
        DType::Int32 => out.extend((value.round_ties_even() as i32).to_le_bytes()),
        DType::Int64 => out.extend((value.round_ties_even() as i64).to_le_bytes()),
        DType::UInt8 => out.extend((value.round_ties_even() as u8).to_le_bytes()),
        DType::UInt16 => out.extend((value.round_ties_even() as u16).to_le_bytes()),
        DType::UInt32 => out.extend((value.round_ties_even() as u32).to_le_bytes()),
        DType::UInt64 => out.extend((value.round_ties_even() as u64).to_le_bytes()),
        DType::Float32 => out.extend((value as f32).to_le_bytes()),
        DType::Float64 => out.extend(value.to_le_bytes()),
        _ => unreachable!("caller guarantees a numeric dtype"),
    }
}
