//! Chunk filter pipeline.
//!
//! Filters transform a chunk's bytes on their way to storage. A dataset
//! declares an ordered chain; writes apply it left to right and reads apply
//! the exact inverse right to left, so storage always holds the output of
//! the final filter. Chains only make sense on chunked layouts, where each
//! chunk moves through the pipeline independently, which also makes the
//! pipeline safe to drive concurrently on distinct chunks.
//!
//! Registered filter ids:
//!
//! | id  | filter  | params           |
//! |-----|---------|------------------|
//! | 1   | shuffle | element size     |
//! | 2   | deflate | level 1..=9      |
//! | 500 | udf     | none; stands alone and is not a byte transform |
//!
//! The udf id marks a dataset whose single stored block is a signed program
//! payload; the engine intercepts it before the byte pipeline runs, so both
//! apply functions reject it.

use std::io::Write;

use flate2::write::{DeflateDecoder, DeflateEncoder};
use flate2::Compression;

use crate::{Error, Result};

pub const FILTER_SHUFFLE: u32 = 1;
pub const FILTER_DEFLATE: u32 = 2;
pub const FILTER_UDF: u32 = 500;

/// One configured filter in a dataset's chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterSpec {
    pub id: u32,
    pub params: Vec<u32>,
}

impl FilterSpec {
    pub fn shuffle(elem_size: u32) -> FilterSpec {
        FilterSpec {
            id: FILTER_SHUFFLE,
            params: vec![elem_size],
        }
    }

    pub fn deflate(level: u32) -> FilterSpec {
        FilterSpec {
            id: FILTER_DEFLATE,
            params: vec![level],
        }
    }

    pub fn udf() -> FilterSpec {
        FilterSpec {
            id: FILTER_UDF,
            params: Vec::new(),
        }
    }
}

/// Checks ids and parameters of a declared chain.
///
/// The udf marker may only appear as the sole entry; everything else must be
/// a registered byte transform with well-formed parameters.
pub fn validate_chain(chain: &[FilterSpec]) -> Result<()> {
    for spec in chain {
        match spec.id {
            FILTER_SHUFFLE => {
                if spec.params.len() != 1 || spec.params[0] == 0 {
                    return Err(Error::BadFilterParams {
                        id: FILTER_SHUFFLE,
                        reason: "expects a single nonzero element size".into(),
                    });
                }
            }
            FILTER_DEFLATE => {
                if spec.params.len() != 1 || !(1..=9).contains(&spec.params[0]) {
                    return Err(Error::BadFilterParams {
                        id: FILTER_DEFLATE,
                        reason: "expects a single level in 1..=9".into(),
                    });
                }
            }
            FILTER_UDF => {
                if chain.len() != 1 {
                    return Err(Error::BadFilterParams {
                        id: FILTER_UDF,
                        reason: "udf marker must be the only filter".into(),
                    });
                }
                if !spec.params.is_empty() {
                    return Err(Error::BadFilterParams {
                        id: FILTER_UDF,
                        reason: "udf marker takes no parameters".into(),
                    });
                }
            }
            other => return Err(Error::UnknownFilter(other)),
        }
    }
    Ok(())
}

/// Runs a chunk through the chain in declaration order.
pub fn apply_write_chain(chain: &[FilterSpec], bytes: &[u8]) -> Result<Vec<u8>> {
    validate_chain(chain)?;
    let mut cur = bytes.to_vec();
    for spec in chain {
        cur = match spec.id {
            FILTER_SHUFFLE => shuffle(&cur, spec.params[0] as usize),
            FILTER_DEFLATE => deflate(&cur, spec.params[0])?,
            _ => {
                return Err(Error::FilterFailure {
                    id: spec.id,
                    reason: "not a byte transform".into(),
                })
            }
        };
    }
    Ok(cur)
}

/// Inverts the chain right to left, recovering the original chunk bytes.
///
/// `expected_len` is the pre-filter length when the caller knows it (always
/// the case for fixed-size elements); a decoded chunk of any other length is
/// rejected. Variable-string chunks have data-dependent raw sizes and pass
/// `None`, relying on structural validation downstream.
pub fn apply_read_chain(
    chain: &[FilterSpec],
    bytes: &[u8],
    expected_len: Option<usize>,
) -> Result<Vec<u8>> {
    validate_chain(chain)?;
    let mut cur = bytes.to_vec();
    for spec in chain.iter().rev() {
        cur = match spec.id {
            FILTER_SHUFFLE => unshuffle(&cur, spec.params[0] as usize),
            FILTER_DEFLATE => inflate(&cur)?,
            _ => {
                return Err(Error::FilterFailure {
                    id: spec.id,
                    reason: "not a byte transform".into(),
                })
            }
        };
    }
    if let Some(expected) = expected_len {
        if cur.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                got: cur.len(),
            });
        }
    }
    Ok(cur)
}

/// Byte-plane transpose: gathers byte 0 of every element, then byte 1, and
/// so on, which groups bytes of similar significance for the compressor.
/// A trailing remainder shorter than one element is copied through as-is.
fn shuffle(bytes: &[u8], elem_size: usize) -> Vec<u8> {
    if elem_size <= 1 || bytes.len() < elem_size {
        return bytes.to_vec();
    }
    let n = bytes.len() / elem_size;
    let body = n * elem_size;
    let mut out = Vec::with_capacity(bytes.len());
    for plane in 0..elem_size {
        for elem in 0..n {
            out.push(bytes[elem * elem_size + plane]);
        }
    }
    out.extend_from_slice(&bytes[body..]);
    out
}

fn unshuffle(bytes: &[u8], elem_size: usize) -> Vec<u8> {
    if elem_size <= 1 || bytes.len() < elem_size {
        return bytes.to_vec();
    }
    let n = bytes.len() / elem_size;
    let body = n * elem_size;
    let mut out = vec![0u8; bytes.len()];
    for plane in 0..elem_size {
        for elem in 0..n {
            out[elem * elem_size + plane] = bytes[plane * n + elem];
        }
    }
    out[body..].copy_from_slice(&bytes[body..]);
    out
}

/// Raw RFC 1951 stream, no container framing.
fn deflate(bytes: &[u8], level: u32) -> Result<Vec<u8>> {
    let mut enc = DeflateEncoder::new(Vec::new(), Compression::new(level));
    enc.write_all(bytes).map_err(|e| Error::FilterFailure {
        id: FILTER_DEFLATE,
        reason: e.to_string(),
    })?;
    enc.finish().map_err(|e| Error::FilterFailure {
        id: FILTER_DEFLATE,
        reason: e.to_string(),
    })
}

fn inflate(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut dec = DeflateDecoder::new(Vec::new());
    dec.write_all(bytes).map_err(|e| Error::FilterFailure {
        id: FILTER_DEFLATE,
        reason: format!("corrupt deflate stream: {e}"),
    })?;
    dec.finish().map_err(|e| Error::FilterFailure {
        id: FILTER_DEFLATE,
        reason: format!("corrupt deflate stream: {e}"),
    })
}
