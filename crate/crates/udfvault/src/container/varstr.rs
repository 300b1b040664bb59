//! Variable-length string encoding.
//!
//! A var-string buffer has two parts: an element stream of u32 offsets, one
//! per element, followed by a heap. Each offset points at a record inside
//! the heap (relative to the heap's first byte), and a record is a u32
//! length followed by that many bytes of UTF-8. Strings therefore live at
//! potentially non-adjacent locations and elements stay fixed-width, which
//! is what lets var-string datasets ride through the chunk pipeline like
//! any other element stream.

use crate::dtype::VAR_STRING_REF_SIZE;
use crate::{Error, Result};

/// Builds the offsets-plus-heap form for `strings`, in element order.
pub fn encode<S: AsRef<str>>(strings: &[S]) -> Vec<u8> {
    let heap_len: usize = strings
        .iter()
        .map(|s| 4 + s.as_ref().len())
        .sum();
    let mut out = Vec::with_capacity(strings.len() * VAR_STRING_REF_SIZE + heap_len);
    let mut heap = Vec::with_capacity(heap_len);
    for s in strings {
        out.extend((heap.len() as u32).to_le_bytes());
        let bytes = s.as_ref().as_bytes();
        heap.extend((bytes.len() as u32).to_le_bytes());
        heap.extend(bytes);
    }
    out.extend(heap);
    out
}

/// Reads element `idx` of an `n`-element var-string buffer.
pub fn get(buf: &[u8], n: usize, idx: usize) -> Result<&str> {
    if idx >= n {
        return Err(Error::OutOfBounds { index: idx, len: n });
    }
    let heap_start = n
        .checked_mul(VAR_STRING_REF_SIZE)
        .filter(|&h| h <= buf.len())
        .ok_or_else(|| corrupt("element stream exceeds buffer"))?;
    let heap = &buf[heap_start..];
    let at = idx * VAR_STRING_REF_SIZE;
    let rel = u32::from_le_bytes(buf[at..at + 4].try_into().unwrap()) as usize;
    if rel + 4 > heap.len() {
        return Err(corrupt("heap offset out of range"));
    }
    let len = u32::from_le_bytes(heap[rel..rel + 4].try_into().unwrap()) as usize;
    let start = rel + 4;
    if start + len > heap.len() {
        return Err(corrupt("heap record out of range"));
    }
    std::str::from_utf8(&heap[start..start + len]).map_err(|_| corrupt("non-utf8 heap record"))
}

/// Decodes all `n` elements, validating the whole structure.
pub fn decode(buf: &[u8], n: usize) -> Result<Vec<String>> {
    (0..n).map(|i| get(buf, n, i).map(str::to_string)).collect()
}

fn corrupt(reason: &str) -> Error {
    Error::CorruptContainer(format!("var-string buffer: {reason}"))
}
