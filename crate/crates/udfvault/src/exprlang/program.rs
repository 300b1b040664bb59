//! Bytecode programs and their wire format.
//!
//! A program is a constant pool, an input table, and a flat opcode stream
//! for a stack machine. The input table adds one indirection: `LOAD j`
//! reads the input whose position in the attach-time input list is
//! `input_table[j]`, so the stream stays compact no matter how inputs are
//! ordered or repeated.
//!
//! Wire format, all little-endian:
//!
//! ```text
//! "UXB1"  magic, 4 bytes
//! u16     version (currently 1)
//! u16     constant count, then that many binary64 values
//! u16     input table length, then that many u16 entries
//! u32     code length in bytes, then the opcode stream
//! ```
//!
//! The opcode stream ends with exactly one `HALT`, which is also its last
//! byte. Deserialization re-validates everything: magic, version, operand
//! ranges, and the stack discipline (depth never negative, at least one
//! value at `HALT`).

use crate::{Error, Result};

pub const BYTECODE_MAGIC: &[u8; 4] = b"UXB1";
pub const BYTECODE_VERSION: u16 = 1;

pub const OP_HALT: u8 = 0x00;
pub const OP_CONST: u8 = 0x01;
pub const OP_LOAD: u8 = 0x02;
pub const OP_COORD: u8 = 0x03;
pub const OP_INDEX: u8 = 0x04;
pub const OP_ADD: u8 = 0x10;
pub const OP_SUB: u8 = 0x11;
pub const OP_MUL: u8 = 0x12;
pub const OP_DIV: u8 = 0x13;
pub const OP_NEG: u8 = 0x14;
pub const OP_CALL: u8 = 0x20;

/// Decoded instruction. `Halt` never appears here; decoding stops at it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Const(u16),
    Load(u16),
    Coord(u16),
    Index,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Call(u8),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    pub const_pool: Vec<f64>,
    /// Indices into the attach-time input list.
    pub input_table: Vec<u16>,
    /// Raw opcode stream including the trailing `HALT`.
    pub code: Vec<u8>,
}

impl Program {
    /// Decodes and validates the opcode stream.
    ///
    /// Returns the instruction list and the maximum stack depth reached,
    /// which the evaluator uses to preallocate its stack.
    pub fn decode(&self) -> Result<(Vec<Op>, usize)> {
        use super::ast::Func;

        let code = &self.code;
        let mut ops = Vec::new();
        let mut at = 0;
        let mut depth: isize = 0;
        let mut max_depth: isize = 0;
        let bad = |msg: String| Error::MalformedBytecode(msg);

        let mut halted = false;
        while at < code.len() {
            let opcode = code[at];
            at += 1;
            let operand_u16 = |at: &mut usize| -> Result<u16> {
                if *at + 2 > code.len() {
                    return Err(bad(format!("truncated operand at byte {at:?}")));
                }
                let v = u16::from_le_bytes([code[*at], code[*at + 1]]);
                *at += 2;
                Ok(v)
            };
            let op = match opcode {
                OP_HALT => {
                    halted = true;
                    break;
                }
                OP_CONST => {
                    let k = operand_u16(&mut at)?;
                    if k as usize >= self.const_pool.len() {
                        return Err(bad(format!(
                            "CONST {k} exceeds pool of {}",
                            self.const_pool.len()
                        )));
                    }
                    depth += 1;
                    Op::Const(k)
                }
                OP_LOAD => {
                    let j = operand_u16(&mut at)?;
                    if j as usize >= self.input_table.len() {
                        return Err(bad(format!(
                            "LOAD {j} exceeds input table of {}",
                            self.input_table.len()
                        )));
                    }
                    depth += 1;
                    Op::Load(j)
                }
                OP_COORD => {
                    let d = operand_u16(&mut at)?;
                    if d as usize >= crate::dtype::MAX_DIMS {
                        return Err(bad(format!("COORD {d} exceeds the dimension limit")));
                    }
                    depth += 1;
                    Op::Coord(d)
                }
                OP_INDEX => {
                    depth += 1;
                    Op::Index
                }
                OP_ADD | OP_SUB | OP_MUL | OP_DIV => {
                    depth -= 1;
                    match opcode {
                        OP_ADD => Op::Add,
                        OP_SUB => Op::Sub,
                        OP_MUL => Op::Mul,
                        _ => Op::Div,
                    }
                }
                OP_NEG => Op::Neg,
                OP_CALL => {
                    if at >= code.len() {
                        return Err(bad("truncated CALL operand".into()));
                    }
                    let f = code[at];
                    at += 1;
                    let Some(func) = Func::from_index(f) else {
                        return Err(bad(format!("CALL {f} is not a known function")));
                    };
                    depth -= func.arity() as isize - 1;
                    Op::Call(f)
                }
                other => return Err(bad(format!("unknown opcode {other:#04x}"))),
            };
            if depth <= 0 {
                // Every instruction leaves at least its own result; dipping
                // to zero or below means an operand was missing.
                return Err(bad("stack underflow".into()));
            }
            max_depth = max_depth.max(depth);
            ops.push(op);
        }
        if !halted {
            return Err(bad("missing HALT".into()));
        }
        if at != code.len() {
            return Err(bad("code continues after HALT".into()));
        }
        if depth < 1 {
            return Err(bad("empty stack at HALT".into()));
        }
        Ok((ops, max_depth as usize))
    }

    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(
            12 + self.const_pool.len() * 8 + self.input_table.len() * 2 + self.code.len(),
        );
        out.extend(BYTECODE_MAGIC);
        out.extend(BYTECODE_VERSION.to_le_bytes());
        out.extend((self.const_pool.len() as u16).to_le_bytes());
        for &c in &self.const_pool {
            out.extend(c.to_le_bytes());
        }
        out.extend((self.input_table.len() as u16).to_le_bytes());
        for &j in &self.input_table {
            out.extend(j.to_le_bytes());
        }
        out.extend((self.code.len() as u32).to_le_bytes());
        out.extend(&self.code);
        out
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Program> {
        let mut r = Cursor { bytes, at: 0 };
        if r.take(4)? != BYTECODE_MAGIC {
            return Err(Error::MalformedBytecode("bad magic".into()));
        }
        let version = r.u16()?;
        if version != BYTECODE_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let n_consts = r.u16()? as usize;
        let mut const_pool = Vec::with_capacity(n_consts);
        for _ in 0..n_consts {
            const_pool.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
        }
        let n_inputs = r.u16()? as usize;
        let mut input_table = Vec::with_capacity(n_inputs);
        for _ in 0..n_inputs {
            input_table.push(r.u16()?);
        }
        let code_len = r.u32()? as usize;
        let code = r.take(code_len)?.to_vec();
        if r.at != bytes.len() {
            return Err(Error::MalformedBytecode(
                "trailing bytes after code".into(),
            ));
        }
        let program = Program {
            const_pool,
            input_table,
            code,
        };
        program.decode()?;
        Ok(program)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.at < n {
            return Err(Error::MalformedBytecode("truncated".into()));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
