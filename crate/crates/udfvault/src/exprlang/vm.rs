//! Stack-machine evaluator for compiled programs.
//!
//! Evaluation is elementwise: the program runs once per output element,
//! entirely in binary64, and the result is converted to the output
//! datatype on the way out. Integer outputs round half to even and
//! saturate at the type bounds; NaN converts to zero.
//!
//! Cost is static: `instructions * output elements`, knowable before the
//! first element runs. `evaluate` and `evaluate_range` both check it
//! against the caller's budget up front and refuse to start when the full
//! evaluation would exceed it, so a partitioned run is admitted or
//! rejected exactly like a whole one.
//!
//! NaN is canonical: every value entering the stack from a load, a
//! constant, or an operation collapses to the positive quiet NaN bit
//! pattern when it is NaN at all. IEEE leaves NaN sign and payload
//! propagation to the implementation (negation flips the sign bit, and
//! which payload survives `NaN + NaN` depends on machine operand order),
//! so without this rule two correct evaluators could disagree on output
//! bits. With it, any conforming evaluator reproduces this one exactly.

use super::program::{Op, Program};
use crate::dtype::{read_scalar_f64, write_scalar_f64, DType};
use crate::{Error, Result};

/// One attach-time input: a flat element buffer and its datatype.
#[derive(Debug, Clone, Copy)]
pub struct EvalInput<'a> {
    pub buffer: &'a [u8],
    pub dtype: &'a DType,
}

/// Evaluates `program` over every element of `out_shape`.
pub fn evaluate(
    program: &Program,
    inputs: &[EvalInput<'_>],
    out_shape: &[u64],
    out_dtype: &DType,
    budget: u64,
) -> Result<Vec<u8>> {
    let elements = element_count(out_shape)?;
    evaluate_range(program, inputs, out_shape, out_dtype, budget, 0, elements)
}

/// Evaluates the flat output elements `start..end` only.
///
/// The result of concatenating ranges that partition `0..elements` is
/// byte-identical to one full `evaluate` call: each element's value
/// depends only on its own flat index and coordinates.
pub fn evaluate_range(
    program: &Program,
    inputs: &[EvalInput<'_>],
    out_shape: &[u64],
    out_dtype: &DType,
    budget: u64,
    start: usize,
    end: usize,
) -> Result<Vec<u8>> {
    let (ops, max_depth) = program.decode()?;
    let elements = element_count(out_shape)?;
    if start > end || end > elements {
        return Err(Error::ShapeMismatch(format!(
            "range {start}..{end} outside 0..{elements}"
        )));
    }

    // Admission control before any element runs.
    let cost = (ops.len() as u64)
        .checked_mul(elements as u64)
        .ok_or(Error::BudgetExceeded {
            cost: u64::MAX,
            budget,
        })?;
    if cost > budget {
        return Err(Error::BudgetExceeded { cost, budget });
    }

    if !out_dtype.is_numeric() {
        return Err(Error::InputDTypeUnsupported(format!(
            "expression output must be numeric, got {out_dtype}"
        )));
    }
    for op in &ops {
        if let Op::Coord(d) = op {
            if *d as usize >= out_shape.len() {
                return Err(Error::ShapeMismatch(format!(
                    "d{d} used on a rank-{} output",
                    out_shape.len()
                )));
            }
        }
    }

    // Resolve the input table once; every LOAD j then costs one index.
    let mut loads = Vec::with_capacity(program.input_table.len());
    for &position in &program.input_table {
        let input = inputs.get(position as usize).ok_or_else(|| {
            Error::ShapeMismatch(format!(
                "program references input {position} but only {} were provided",
                inputs.len()
            ))
        })?;
        if !input.dtype.is_numeric() {
            return Err(Error::InputDTypeUnsupported(input.dtype.to_string()));
        }
        let size = input.dtype.size();
        if input.buffer.len() % size != 0 || input.buffer.len() / size != elements {
            return Err(Error::ShapeMismatch(format!(
                "input {position} holds {} bytes, expected {} elements of {}",
                input.buffer.len(),
                elements,
                input.dtype
            )));
        }
        loads.push(*input);
    }

    // Row-major strides for COORD.
    let mut strides = vec![1usize; out_shape.len()];
    for d in (0..out_shape.len().saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * out_shape[d + 1] as usize;
    }

    let mut out = Vec::with_capacity((end - start) * out_dtype.size());
    let mut stack = vec![0.0f64; max_depth];
    for idx in start..end {
        let mut sp = 0usize;
        for op in &ops {
            match *op {
                Op::Const(k) => {
                    stack[sp] = canon(program.const_pool[k as usize]);
                    sp += 1;
                }
                Op::Load(j) => {
                    let input = &loads[j as usize];
                    stack[sp] = canon(read_scalar_f64(input.dtype, input.buffer, idx));
                    sp += 1;
                }
                Op::Coord(d) => {
                    let d = d as usize;
                    stack[sp] = ((idx / strides[d]) % out_shape[d] as usize) as f64;
                    sp += 1;
                }
                Op::Index => {
                    stack[sp] = idx as f64;
                    sp += 1;
                }
                Op::Add => {
                    sp -= 1;
                    stack[sp - 1] = canon(stack[sp - 1] + stack[sp]);
                }
                Op::Sub => {
                    sp -= 1;
                    stack[sp - 1] = canon(stack[sp - 1] - stack[sp]);
                }
                Op::Mul => {
                    sp -= 1;
                    stack[sp - 1] = canon(stack[sp - 1] * stack[sp]);
                }
                Op::Div => {
                    sp -= 1;
                    stack[sp - 1] = canon(stack[sp - 1] / stack[sp]);
                }
                Op::Neg => stack[sp - 1] = canon(-stack[sp - 1]),
                Op::Call(f) => {
                    let func = super::ast::Func::from_index(f).unwrap();
                    let arity = func.arity();
                    let value = canon(func.apply(&stack[sp - arity..sp]));
                    sp -= arity - 1;
                    stack[sp - 1] = value;
                }
            }
        }
        write_scalar_f64(out_dtype, stack[0], &mut out);
    }
    Ok(out)
}

/// The one NaN the machine is allowed to produce.
const CANON_NAN: f64 = f64::from_bits(0x7FF8_0000_0000_0000);

#[inline]
fn canon(value: f64) -> f64 {
    if value.is_nan() {
        CANON_NAN
    } else {
        value
    }
}

fn element_count(shape: &[u64]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::ShapeMismatch("output shape is empty".into()));
    }
    shape
        .iter()
        .try_fold(1usize, |a, &e| {
            if e == 0 {
                None
            } else {
                a.checked_mul(e as usize)
            }
        })
        .ok_or_else(|| Error::ShapeMismatch("output shape overflows".into()))
}
