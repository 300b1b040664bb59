//! A small arithmetic expression language for elementwise dataset
//! functions.
//!
//! Expressions combine binary64 arithmetic (`+ - * /`, unary minus),
//! parentheses, calls to a fixed set of builtins (`abs`, `sqrt`, `floor`,
//! `ceil`, `min`, `max`, `pow`), numeric literals, and three kinds of
//! references:
//!
//! * `i` is the flat row-major index of the output element,
//! * `d0` through `d31` are its per-dimension coordinates,
//! * any other identifier names an input dataset via the alias list given
//!   at compile time.
//!
//! `compile` turns a source string into a validated [`Program`];
//! [`evaluate`] runs one over input buffers. The bytecode has a stable
//! little-endian wire format (see [`program`]) so a compiled function can
//! be stored inside a container and executed elsewhere; deserialization
//! re-validates operand ranges and stack discipline, so a corrupted or
//! hand-rolled stream fails loudly instead of executing.
//!
//! ```
//! use udfvault::dtype::DType;
//! use udfvault::exprlang::{compile, evaluate, EvalInput};
//!
//! let program = compile("(a - b) / (a + b)", &["a", "b"]).unwrap();
//! let a = 6.0f64.to_le_bytes();
//! let b = 2.0f64.to_le_bytes();
//! let out = evaluate(
//!     &program,
//!     &[
//!         EvalInput { buffer: &a, dtype: &DType::Float64 },
//!         EvalInput { buffer: &b, dtype: &DType::Float64 },
//!     ],
//!     &[1],
//!     &DType::Float64,
//!     1_000_000,
//! )
//! .unwrap();
//! assert_eq!(f64::from_le_bytes(out[..8].try_into().unwrap()), 0.5);
//! ```

pub mod ast;
mod compiler;
mod lexer;
pub mod parser;
pub mod program;
mod vm;

pub use compiler::compile_ast;
pub use parser::parse;
pub use program::{Program, BYTECODE_MAGIC, BYTECODE_VERSION};
pub use vm::{evaluate, evaluate_range, EvalInput};

use crate::{Error, Result};

/// Compiles `source` against an ordered list of input aliases.
///
/// Alias position is significant: the first alias names input 0 of the
/// evaluation call, and the program's input table records which of those
/// positions each `LOAD` reads.
pub fn compile(source: &str, aliases: &[&str]) -> Result<Program> {
    for (n, alias) in aliases.iter().enumerate() {
        if !is_identifier(alias) {
            return Err(Error::Syntax {
                offset: 0,
                message: format!("alias `{alias}` is not a valid identifier"),
            });
        }
        if is_reserved(alias) {
            return Err(Error::Syntax {
                offset: 0,
                message: format!("alias `{alias}` collides with a reserved name"),
            });
        }
        if aliases[..n].contains(alias) {
            return Err(Error::Syntax {
                offset: 0,
                message: format!("alias `{alias}` appears twice"),
            });
        }
    }
    let ast = parser::parse(source, aliases)?;
    Ok(compiler::compile_ast(&ast))
}

fn is_identifier(name: &str) -> bool {
    let mut bytes = name.bytes();
    match bytes.next() {
        Some(b) if b.is_ascii_alphabetic() || b == b'_' => {}
        _ => return false,
    }
    bytes.all(|b| b.is_ascii_alphanumeric() || b == b'_')
}

/// Names the parser resolves before consulting the alias list.
fn is_reserved(name: &str) -> bool {
    if name == "i" {
        return true;
    }
    if let Some(rest) = name.strip_prefix('d') {
        if !rest.is_empty() && rest.len() <= 2 && rest.bytes().all(|b| b.is_ascii_digit()) {
            return rest.parse::<usize>().unwrap() < crate::dtype::MAX_DIMS;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compile_validates_aliases() {
        assert!(compile("a + b", &["a", "b"]).is_ok());
        for aliases in [
            &["a", "a"][..],
            &["i"][..],
            &["d0"][..],
            &["d31"][..],
            &["2fast"][..],
            &[""][..],
            &["has space"][..],
        ] {
            assert!(
                matches!(compile("1", aliases), Err(Error::Syntax { .. })),
                "aliases {aliases:?} should be rejected"
            );
        }
        // d32 is not a coordinate, so it is a legal alias.
        assert!(compile("d32", &["d32"]).is_ok());
    }

    #[test]
    fn compile_round_trips_through_the_wire_format() {
        let p = compile("max(a, d0) / (i + 1)", &["a"]).unwrap();
        let q = Program::deserialize(&p.serialize()).unwrap();
        assert_eq!(p, q);
    }
}
