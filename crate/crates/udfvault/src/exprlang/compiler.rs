//! Ast to bytecode lowering.
//!
//! Post-order traversal over the tree: operands are emitted before the
//! instruction that consumes them, so the stream runs on a plain value
//! stack. Constants are pooled by bit pattern (so -0.0 and 0.0 stay
//! distinct and NaN payloads survive). The input table records attach-time
//! input positions in first-use order; repeated uses of the same input
//! share one table entry.

use super::ast::{Ast, BinOp};
use super::program::{
    Program, OP_ADD, OP_CALL, OP_CONST, OP_DIV, OP_HALT, OP_INDEX, OP_LOAD, OP_MUL, OP_NEG,
    OP_SUB,
};
use super::program::OP_COORD;

pub fn compile_ast(ast: &Ast) -> Program {
    let mut c = Compiler {
        program: Program {
            const_pool: Vec::new(),
            input_table: Vec::new(),
            code: Vec::new(),
        },
    };
    c.emit(ast);
    c.program.code.push(OP_HALT);
    c.program
}

struct Compiler {
    program: Program,
}

impl Compiler {
    fn emit(&mut self, ast: &Ast) {
        match ast {
            Ast::Const(v) => {
                let k = self.const_slot(*v);
                self.op16(OP_CONST, k);
            }
            Ast::InputRef(position) => {
                let j = self.input_slot(*position as u16);
                self.op16(OP_LOAD, j);
            }
            Ast::Coord(d) => self.op16(OP_COORD, *d as u16),
            Ast::FlatIndex => self.program.code.push(OP_INDEX),
            Ast::Neg(inner) => {
                self.emit(inner);
                self.program.code.push(OP_NEG);
            }
            Ast::Bin(op, lhs, rhs) => {
                self.emit(lhs);
                self.emit(rhs);
                self.program.code.push(match op {
                    BinOp::Add => OP_ADD,
                    BinOp::Sub => OP_SUB,
                    BinOp::Mul => OP_MUL,
                    BinOp::Div => OP_DIV,
                });
            }
            Ast::Call(func, args) => {
                for arg in args {
                    self.emit(arg);
                }
                self.program.code.push(OP_CALL);
                self.program.code.push(*func as u8);
            }
        }
    }

    fn op16(&mut self, opcode: u8, operand: u16) {
        self.program.code.push(opcode);
        self.program.code.extend(operand.to_le_bytes());
    }

    fn const_slot(&mut self, v: f64) -> u16 {
        let found = self
            .program
            .const_pool
            .iter()
            .position(|c| c.to_bits() == v.to_bits());
        match found {
            Some(k) => k as u16,
            None => {
                self.program.const_pool.push(v);
                (self.program.const_pool.len() - 1) as u16
            }
        }
    }

    fn input_slot(&mut self, position: u16) -> u16 {
        let found = self.program.input_table.iter().position(|&p| p == position);
        match found {
            Some(j) => j as u16,
            None => {
                self.program.input_table.push(position);
                (self.program.input_table.len() - 1) as u16
            }
        }
    }
}
