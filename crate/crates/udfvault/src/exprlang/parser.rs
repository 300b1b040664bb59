//! Recursive-descent parser.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | primary
//! primary := NUMBER | IDENT | IDENT '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Identifiers resolve at parse time: `i` is the flat index, `d0`..`d31`
//! are coordinates, a name in the alias list is an input reference, and a
//! name followed by `(` must be a built-in function. Anything else is an
//! unknown identifier at its source offset.

use super::ast::{Ast, BinOp, Func};
use super::lexer::{tokenize, Token, TokenKind};
use crate::dtype::MAX_DIMS;
use crate::{Error, Result};

pub fn parse(source: &str, aliases: &[&str]) -> Result<Ast> {
    let tokens = tokenize(source)?;
    let mut p = Parser {
        tokens,
        at: 0,
        end_offset: source.len(),
        aliases,
    };
    let ast = p.expr()?;
    if let Some(tok) = p.peek() {
        return Err(Error::Syntax {
            offset: tok.offset,
            message: format!("unexpected `{}` after expression", tok.text),
        });
    }
    Ok(ast)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    at: usize,
    end_offset: usize,
    aliases: &'a [&'a str],
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.at)
    }

    fn eat(&mut self, kind: TokenKind) -> bool {
        if self.peek().map(|t| t.kind) == Some(kind) {
            self.at += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, kind: TokenKind, what: &str) -> Result<Token> {
        match self.peek() {
            Some(t) if t.kind == kind => {
                let t = t.clone();
                self.at += 1;
                Ok(t)
            }
            Some(t) => Err(Error::Syntax {
                offset: t.offset,
                message: format!("expected {what}, found `{}`", t.text),
            }),
            None => Err(Error::Syntax {
                offset: self.end_offset,
                message: format!("expected {what}, found end of input"),
            }),
        }
    }

    fn expr(&mut self) -> Result<Ast> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek().map(|t| t.kind) {
                Some(TokenKind::Plus) => BinOp::Add,
                Some(TokenKind::Minus) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.at += 1;
            let rhs = self.term()?;
            lhs = Ast::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Ast> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek().map(|t| t.kind) {
                Some(TokenKind::Star) => BinOp::Mul,
                Some(TokenKind::Slash) => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.at += 1;
            let rhs = self.unary()?;
            lhs = Ast::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Ast> {
        if self.eat(TokenKind::Minus) {
            return Ok(Ast::Neg(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Ast> {
        match self.peek() {
            Some(t) if t.kind == TokenKind::Number => {
                let value: f64 = t.text.parse().expect("lexer validated the number");
                self.at += 1;
                Ok(Ast::Const(value))
            }
            Some(t) if t.kind == TokenKind::LParen => {
                self.at += 1;
                let inner = self.expr()?;
                self.expect(TokenKind::RParen, "`)`")?;
                Ok(inner)
            }
            Some(t) if t.kind == TokenKind::Ident => {
                let name = t.text.clone();
                let offset = t.offset;
                self.at += 1;
                if self.eat(TokenKind::LParen) {
                    self.call(&name, offset)
                } else {
                    self.ident(&name, offset)
                }
            }
            Some(t) => Err(Error::Syntax {
                offset: t.offset,
                message: format!("expected an expression, found `{}`", t.text),
            }),
            None => Err(Error::Syntax {
                offset: self.end_offset,
                message: "expected an expression, found end of input".into(),
            }),
        }
    }

    fn call(&mut self, name: &str, offset: usize) -> Result<Ast> {
        let Some((func, arity)) = Func::lookup(name) else {
            return Err(Error::UnknownIdentifier {
                offset,
                name: format!("{name} (not a function)"),
            });
        };
        let mut args = vec![self.expr()?];
        while self.eat(TokenKind::Comma) {
            args.push(self.expr()?);
        }
        match self.peek() {
            Some(t) if t.kind == TokenKind::RParen => {
                self.at += 1;
            }
            Some(t) => {
                return Err(Error::Syntax {
                    offset: t.offset,
                    message: format!("expected `,` or `)`, found `{}`", t.text),
                })
            }
            None => {
                return Err(Error::Syntax {
                    offset: self.end_offset,
                    message: "expected `,` or `)`, found end of input".into(),
                })
            }
        }
        if args.len() != arity {
            return Err(Error::Arity {
                offset,
                name: name.to_string(),
                expected: arity,
                got: args.len(),
            });
        }
        Ok(Ast::Call(func, args))
    }

    fn ident(&mut self, name: &str, offset: usize) -> Result<Ast> {
        if name == "i" {
            return Ok(Ast::FlatIndex);
        }
        if let Some(rest) = name.strip_prefix('d') {
            if !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()) && rest.len() <= 2 {
                let dim: usize = rest.parse().unwrap();
                if dim < MAX_DIMS {
                    return Ok(Ast::Coord(dim));
                }
            }
        }
        if let Some(pos) = self.aliases.iter().position(|a| *a == name) {
            return Ok(Ast::InputRef(pos));
        }
        Err(Error::UnknownIdentifier {
            offset,
            name: name.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Ast::*;

    fn p(src: &str) -> Ast {
        parse(src, &["nir", "red"]).unwrap()
    }

    #[test]
    fn precedence_and_grouping() {
        assert_eq!(
            p("nir + red * 2"),
            Bin(
                BinOp::Add,
                Box::new(InputRef(0)),
                Box::new(Bin(
                    BinOp::Mul,
                    Box::new(InputRef(1)),
                    Box::new(Const(2.0))
                ))
            )
        );
        assert_eq!(
            p("(nir + red) * 2"),
            Bin(
                BinOp::Mul,
                Box::new(Bin(
                    BinOp::Add,
                    Box::new(InputRef(0)),
                    Box::new(InputRef(1))
                )),
                Box::new(Const(2.0))
            )
        );
    }

    #[test]
    fn left_associativity() {
        assert_eq!(
            p("1 - 2 - 3"),
            Bin(
                BinOp::Sub,
                Box::new(Bin(BinOp::Sub, Box::new(Const(1.0)), Box::new(Const(2.0)))),
                Box::new(Const(3.0))
            )
        );
    }

    #[test]
    fn unary_minus_nests() {
        assert_eq!(p("--nir"), Neg(Box::new(Neg(Box::new(InputRef(0))))));
        assert_eq!(
            p("-nir * red"),
            Bin(
                BinOp::Mul,
                Box::new(Neg(Box::new(InputRef(0)))),
                Box::new(InputRef(1))
            )
        );
    }

    #[test]
    fn reserved_identifiers() {
        assert_eq!(p("i"), FlatIndex);
        assert_eq!(p("d0"), Coord(0));
        assert_eq!(p("d31"), Coord(31));
        assert!(matches!(
            parse("d32", &[]),
            Err(Error::UnknownIdentifier { .. })
        ));
        // A `d`-name in the alias list that is not a valid coordinate still
        // resolves as an alias.
        assert_eq!(parse("d32", &["d32"]).unwrap(), InputRef(0));
    }

    #[test]
    fn calls_and_arity() {
        assert_eq!(
            p("min(nir, 2)"),
            Call(Func::Min, vec![InputRef(0), Const(2.0)])
        );
        assert!(matches!(
            p_err("sqrt(nir, red)"),
            Error::Arity {
                expected: 1,
                got: 2,
                ..
            }
        ));
        assert!(matches!(
            p_err("nir(2)"),
            Error::UnknownIdentifier { offset: 0, .. }
        ));
        assert!(matches!(
            p_err("fmax(1, 2)"),
            Error::UnknownIdentifier { .. }
        ));
    }

    fn p_err(src: &str) -> Error {
        parse(src, &["nir", "red"]).unwrap_err()
    }

    #[test]
    fn unterminated_call_reports_end_of_input() {
        let err = parse("min(a, b", &["a", "b"]).unwrap_err();
        match err {
            Error::Syntax { offset, .. } => assert_eq!(offset, 8),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn dangling_operator() {
        assert!(matches!(
            p_err("nir +"),
            Error::Syntax { offset: 5, .. }
        ));
        assert!(matches!(p_err("nir red"), Error::Syntax { offset: 4, .. }));
        assert!(matches!(p_err(""), Error::Syntax { offset: 0, .. }));
    }

    #[test]
    fn unknown_alias() {
        assert!(matches!(
            p_err("blue + 1"),
            Error::UnknownIdentifier { offset: 0, .. }
        ));
    }
}
