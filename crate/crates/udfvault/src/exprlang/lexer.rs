//! Tokenizer for the expression language.

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Number,
    Ident,
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
    Comma,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
    /// Byte offset of the first character in the source.
    pub offset: usize,
}

/// Splits `source` into tokens. Whitespace separates; anything else that is
/// not a number, identifier, or punctuation is an error at its offset.
pub fn tokenize(source: &str) -> Result<Vec<Token>> {
    let bytes = source.as_bytes();
    let mut tokens = Vec::new();
    let mut at = 0;
    while at < bytes.len() {
        let c = bytes[at];
        if c.is_ascii_whitespace() {
            at += 1;
            continue;
        }
        let simple = match c {
            b'+' => Some(TokenKind::Plus),
            b'-' => Some(TokenKind::Minus),
            b'*' => Some(TokenKind::Star),
            b'/' => Some(TokenKind::Slash),
            b'(' => Some(TokenKind::LParen),
            b')' => Some(TokenKind::RParen),
            b',' => Some(TokenKind::Comma),
            _ => None,
        };
        if let Some(kind) = simple {
            tokens.push(Token {
                kind,
                text: (c as char).to_string(),
                offset: at,
            });
            at += 1;
            continue;
        }
        if c.is_ascii_digit() {
            let start = at;
            while at < bytes.len() && bytes[at].is_ascii_digit() {
                at += 1;
            }
            if at < bytes.len() && bytes[at] == b'.' {
                at += 1;
                if at >= bytes.len() || !bytes[at].is_ascii_digit() {
                    return Err(Error::Syntax {
                        offset: at.min(bytes.len()),
                        message: "expected digits after decimal point".into(),
                    });
                }
                while at < bytes.len() && bytes[at].is_ascii_digit() {
                    at += 1;
                }
            }
            if at < bytes.len() && (bytes[at] == b'e' || bytes[at] == b'E') {
                let mut probe = at + 1;
                if probe < bytes.len() && (bytes[probe] == b'+' || bytes[probe] == b'-') {
                    probe += 1;
                }
                if probe < bytes.len() && bytes[probe].is_ascii_digit() {
                    at = probe;
                    while at < bytes.len() && bytes[at].is_ascii_digit() {
                        at += 1;
                    }
                }
            }
            let text = &source[start..at];
            let value: f64 = text.parse().map_err(|_| Error::Syntax {
                offset: start,
                message: format!("bad number `{text}`"),
            })?;
            if !value.is_finite() {
                return Err(Error::Syntax {
                    offset: start,
                    message: format!("number `{text}` overflows binary64"),
                });
            }
            tokens.push(Token {
                kind: TokenKind::Number,
                text: text.to_string(),
                offset: start,
            });
            continue;
        }
        if c == b'_' || c.is_ascii_alphabetic() {
            let start = at;
            while at < bytes.len() && (bytes[at] == b'_' || bytes[at].is_ascii_alphanumeric()) {
                at += 1;
            }
            tokens.push(Token {
                kind: TokenKind::Ident,
                text: source[start..at].to_string(),
                offset: start,
            });
            continue;
        }
        return Err(Error::Syntax {
            offset: at,
            message: format!("unexpected character `{}`", c as char),
        });
    }
    Ok(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(src: &str) -> Vec<TokenKind> {
        tokenize(src).unwrap().into_iter().map(|t| t.kind).collect()
    }

    #[test]
    fn punctuation_and_idents() {
        use TokenKind::*;
        assert_eq!(
            kinds("(nir - red) / (nir + red)"),
            vec![
                LParen, Ident, Minus, Ident, RParen, Slash, LParen, Ident, Plus, Ident, RParen
            ]
        );
        assert_eq!(kinds("min(a, b)"), vec![Ident, LParen, Ident, Comma, Ident, RParen]);
    }

    #[test]
    fn numbers() {
        let toks = tokenize("1 2.5 3e2 4.5e-1").unwrap();
        let texts: Vec<&str> = toks.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(texts, vec!["1", "2.5", "3e2", "4.5e-1"]);
        assert!(toks.iter().all(|t| t.kind == TokenKind::Number));

        // `2e` is a number followed by an identifier, not an exponent.
        let toks = tokenize("2e").unwrap();
        assert_eq!(toks[0].kind, TokenKind::Number);
        assert_eq!(toks[1].kind, TokenKind::Ident);

        assert!(matches!(tokenize("1."), Err(Error::Syntax { offset: 2, .. })));
        assert!(matches!(tokenize("1e999"), Err(Error::Syntax { .. })));
    }

    #[test]
    fn offsets_are_byte_positions() {
        let toks = tokenize("a + b2").unwrap();
        assert_eq!(toks[0].offset, 0);
        assert_eq!(toks[1].offset, 2);
        assert_eq!(toks[2].offset, 4);
        assert_eq!(toks[2].text, "b2");
    }

    #[test]
    fn stray_characters_are_rejected() {
        assert!(matches!(tokenize("a $ b"), Err(Error::Syntax { offset: 2, .. })));
    }
}
