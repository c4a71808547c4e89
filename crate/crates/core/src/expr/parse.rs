//! Recursive-descent parser for the scalar expression grammar.
//!
//! ```text
//! expr   := term (("+" | "-") term)*
//! term   := signed (("*" | "/") signed)*
//! signed := "-" signed | factor
//! factor := base ("^" exponent)?
//! base   := number | ident | "(" expr ")" | func base
//! func   := "sin" | "cos" | "exp" | "log" | "sqrt"
//! ```
//!
//! Exponents are real constants, optionally signed or parenthesized.

use super::{BinaryOp, ExprNode, UnaryOp, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

fn tokenize(src: &str) -> Result<Vec<(Tok, usize)>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let tok = match c {
            b'+' => Tok::Plus,
            b'-' => Tok::Minus,
            b'*' => Tok::Star,
            b'/' => Tok::Slash,
            b'^' => Tok::Caret,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let text = &src[start..i];
                let value: f64 = text.parse().map_err(|_| Error::Syntax {
                    offset: start,
                    message: format!("malformed number `{text}`"),
                })?;
                out.push((Tok::Num(value), start));
                continue;
            }
            c if c.is_ascii_alphabetic() => {
                while i < bytes.len() && bytes[i].is_ascii_alphanumeric() {
                    i += 1;
                }
                out.push((Tok::Ident(src[start..i].to_string()), start));
                continue;
            }
            _ => {
                // Report the full (possibly multi-byte) character.
                let ch = src[start..].chars().next().unwrap_or('?');
                return Err(Error::Syntax {
                    offset: start,
                    message: format!("unexpected character `{ch}`"),
                });
            }
        };
        out.push((tok, start));
        i += 1;
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    len: usize,
    dimension: usize,
    _src: &'a str,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map(|&(_, o)| o).unwrap_or(self.len)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        self.pos += 1;
        t
    }

    fn syntax<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Syntax {
            offset: self.offset(),
            message: message.into(),
        })
    }

    fn expr(&mut self) -> Result<ExprNode> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => BinaryOp::Add,
                Some(Tok::Minus) => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = ExprNode::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<ExprNode> {
        let mut lhs = self.signed()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Star) => BinaryOp::Mul,
                Some(Tok::Slash) => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.signed()?;
            lhs = ExprNode::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn signed(&mut self) -> Result<ExprNode> {
        if self.peek() == Some(&Tok::Minus) {
            self.bump();
            let inner = self.signed()?;
            return Ok(ExprNode::Unary(UnaryOp::Neg, Box::new(inner)));
        }
        self.factor()
    }

    fn factor(&mut self) -> Result<ExprNode> {
        let base = self.base()?;
        if self.peek() == Some(&Tok::Caret) {
            self.bump();
            let e = self.exponent()?;
            return Ok(ExprNode::Pow(Box::new(base), e));
        }
        Ok(base)
    }

    fn exponent(&mut self) -> Result<f64> {
        let offset = self.offset();
        let reject = |p: &Self| -> Result<f64> {
            Err(Error::Syntax {
                offset: p.offset().min(p.len).max(offset),
                message: "exponent must be a real constant (expression exponents are rejected)"
                    .into(),
            })
        };
        match self.peek() {
            Some(Tok::Num(_)) => match self.bump() {
                Some(Tok::Num(v)) => Ok(v),
                _ => unreachable!(),
            },
            Some(Tok::Minus) => {
                self.bump();
                match self.bump() {
                    Some(Tok::Num(v)) => Ok(-v),
                    _ => {
                        self.pos -= 1;
                        reject(self)
                    }
                }
            }
            Some(Tok::LParen) => {
                self.bump();
                let neg = if self.peek() == Some(&Tok::Minus) {
                    self.bump();
                    true
                } else {
                    false
                };
                let v = match self.peek() {
                    Some(Tok::Num(v)) => *v,
                    _ => return reject(self),
                };
                self.bump();
                if self.peek() != Some(&Tok::RParen) {
                    return reject(self);
                }
                self.bump();
                Ok(if neg { -v } else { v })
            }
            None => self.syntax("expected exponent after `^`"),
            _ => reject(self),
        }
    }

    fn base(&mut self) -> Result<ExprNode> {
        let offset = self.offset();
        match self.bump() {
            Some(Tok::Num(v)) => Ok(ExprNode::Const(v)),
            Some(Tok::LParen) => {
                let inner = self.expr()?;
                if self.peek() != Some(&Tok::RParen) {
                    return self.syntax("expected `)`");
                }
                self.bump();
                Ok(inner)
            }
            Some(Tok::Ident(name)) => {
                let func = match name.as_str() {
                    "sin" => Some(UnaryOp::Sin),
                    "cos" => Some(UnaryOp::Cos),
                    "exp" => Some(UnaryOp::Exp),
                    "log" => Some(UnaryOp::Log),
                    "sqrt" => Some(UnaryOp::Sqrt),
                    _ => None,
                };
                if let Some(op) = func {
                    let arg = self.base()?;
                    return Ok(ExprNode::Unary(op, Box::new(arg)));
                }
                self.variable(&name, offset)
            }
            Some(_) => {
                self.pos -= 1;
                self.syntax("expected a number, variable, function or `(`")
            }
            None => self.syntax("unexpected end of input"),
        }
    }

    fn variable(&self, name: &str, offset: usize) -> Result<ExprNode> {
        let unknown = || Error::UnknownIdentifier {
            name: name.to_string(),
            offset,
        };
        let mut chars = name.chars();
        let kind = chars.next().ok_or_else(unknown)?;
        let digits = chars.as_str();
        if digits.len() != 1 || !digits.as_bytes()[0].is_ascii_digit() || digits == "0" {
            return Err(unknown());
        }
        let index = (digits.as_bytes()[0] - b'1') as usize;
        let var = match kind {
            'x' => Var::Position(index),
            'v' => Var::Velocity(index),
            _ => return Err(unknown()),
        };
        if index >= self.dimension {
            return Err(Error::VariableOutOfRange {
                name: name.to_string(),
                offset,
                dimension: self.dimension,
            });
        }
        Ok(ExprNode::Var(var))
    }
}

/// Parse `source` for a system of dimension `dimension` (1..=9).
pub fn parse(source: &str, dimension: usize) -> Result<ExprNode> {
    if dimension == 0 || dimension > 9 {
        return Err(Error::InvalidParameter(format!(
            "dimension must be in 1..=9, got {dimension}"
        )));
    }
    let toks = tokenize(source)?;
    let mut p = Parser {
        toks,
        pos: 0,
        len: source.len(),
        dimension,
        _src: source,
    };
    if p.peek().is_none() {
        return p.syntax("empty expression");
    }
    let e = p.expr()?;
    if p.peek().is_some() {
        return p.syntax("unexpected trailing input");
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn var_x(i: usize) -> Box<ExprNode> {
        Box::new(ExprNode::Var(Var::Position(i)))
    }

    #[test]
    fn sum_of_squares() {
        let e = parse("x1^2 + x2^2", 2).unwrap();
        let expected = ExprNode::Binary(
            BinaryOp::Add,
            Box::new(ExprNode::Pow(var_x(0), 2.0)),
            Box::new(ExprNode::Pow(var_x(1), 2.0)),
        );
        assert_eq!(e, expected);
    }

    #[test]
    fn whitespace_insensitive() {
        assert_eq!(
            parse("x1^2+x2^2", 2).unwrap(),
            parse("  x1 ^ 2 +\tx2^2 ", 2).unwrap()
        );
    }

    #[test]
    fn pow_binds_tighter_than_unary_minus() {
        let e = parse("-x1^2", 1).unwrap();
        assert_eq!(
            e,
            ExprNode::Unary(UnaryOp::Neg, Box::new(ExprNode::Pow(var_x(0), 2.0)))
        );
    }

    #[test]
    fn left_associative_subtraction() {
        let e = parse("x1 - 1 - 1", 1).unwrap();
        assert_eq!(e.eval(&[5.0], &[]).unwrap(), 3.0);
        let e = parse("8 / 2 / 2", 1).unwrap();
        assert_eq!(e.eval(&[0.0], &[]).unwrap(), 2.0);
    }

    #[test]
    fn function_application() {
        let e = parse("sin(x1)^2 + cos x1", 1).unwrap();
        let x: f64 = 0.3;
        let v = e.eval(&[x], &[]).unwrap();
        assert!((v - (x.sin().powi(2) + x.cos())).abs() < 1e-15);
    }

    #[test]
    fn numbers_with_exponents() {
        let e = parse("1.5e-3 * 2E2 + .5", 1).unwrap();
        assert!((e.eval(&[0.0], &[]).unwrap() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn signed_and_parenthesized_exponents() {
        let e = parse("x1^-1 + x1^(-2) + x1^(0.5)", 1).unwrap();
        let v = e.eval(&[4.0], &[]).unwrap();
        assert!((v - (0.25 + 0.0625 + 2.0)).abs() < 1e-15);
    }

    #[test]
    fn expression_exponent_rejected() {
        let err = parse("x1^x2", 2).unwrap_err();
        match err {
            Error::Syntax { offset, message } => {
                assert_eq!(offset, 3);
                assert!(message.contains("exponent"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse("x1^(x2)", 2).is_err());
        assert!(parse("x1^(1+1)", 2).is_err());
    }

    #[test]
    fn unknown_identifier() {
        match parse("2*y1", 2).unwrap_err() {
            Error::UnknownIdentifier { name, offset } => {
                assert_eq!(name, "y1");
                assert_eq!(offset, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse("x10", 2),
            Err(Error::UnknownIdentifier { .. })
        ));
        assert!(matches!(
            parse("x0", 2),
            Err(Error::UnknownIdentifier { .. })
        ));
        assert!(matches!(
            parse("pi", 2),
            Err(Error::UnknownIdentifier { .. })
        ));
    }

    #[test]
    fn variable_out_of_range() {
        match parse("x1 + v3", 2).unwrap_err() {
            Error::VariableOutOfRange {
                name,
                offset,
                dimension,
            } => {
                assert_eq!(name, "v3");
                assert_eq!(offset, 5);
                assert_eq!(dimension, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn syntax_errors_carry_offsets() {
        match parse("x1 + * 2", 1).unwrap_err() {
            Error::Syntax { offset, .. } => assert_eq!(offset, 5),
            other => panic!("unexpected {other:?}"),
        }
        match parse("(x1 + 2", 1).unwrap_err() {
            Error::Syntax { offset, .. } => assert_eq!(offset, 7),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse("", 1), Err(Error::Syntax { .. })));
        assert!(matches!(
            parse("x1 $", 1),
            Err(Error::Syntax { offset: 3, .. })
        ));
        assert!(matches!(
            parse("x1 x1", 1),
            Err(Error::Syntax { offset: 3, .. })
        ));
    }
}
