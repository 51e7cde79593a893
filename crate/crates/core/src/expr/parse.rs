//! Infix formula parser.
//!
//! Precedence, lowest first: `+ -` (left assoc), `* /` (left assoc), unary
//! `-`, `^` with a positive integer literal exponent (expanded into repeated
//! products), then atoms: numbers, `x_i`, `x_j`, `t`, placeholders `c<k>`,
//! parenthesised expressions and calls `sin cos exp sigmoid`. A `-`
//! directly followed by a number literal produces a negative constant.

use thiserror::Error;

use super::{BinaryOp, Expr, UnaryOp, Var};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown identifier `{name}` at byte {pos}")]
    UnknownIdent { pos: usize, name: String },
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text = &src[start..i];
            let v: f64 = text.parse().map_err(|_| ParseError::Syntax {
                pos: start,
                msg: format!("bad number `{text}`"),
            })?;
            out.push((start, Tok::Num(v)));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((start, Tok::Ident(src[start..i].to_string())));
        } else {
            let tok = match c {
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                '+' | '-' | '*' | '/' | '^' => Tok::Op(c),
                _ => {
                    return Err(ParseError::Syntax { pos: i, msg: format!("unexpected character `{c}`") })
                }
            };
            out.push((i, tok));
            i += 1;
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(p, _)| *p)
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError::Syntax { pos: self.offset(), msg: msg.into() })
    }

    fn expect_rparen(&mut self) -> Result<(), ParseError> {
        if self.peek() == Some(&Tok::RParen) {
            self.pos += 1;
            Ok(())
        } else {
            self.err("expected `)`")
        }
    }

    fn sum(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.product()?;
        while let Some(Tok::Op(c @ ('+' | '-'))) = self.peek() {
            let op = if *c == '+' { BinaryOp::Add } else { BinaryOp::Sub };
            self.pos += 1;
            let rhs = self.product()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn product(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(c @ ('*' | '/'))) = self.peek() {
            let op = if *c == '*' { BinaryOp::Mul } else { BinaryOp::Div };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if let Some(Tok::Op('-')) = self.peek() {
            self.pos += 1;
            if let Some(Tok::Num(v)) = self.peek() {
                let v = *v;
                self.pos += 1;
                return self.power(Expr::Const(-v));
            }
            let inner = self.unary()?;
            return Ok(Expr::unary(UnaryOp::Neg, inner));
        }
        let base = self.atom()?;
        self.power(base)
    }

    fn power(&mut self, base: Expr) -> Result<Expr, ParseError> {
        if let Some(Tok::Op('^')) = self.peek() {
            self.pos += 1;
            let n = match self.peek() {
                Some(Tok::Num(v)) if *v >= 1.0 && v.fract() == 0.0 && *v <= 16.0 => *v as usize,
                _ => return self.err("exponent must be an integer literal in 1..=16"),
            };
            self.pos += 1;
            let mut out = base.clone();
            for _ in 1..n {
                out = Expr::binary(BinaryOp::Mul, out, base.clone());
            }
            return Ok(out);
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let at = self.offset();
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Const(v))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let e = self.sum()?;
                self.expect_rparen()?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                let func = match name.as_str() {
                    "x_i" => return Ok(Expr::Var(Var::Xi)),
                    "x_j" => return Ok(Expr::Var(Var::Xj)),
                    "t" => return Ok(Expr::Var(Var::T)),
                    "sin" => UnaryOp::Sin,
                    "cos" => UnaryOp::Cos,
                    "exp" => UnaryOp::Exp,
                    "sigmoid" => UnaryOp::Sigmoid,
                    "neg" => UnaryOp::Neg,
                    other => {
                        if let Some(k) = other.strip_prefix('c').and_then(|d| d.parse::<usize>().ok()) {
                            return Ok(Expr::Param(k));
                        }
                        return Err(ParseError::UnknownIdent { pos: at, name });
                    }
                };
                if self.peek() != Some(&Tok::LParen) {
                    return self.err(format!("expected `(` after `{name}`"));
                }
                self.pos += 1;
                let arg = self.sum()?;
                self.expect_rparen()?;
                Ok(Expr::unary(func, arg))
            }
            Some(_) => self.err("expected a number, variable, function or `(`"),
            None => self.err("unexpected end of input"),
        }
    }
}

/// Parse an infix formula.
pub fn parse(src: &str) -> Result<Expr, ParseError> {
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0, end: src.len() };
    let e = p.sum()?;
    if p.pos != p.toks.len() {
        return p.err("trailing input");
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maps_grammar_to_tree() {
        assert_eq!(
            parse("sin(x_i - x_j)").unwrap(),
            Expr::unary(UnaryOp::Sin, Expr::binary(BinaryOp::Sub, Expr::Var(Var::Xi), Expr::Var(Var::Xj)))
        );
        assert_eq!(parse("0.75").unwrap(), Expr::Const(0.75));
        assert_eq!(parse("-0.75").unwrap(), Expr::Const(-0.75));
        assert_eq!(parse("-x_i").unwrap(), Expr::unary(UnaryOp::Neg, Expr::Var(Var::Xi)));
        assert_eq!(parse("c3").unwrap(), Expr::Param(3));
        assert_eq!(parse("2.5e-3").unwrap(), Expr::Const(2.5e-3));
    }

    #[test]
    fn precedence_and_associativity() {
        let e = parse("1 - 2 - 3").unwrap();
        assert_eq!(e.eval(0.0, None, 0.0).unwrap(), -4.0);
        let e = parse("8 / 4 / 2").unwrap();
        assert_eq!(e.eval(0.0, None, 0.0).unwrap(), 1.0);
        let e = parse("1 + 2 * 3").unwrap();
        assert_eq!(e.eval(0.0, None, 0.0).unwrap(), 7.0);
        let e = parse("-x_i * 2").unwrap();
        assert_eq!(e.eval(3.0, None, 0.0).unwrap(), -6.0);
    }

    #[test]
    fn powers_expand_to_products() {
        assert_eq!(parse("x_i^2").unwrap(), parse("x_i * x_i").unwrap());
        assert!(parse("x_i^0.5").is_err());
    }

    #[test]
    fn reports_errors_with_position() {
        assert_eq!(
            parse("x_i + foo"),
            Err(ParseError::UnknownIdent { pos: 6, name: "foo".into() })
        );
        match parse("(x_i + 1") {
            Err(ParseError::Syntax { pos, .. }) => assert_eq!(pos, 8),
            other => panic!("{other:?}"),
        }
        assert!(parse("x_i $ 2").is_err());
        assert!(parse("sin x_i").is_err());
        assert!(parse("").is_err());
        assert!(parse("x_i x_j").is_err());
    }

    #[test]
    fn printing_round_trips_awkward_shapes() {
        let cases = [
            "x_i - (x_j - 1)",
            "x_i / (x_j * 2)",
            "-(0.5)",
            "-(-0.5)",
            "--x_i",
            "(-0.25) * x_i",
            "x_i * -x_j",
            "sigmoid(-(x_i + x_j))",
            "1e-12 + 1e300",
        ];
        for src in cases {
            let e = parse(src).unwrap();
            let printed = e.to_string();
            assert_eq!(parse(&printed).unwrap(), e, "{src} printed as {printed}");
        }
    }
}
