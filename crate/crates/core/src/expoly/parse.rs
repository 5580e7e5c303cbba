//! Parser for kernel expressions such as `"t^2*exp(0.5*t)*cos(2*t)"`.
//!
//! Grammar:
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := '-' factor | number | 'pi' | 't' ('^' integer)?
//!         | ('exp' | 'cos' | 'sin') '(' expr ')' | '(' expr ')'
//! ```
//!
//! Arguments of `exp`, `cos` and `sin` must be affine in `t`; divisors must
//! be nonzero constants.

use alloc::string::{String, ToString};

#[allow(unused_imports)]
use num_traits::Float;

use super::{ExpPolyFn, Phase, Term};
use crate::error::{Error, Result};

pub fn parse(input: &str) -> Result<ExpPolyFn> {
    let mut p = Parser { src: input.as_bytes(), pos: 0 };
    let f = p.expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.error("unexpected trailing input"));
    }
    Ok(f)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, message: &str) -> Error {
        Error::Parse { position: self.pos, message: String::from(message) }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<ExpPolyFn> {
        let mut acc = self.term()?;
        loop {
            if self.eat(b'+') {
                acc = acc.add(&self.term()?);
            } else if self.eat(b'-') {
                acc = acc.sub(&self.term()?);
            } else {
                return Ok(acc);
            }
        }
    }

    fn term(&mut self) -> Result<ExpPolyFn> {
        let mut acc = self.factor()?;
        loop {
            if self.eat(b'*') {
                acc = acc.mul(&self.factor()?);
            } else if self.eat(b'/') {
                self.skip_ws();
                let at = self.pos;
                let d = self.factor()?;
                match affine_parts(&d) {
                    Some((c, l)) if l == 0.0 && c != 0.0 => acc = acc.scale(1.0 / c),
                    _ => return Err(Error::Parse { position: at, message: "divisor must be a nonzero constant".to_string() }),
                }
            } else {
                return Ok(acc);
            }
        }
    }

    fn factor(&mut self) -> Result<ExpPolyFn> {
        match self.peek() {
            None => Err(self.error("unexpected end of input")),
            Some(b'-') => {
                self.pos += 1;
                Ok(self.factor()?.scale(-1.0))
            }
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.error("expected ')'"));
                }
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => Ok(ExpPolyFn::constant(self.number()?)),
            Some(c) if c.is_ascii_alphabetic() => self.identifier(),
            Some(_) => Err(self.error("unexpected character")),
        }
    }

    fn number(&mut self) -> Result<f64> {
        let start = self.pos;
        let s = self.src;
        let mut i = self.pos;
        while i < s.len() && (s[i].is_ascii_digit() || s[i] == b'.') {
            i += 1;
        }
        if i < s.len() && (s[i] == b'e' || s[i] == b'E') {
            let mut j = i + 1;
            if j < s.len() && (s[j] == b'+' || s[j] == b'-') {
                j += 1;
            }
            if j < s.len() && s[j].is_ascii_digit() {
                while j < s.len() && s[j].is_ascii_digit() {
                    j += 1;
                }
                i = j;
            }
        }
        let text = core::str::from_utf8(&s[start..i]).map_err(|_| self.error("invalid number"))?;
        let value: f64 = text.parse().map_err(|_| self.error("invalid number"))?;
        self.pos = i;
        Ok(value)
    }

    fn integer(&mut self) -> Result<u32> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.error("expected integer exponent"));
        }
        let text = core::str::from_utf8(&self.src[start..self.pos]).map_err(|_| self.error("invalid integer"))?;
        text.parse().map_err(|_| Error::Parse { position: start, message: "exponent out of range".to_string() })
    }

    fn identifier(&mut self) -> Result<ExpPolyFn> {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphabetic() {
            self.pos += 1;
        }
        let name = core::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
        match name {
            "t" => {
                let power = if self.eat(b'^') { self.integer()? } else { 1 };
                Ok(ExpPolyFn::monomial(1.0, power))
            }
            "pi" => Ok(ExpPolyFn::constant(core::f64::consts::PI)),
            "exp" | "cos" | "sin" => {
                if !self.eat(b'(') {
                    return Err(self.error("expected '('"));
                }
                let arg_pos = self.pos;
                let arg = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.error("expected ')'"));
                }
                let (c0, c1) = affine_parts(&arg)
                    .ok_or(Error::Parse { position: arg_pos, message: alloc::format!("argument of {name} must be affine in t") })?;
                Ok(match name {
                    "exp" => ExpPolyFn::exp(c1).scale(c0.exp()),
                    "cos" => ExpPolyFn::from_terms(alloc::vec![
                        Term::new(c0.cos(), 0, 0.0, c1, Phase::Cos),
                        Term::new(-c0.sin(), 0, 0.0, c1, Phase::Sin),
                    ]),
                    _ => ExpPolyFn::from_terms(alloc::vec![
                        Term::new(c0.cos(), 0, 0.0, c1, Phase::Sin),
                        Term::new(c0.sin(), 0, 0.0, c1, Phase::Cos),
                    ]),
                })
            }
            _ => Err(Error::Parse { position: start, message: alloc::format!("unknown identifier '{name}'") }),
        }
    }
}

/// Splits `c0 + c1·t` into its coefficients.
fn affine_parts(f: &ExpPolyFn) -> Option<(f64, f64)> {
    let mut c0 = 0.0;
    let mut c1 = 0.0;
    for term in f.terms() {
        if term.rate != 0.0 || term.freq != 0.0 {
            return None;
        }
        match term.power {
            0 => c0 = term.coeff,
            1 => c1 = term.coeff,
            _ => return None,
        }
    }
    Some((c0, c1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_forms() {
        assert_eq!(parse("1").unwrap(), ExpPolyFn::constant(1.0));
        assert_eq!(parse("exp(-1*t)").unwrap(), ExpPolyFn::exp(-1.0));
        let f = parse("t^2*exp(0.5*t)*cos(2*t)").unwrap();
        assert_eq!(f.terms(), &[Term::new(1.0, 2, 0.5, 2.0, Phase::Cos)]);
        let g = parse("2*sin(t) + 3*exp(-t) - t").unwrap();
        assert_eq!(g.terms().len(), 3);
        assert_eq!(parse("t*exp(-t/2)").unwrap().terms(), &[Term::new(1.0, 1, -0.5, 0.0, Phase::Cos)]);
    }

    #[test]
    fn reports_position() {
        match parse("1 + exp(-t") {
            Err(Error::Parse { position, .. }) => assert_eq!(position, 10),
            other => panic!("unexpected {other:?}"),
        }
        match parse("1 + foo(t)") {
            Err(Error::Parse { position, .. }) => assert_eq!(position, 4),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse("exp(t^2)"), Err(Error::Parse { position: 4, .. })));
        assert!(matches!(parse("1 2"), Err(Error::Parse { position: 2, .. })));
        assert!(matches!(parse("1/t"), Err(Error::Parse { position: 2, .. })));
        assert!(matches!(parse("1/(2-2)"), Err(Error::Parse { position: 2, .. })));
    }

    #[test]
    fn canonical_printer_round_trips() {
        for src in ["1", "exp(-1*t)", "t^2*exp(0.5*t)*cos(2*t)", "sin(pi*t) - 0.25*t*exp(-0.5*t)", "0"] {
            let f = parse(src).unwrap();
            let printed = f.to_expr_string();
            assert_eq!(parse(&printed).unwrap(), f, "{src} -> {printed}");
        }
    }
}
