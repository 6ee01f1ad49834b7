//! Parser for polynomial expressions such as `-(x1 + e1)*(x2 + e2)*w + 3*x3^2`.
//!
//! Grammar:
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary ('*' unary)*
//! unary  := '-' unary | '+' unary | power
//! power  := atom ('^' integer)?
//! atom   := number | variable | '(' expr ')'
//! ```
//!
//! Variables are `x1..xn`, `e1..en` and `w`. Products are expanded eagerly, so the
//! result is always a flat sum of monomials.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

const MAX_EXPONENT: u32 = 32;
const MAX_TERMS: usize = 20_000;
const MAX_DEPTH: usize = 96;

/// Which variable names an expression may reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarSpace {
    pub n: usize,
    pub allow_e: bool,
    pub allow_w: bool,
}

impl VarSpace {
    pub fn state(n: usize) -> Self {
        Self { n, allow_e: false, allow_w: false }
    }

    pub fn closed_loop(n: usize) -> Self {
        Self { n, allow_e: true, allow_w: true }
    }

    /// Total number of exponent slots: `x` block, `e` block, then `w`.
    pub fn slots(&self) -> usize {
        2 * self.n + 1
    }
}

/// Polynomial in expanded form; keys are exponent vectors laid out as `[x.., e.., w]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparsePoly {
    pub terms: BTreeMap<Vec<u32>, f64>,
}

impl SparsePoly {
    fn constant(slots: usize, value: f64) -> Self {
        let mut terms = BTreeMap::new();
        if value != 0.0 {
            terms.insert(vec![0; slots], value);
        }
        Self { terms }
    }

    fn variable(slots: usize, index: usize) -> Self {
        let mut exps = vec![0; slots];
        exps[index] = 1;
        let mut terms = BTreeMap::new();
        terms.insert(exps, 1.0);
        Self { terms }
    }

    fn add_assign(&mut self, other: &SparsePoly, sign: f64) -> Result<()> {
        for (k, v) in &other.terms {
            let entry = self.terms.entry(k.clone()).or_insert(0.0);
            *entry += sign * v;
            if *entry == 0.0 {
                self.terms.remove(k);
            }
        }
        check_size(self.terms.len())
    }

    fn mul(&self, other: &SparsePoly) -> Result<SparsePoly> {
        check_size(self.terms.len().saturating_mul(other.terms.len()))?;
        let mut out: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
        for (ka, va) in &self.terms {
            for (kb, vb) in &other.terms {
                let mut k = Vec::with_capacity(ka.len());
                for (a, b) in ka.iter().zip(kb) {
                    let s = a + b;
                    if s > MAX_EXPONENT {
                        return Err(parse_err(0, "exponent too large"));
                    }
                    k.push(s);
                }
                *out.entry(k).or_insert(0.0) += va * vb;
            }
        }
        out.retain(|_, v| *v != 0.0);
        Ok(SparsePoly { terms: out })
    }

    fn scale(&mut self, factor: f64) {
        for v in self.terms.values_mut() {
            *v *= factor;
        }
        self.terms.retain(|_, v| *v != 0.0);
    }
}

fn check_size(len: usize) -> Result<()> {
    if len > MAX_TERMS {
        Err(parse_err(0, "expression expands to too many terms"))
    } else {
        Ok(())
    }
}

fn parse_err(pos: usize, msg: &str) -> Error {
    Error::Parse { pos, msg: msg.to_string() }
}

/// Parse and expand a polynomial expression over the given variable space.
pub fn parse_poly_expr(input: &str, vars: VarSpace) -> Result<SparsePoly> {
    let mut p = Parser { src: input.as_bytes(), pos: 0, vars, depth: 0 };
    let poly = p.expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(parse_err(p.pos, "unexpected trailing input"));
    }
    if poly.terms.values().any(|c| !c.is_finite()) {
        return Err(parse_err(0, "non-finite coefficient"));
    }
    Ok(poly)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    vars: VarSpace,
    depth: usize,
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn enter(&mut self) -> Result<()> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            Err(parse_err(self.pos, "expression nested too deeply"))
        } else {
            Ok(())
        }
    }

    fn expr(&mut self) -> Result<SparsePoly> {
        self.enter()?;
        let mut acc = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    acc.add_assign(&rhs, 1.0)?;
                }
                Some(b'-') => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    acc.add_assign(&rhs, -1.0)?;
                }
                _ => break,
            }
        }
        self.depth -= 1;
        Ok(acc)
    }

    fn term(&mut self) -> Result<SparsePoly> {
        let mut acc = self.unary()?;
        while self.peek() == Some(b'*') {
            self.pos += 1;
            let rhs = self.unary()?;
            acc = acc.mul(&rhs)?;
        }
        Ok(acc)
    }

    fn unary(&mut self) -> Result<SparsePoly> {
        self.enter()?;
        let out = match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                let mut p = self.unary()?;
                p.scale(-1.0);
                p
            }
            Some(b'+') => {
                self.pos += 1;
                self.unary()?
            }
            _ => self.power()?,
        };
        self.depth -= 1;
        Ok(out)
    }

    fn power(&mut self) -> Result<SparsePoly> {
        let base = self.atom()?;
        if self.peek() != Some(b'^') {
            return Ok(base);
        }
        self.pos += 1;
        self.skip_ws();
        let start = self.pos;
        let k = self.integer()?;
        if k > MAX_EXPONENT {
            return Err(parse_err(start, "exponent too large"));
        }
        let mut out = SparsePoly::constant(self.vars.slots(), 1.0);
        for _ in 0..k {
            out = out.mul(&base)?;
        }
        Ok(out)
    }

    fn integer(&mut self) -> Result<u32> {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(parse_err(start, "expected integer"));
        }
        std::str::from_utf8(&self.src[start..self.pos])
            .ok()
            .and_then(|s| s.parse::<u32>().ok())
            .ok_or_else(|| parse_err(start, "integer out of range"))
    }

    fn atom(&mut self) -> Result<SparsePoly> {
        let slots = self.vars.slots();
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(parse_err(self.pos, "expected ')'"));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => {
                let v = self.number()?;
                Ok(SparsePoly::constant(slots, v))
            }
            Some(c) if c.is_ascii_alphabetic() => {
                let idx = self.variable()?;
                Ok(SparsePoly::variable(slots, idx))
            }
            Some(_) => Err(parse_err(self.pos, "unexpected character")),
            None => Err(parse_err(self.pos, "unexpected end of input")),
        }
    }

    fn number(&mut self) -> Result<f64> {
        let start = self.pos;
        let bytes = self.src;
        let mut i = self.pos;
        while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
            i += 1;
        }
        if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
            // Only an exponent if followed by [+-]?digit; otherwise `e` starts a variable
            // and the expression is malformed anyway (would need '*').
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
        self.pos = i;
        std::str::from_utf8(&bytes[start..i])
            .ok()
            .and_then(|s| s.parse::<f64>().ok())
            .filter(|v| v.is_finite())
            .ok_or_else(|| parse_err(start, "invalid number"))
    }

    fn variable(&mut self) -> Result<usize> {
        let start = self.pos;
        let kind = self.src[self.pos];
        self.pos += 1;
        let vars = self.vars;
        match kind {
            b'w' => {
                if !vars.allow_w {
                    return Err(parse_err(start, "variable w not allowed here"));
                }
                Ok(2 * vars.n)
            }
            b'x' | b'e' => {
                if kind == b'e' && !vars.allow_e {
                    return Err(parse_err(start, "error variables not allowed here"));
                }
                let k = self.integer()? as usize;
                if k == 0 || k > vars.n {
                    return Err(parse_err(start, "variable index out of range"));
                }
                Ok(if kind == b'x' { k - 1 } else { vars.n + k - 1 })
            }
            _ => Err(parse_err(start, "unknown variable")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coeff(p: &SparsePoly, exps: &[u32]) -> f64 {
        p.terms.get(exps).copied().unwrap_or(0.0)
    }

    #[test]
    fn expands_products() {
        let p = parse_poly_expr("(x1 + e1)*(x1 - e1)", VarSpace::closed_loop(1)).unwrap();
        assert_eq!(coeff(&p, &[2, 0, 0]), 1.0);
        assert_eq!(coeff(&p, &[0, 2, 0]), -1.0);
        assert_eq!(p.terms.len(), 2);
    }

    #[test]
    fn powers_and_scientific_notation() {
        let p = parse_poly_expr("1.5e2*x2^3 - 2", VarSpace::state(2)).unwrap();
        assert_eq!(coeff(&p, &[0, 3, 0, 0, 0]), 150.0);
        assert_eq!(coeff(&p, &[0, 0, 0, 0, 0]), -2.0);
    }

    #[test]
    fn rejects_bad_input() {
        let vs = VarSpace::state(2);
        assert!(parse_poly_expr("x3", vs).is_err());
        assert!(parse_poly_expr("e1", vs).is_err());
        assert!(parse_poly_expr("x1 +", vs).is_err());
        assert!(parse_poly_expr("(x1", vs).is_err());
        assert!(parse_poly_expr("x1^99", vs).is_err());
        assert!(parse_poly_expr("x1 x2", vs).is_err());
        assert!(parse_poly_expr("((((((((((((((((((((((((((((((((((((((((((((((((((((((((((((((((((((((((((((((((((((((((((((((((((((x1))))))))))))))))))))))))))))))))))))))))))))))))))))))))))))))))))))))))))))))))))))))))))))))))))))", vs).is_err());
    }

    #[test]
    fn cancellation_removes_terms() {
        let p = parse_poly_expr("x1*x2 - x2*x1", VarSpace::state(2)).unwrap();
        assert!(p.terms.is_empty());
    }
}
