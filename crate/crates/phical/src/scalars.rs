//! Exact coefficient arithmetic: arbitrary-precision rationals and rational
//! functions in the deformation parameter `q`.
//!
//! A [`Scalar`] is a quotient of two polynomials in `q` over the rationals,
//! kept in a unique canonical form (reduced fraction, monic denominator) so
//! that equality is plain coefficient comparison.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Exact rational number.
pub type Rat = BigRational;

pub fn rat_int(n: i64) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

pub fn rat(n: i64, d: i64) -> Rat {
    Rat::new(BigInt::from(n), BigInt::from(d))
}

/// Dense polynomial in `q` with rational coefficients.
///
/// Invariant: the coefficient vector has no trailing zeros, so `deg` is the
/// true degree (`None` for the zero polynomial).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Poly {
    coeffs: Vec<Rat>,
}

impl Poly {
    pub fn zero() -> Self {
        Poly { coeffs: Vec::new() }
    }

    pub fn one() -> Self {
        Poly::constant(Rat::one())
    }

    pub fn constant(c: Rat) -> Self {
        let mut p = Poly { coeffs: vec![c] };
        p.trim();
        p
    }

    /// The monomial `c * q^k`.
    pub fn monomial(c: Rat, k: usize) -> Self {
        if c.is_zero() {
            return Poly::zero();
        }
        let mut coeffs = vec![Rat::zero(); k + 1];
        coeffs[k] = c;
        Poly { coeffs }
    }

    pub fn q() -> Self {
        Poly::monomial(Rat::one(), 1)
    }

    pub fn from_coeffs(coeffs: Vec<Rat>) -> Self {
        let mut p = Poly { coeffs };
        p.trim();
        p
    }

    fn trim(&mut self) {
        while self.coeffs.last().map_or(false, |c| c.is_zero()) {
            self.coeffs.pop();
        }
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn deg(&self) -> Option<usize> {
        if self.is_zero() {
            None
        } else {
            Some(self.coeffs.len() - 1)
        }
    }

    pub fn coeff(&self, k: usize) -> Rat {
        self.coeffs.get(k).cloned().unwrap_or_else(Rat::zero)
    }

    pub fn leading(&self) -> Rat {
        self.coeffs.last().cloned().unwrap_or_else(Rat::zero)
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let n = self.coeffs.len().max(other.coeffs.len());
        let mut coeffs = Vec::with_capacity(n);
        for k in 0..n {
            coeffs.push(self.coeff(k) + other.coeff(k));
        }
        Poly::from_coeffs(coeffs)
    }

    pub fn neg(&self) -> Poly {
        Poly {
            coeffs: self.coeffs.iter().map(|c| -c.clone()).collect(),
        }
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        if self.is_zero() || other.is_zero() {
            return Poly::zero();
        }
        let mut coeffs = vec![Rat::zero(); self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            for (j, b) in other.coeffs.iter().enumerate() {
                coeffs[i + j] += a * b;
            }
        }
        Poly::from_coeffs(coeffs)
    }

    pub fn scale(&self, c: &Rat) -> Poly {
        if c.is_zero() {
            return Poly::zero();
        }
        Poly {
            coeffs: self.coeffs.iter().map(|a| a * c).collect(),
        }
    }

    /// Euclidean division: returns `(quotient, remainder)`.
    pub fn divrem(&self, den: &Poly) -> (Poly, Poly) {
        assert!(!den.is_zero(), "polynomial division by zero");
        let dd = den.deg().unwrap();
        let lead = den.leading();
        let mut rem = self.clone();
        let mut quot = Poly::zero();
        while let Some(rd) = rem.deg() {
            if rd < dd {
                break;
            }
            let c = rem.leading() / lead.clone();
            let t = Poly::monomial(c, rd - dd);
            quot = quot.add(&t);
            rem = rem.sub(&t.mul(den));
        }
        (quot, rem)
    }

    /// Monic greatest common divisor, via a primitive pseudo-remainder
    /// sequence over the integers (rational-coefficient Euclid explodes in
    /// bit size on inputs of moderate degree).
    pub fn gcd(&self, other: &Poly) -> Poly {
        if self.is_zero() {
            return if other.is_zero() {
                Poly::zero()
            } else {
                let lead = other.leading();
                other.scale(&(Rat::one() / lead))
            };
        }
        if other.is_zero() {
            let lead = self.leading();
            return self.scale(&(Rat::one() / lead));
        }
        if self.deg() == Some(0) || other.deg() == Some(0) {
            return Poly::one();
        }
        let mut a = int_primitive(self);
        let mut b = int_primitive(other);
        if a.len() < b.len() {
            std::mem::swap(&mut a, &mut b);
        }
        while b.len() > 1 {
            let r = int_prem(&a, &b);
            a = b;
            b = int_make_primitive(r);
        }
        if !b.is_empty() {
            // a nonzero constant remainder: coprime
            return Poly::one();
        }
        let lead = a.last().expect("nonzero").clone();
        Poly::from_coeffs(
            a.iter()
                .map(|c| Rat::new(c.clone(), lead.clone()))
                .collect(),
        )
    }

    pub fn eval(&self, q0: &Rat) -> Rat {
        let mut acc = Rat::zero();
        for c in self.coeffs.iter().rev() {
            acc = acc * q0 + c;
        }
        acc
    }
}

// dense integer polynomials (no trailing zeros) backing the gcd

fn int_trim(mut v: Vec<BigInt>) -> Vec<BigInt> {
    while v.last().map_or(false, |c| c.is_zero()) {
        v.pop();
    }
    v
}

fn int_make_primitive(v: Vec<BigInt>) -> Vec<BigInt> {
    let v = int_trim(v);
    let mut g = BigInt::zero();
    for c in &v {
        g = num_integer::Integer::gcd(&g, c);
    }
    if g.is_zero() || g.is_one() {
        return v;
    }
    v.into_iter().map(|c| c / &g).collect()
}

fn int_primitive(p: &Poly) -> Vec<BigInt> {
    let mut lcm = BigInt::one();
    for c in &p.coeffs {
        lcm = num_integer::Integer::lcm(&lcm, c.denom());
    }
    let v: Vec<BigInt> = p
        .coeffs
        .iter()
        .map(|c| c.numer() * (&lcm / c.denom()))
        .collect();
    int_make_primitive(v)
}

/// Pseudo-remainder of `a` by `b` (nonconstant): some integer multiple of a
/// times x-shifts of b cancel the leading terms until deg < deg b.
fn int_prem(a: &[BigInt], b: &[BigInt]) -> Vec<BigInt> {
    let db = b.len() - 1;
    let lb = b.last().expect("nonzero divisor").clone();
    let mut r = a.to_vec();
    while r.len() > db {
        let lr = r.last().expect("trimmed").clone();
        for c in r.iter_mut() {
            *c *= &lb;
        }
        let shift = r.len() - 1 - db;
        for (i, bc) in b.iter().enumerate() {
            r[shift + i] -= &lr * bc;
        }
        r = int_trim(r);
        if r.is_empty() {
            break;
        }
    }
    r
}

fn fmt_rat(c: &Rat) -> String {
    if c.is_integer() {
        c.numer().to_string()
    } else {
        format!("{}/{}", c.numer(), c.denom())
    }
}

impl fmt::Display for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let mut first = true;
        for k in (0..self.coeffs.len()).rev() {
            let c = &self.coeffs[k];
            if c.is_zero() {
                continue;
            }
            let mag = c.abs();
            if first {
                if c.is_negative() {
                    write!(f, "-")?;
                }
                first = false;
            } else if c.is_negative() {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            let coeff_part = if mag.is_one() && k > 0 {
                None
            } else {
                Some(fmt_rat(&mag))
            };
            match (coeff_part, k) {
                (Some(c), 0) => write!(f, "{c}")?,
                (Some(c), 1) => write!(f, "{c}*q")?,
                (Some(c), k) => write!(f, "{c}*q^{k}")?,
                (None, 1) => write!(f, "q")?,
                (None, k) => write!(f, "q^{k}")?,
            }
        }
        Ok(())
    }
}

/// Element of the field Q(q) in canonical form.
///
/// Canonical form: `gcd(num, den) = 1` and `den` monic. This makes derived
/// equality semantic equality.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Scalar {
    num: Poly,
    den: Poly,
}

impl Scalar {
    pub fn new(num: Poly, den: Poly) -> Result<Self> {
        if den.is_zero() {
            return Err(Error::DivisionByZero);
        }
        let mut s = Scalar { num, den };
        s.canonicalize();
        Ok(s)
    }

    fn canonicalize(&mut self) {
        if self.num.is_zero() {
            self.den = Poly::one();
            return;
        }
        if self.den.deg() != Some(0) {
            let g = self.num.gcd(&self.den);
            if g.deg().unwrap_or(0) > 0 {
                self.num = self.num.divrem(&g).0;
                self.den = self.den.divrem(&g).0;
            }
        }
        let lead = self.den.leading();
        if !lead.is_one() {
            let inv = Rat::one() / lead;
            self.num = self.num.scale(&inv);
            self.den = self.den.scale(&inv);
        }
    }

    pub fn zero() -> Self {
        Scalar {
            num: Poly::zero(),
            den: Poly::one(),
        }
    }

    pub fn one() -> Self {
        Scalar {
            num: Poly::one(),
            den: Poly::one(),
        }
    }

    pub fn q() -> Self {
        Scalar {
            num: Poly::q(),
            den: Poly::one(),
        }
    }

    pub fn from_poly(p: Poly) -> Self {
        Scalar {
            num: p,
            den: Poly::one(),
        }
    }

    pub fn from_rat(c: Rat) -> Self {
        Scalar::from_poly(Poly::constant(c))
    }

    pub fn from_int(n: i64) -> Self {
        Scalar::from_rat(rat_int(n))
    }

    pub fn numerator(&self) -> &Poly {
        &self.num
    }

    pub fn denominator(&self) -> &Poly {
        &self.den
    }

    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    pub fn is_one(&self) -> bool {
        self.num == Poly::one() && self.den == Poly::one()
    }

    pub fn add(&self, other: &Scalar) -> Scalar {
        // keep denominator degrees from compounding: work over lcm(d1, d2)
        if self.den == other.den {
            return Scalar::new(self.num.add(&other.num), self.den.clone())
                .expect("nonzero denominator");
        }
        let g = self.den.gcd(&other.den);
        let (d1r, d2r) = if g.deg().unwrap_or(0) > 0 {
            (self.den.divrem(&g).0, other.den.divrem(&g).0)
        } else {
            (self.den.clone(), other.den.clone())
        };
        let num = self.num.mul(&d2r).add(&other.num.mul(&d1r));
        let den = self.den.mul(&d2r);
        Scalar::new(num, den).expect("nonzero denominator")
    }

    pub fn neg(&self) -> Scalar {
        Scalar {
            num: self.num.neg(),
            den: self.den.clone(),
        }
    }

    pub fn sub(&self, other: &Scalar) -> Scalar {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &Scalar) -> Scalar {
        if self.is_zero() || other.is_zero() {
            return Scalar::zero();
        }
        // cross-cancel before multiplying so the final gcd sees small inputs
        let cancel = |n: &Poly, d: &Poly| -> (Poly, Poly) {
            if n.deg() == Some(0) || d.deg() == Some(0) {
                return (n.clone(), d.clone());
            }
            let g = n.gcd(d);
            if g.deg().unwrap_or(0) > 0 {
                (n.divrem(&g).0, d.divrem(&g).0)
            } else {
                (n.clone(), d.clone())
            }
        };
        let (n1, d2) = cancel(&self.num, &other.den);
        let (n2, d1) = cancel(&other.num, &self.den);
        Scalar::new(n1.mul(&n2), d1.mul(&d2)).expect("nonzero denominator")
    }

    pub fn inv(&self) -> Result<Scalar> {
        if self.is_zero() {
            return Err(Error::DivisionByZero);
        }
        Scalar::new(self.den.clone(), self.num.clone())
    }

    pub fn div(&self, other: &Scalar) -> Result<Scalar> {
        Ok(self.mul(&other.inv()?))
    }

    pub fn pow(&self, e: i64) -> Result<Scalar> {
        if e < 0 {
            return self.inv()?.pow(-e);
        }
        let mut acc = Scalar::one();
        let mut base = self.clone();
        let mut e = e as u64;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.mul(&base);
            }
            base = base.mul(&base);
            e >>= 1;
        }
        Ok(acc)
    }

    pub fn scale_rat(&self, c: &Rat) -> Scalar {
        self.mul(&Scalar::from_rat(c.clone()))
    }

    /// Exact specialization of `q` to a rational value.
    pub fn eval(&self, q0: &Rat) -> Result<Rat> {
        let d = self.den.eval(q0);
        if d.is_zero() {
            return Err(Error::PoleAtSpecialization(fmt_rat(q0)));
        }
        Ok(self.num.eval(q0) / d)
    }

    /// True when the scalar is a constant (no `q` dependence).
    pub fn as_rat(&self) -> Option<Rat> {
        if self.den == Poly::one() && self.num.deg().unwrap_or(0) == 0 {
            Some(self.num.coeff(0))
        } else {
            None
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == Poly::one() {
            if self.num.coeffs.iter().filter(|c| !c.is_zero()).count() > 1 {
                write!(f, "({})", self.num)
            } else {
                write!(f, "{}", self.num)
            }
        } else {
            write!(f, "({})/({})", self.num, self.den)
        }
    }
}

impl FromStr for Scalar {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_scalar(s)
    }
}

impl Serialize for Scalar {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Scalar {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

// ---------------------------------------------------------------------------
// Scalar expression parser
//
// Accepts the serialization grammar (`c_k*q^k + ...` over `/`) as well as
// general parenthesized arithmetic in `q`, e.g. "(q+1)/(q-1)" or "-3/2*q^2".

struct Lexer<'a> {
    input: &'a [u8],
    pos: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Int(BigInt),
    Q,
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    End,
}

impl<'a> Lexer<'a> {
    fn new(input: &'a str) -> Self {
        Lexer {
            input: input.as_bytes(),
            pos: 0,
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.input.len() && self.input[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek_tok(&mut self) -> Result<(Tok, usize)> {
        self.skip_ws();
        let start = self.pos;
        if start >= self.input.len() {
            return Ok((Tok::End, start));
        }
        let c = self.input[start];
        let tok = match c {
            b'+' => Tok::Plus,
            b'-' => Tok::Minus,
            b'*' => Tok::Star,
            b'/' => Tok::Slash,
            b'^' => Tok::Caret,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b'q' => Tok::Q,
            b'0'..=b'9' => {
                let mut end = start;
                while end < self.input.len() && self.input[end].is_ascii_digit() {
                    end += 1;
                }
                let text = std::str::from_utf8(&self.input[start..end]).unwrap();
                let n = BigInt::parse_bytes(text.as_bytes(), 10).ok_or(Error::ParseError {
                    offset: start,
                    message: "bad integer literal".into(),
                })?;
                return Ok((Tok::Int(n), end));
            }
            other => {
                return Err(Error::ParseError {
                    offset: start,
                    message: format!("unexpected character '{}'", other as char),
                })
            }
        };
        Ok((tok, start + 1))
    }

    fn next_tok(&mut self) -> Result<Tok> {
        let (tok, end) = self.peek_tok()?;
        if tok != Tok::End {
            self.pos = end;
        }
        Ok(tok)
    }

    fn peek(&mut self) -> Result<Tok> {
        Ok(self.peek_tok()?.0)
    }
}

pub fn parse_scalar(input: &str) -> Result<Scalar> {
    let mut lx = Lexer::new(input);
    if lx.peek()? == Tok::End {
        return Err(Error::ParseError {
            offset: 0,
            message: "empty expression".into(),
        });
    }
    let v = parse_sum(&mut lx)?;
    lx.skip_ws();
    if lx.pos != lx.input.len() {
        return Err(Error::ParseError {
            offset: lx.pos,
            message: "trailing input".into(),
        });
    }
    Ok(v)
}

fn parse_sum(lx: &mut Lexer) -> Result<Scalar> {
    let mut acc = parse_product(lx)?;
    loop {
        match lx.peek()? {
            Tok::Plus => {
                lx.next_tok()?;
                acc = acc.add(&parse_product(lx)?);
            }
            Tok::Minus => {
                lx.next_tok()?;
                acc = acc.sub(&parse_product(lx)?);
            }
            _ => return Ok(acc),
        }
    }
}

fn parse_product(lx: &mut Lexer) -> Result<Scalar> {
    let mut acc = parse_unary(lx)?;
    loop {
        match lx.peek()? {
            Tok::Star => {
                lx.next_tok()?;
                acc = acc.mul(&parse_unary(lx)?);
            }
            Tok::Slash => {
                lx.next_tok()?;
                let pos = lx.pos;
                let rhs = parse_unary(lx)?;
                if rhs.is_zero() {
                    return Err(Error::ParseError {
                        offset: pos,
                        message: "division by zero".into(),
                    });
                }
                acc = acc.div(&rhs)?;
            }
            _ => return Ok(acc),
        }
    }
}

fn parse_unary(lx: &mut Lexer) -> Result<Scalar> {
    match lx.peek()? {
        Tok::Minus => {
            lx.next_tok()?;
            Ok(parse_unary(lx)?.neg())
        }
        Tok::Plus => {
            lx.next_tok()?;
            parse_unary(lx)
        }
        _ => parse_power(lx),
    }
}

fn parse_power(lx: &mut Lexer) -> Result<Scalar> {
    let base = parse_atom(lx)?;
    if lx.peek()? == Tok::Caret {
        lx.next_tok()?;
        let neg = if lx.peek()? == Tok::Minus {
            lx.next_tok()?;
            true
        } else {
            false
        };
        let pos = lx.pos;
        match lx.next_tok()? {
            Tok::Int(n) => {
                let e: i64 = n.try_into().map_err(|_| Error::ParseError {
                    offset: pos,
                    message: "exponent out of range".into(),
                })?;
                let e = if neg { -e } else { e };
                if e < 0 && base.is_zero() {
                    return Err(Error::ParseError {
                        offset: pos,
                        message: "division by zero".into(),
                    });
                }
                base.pow(e)
            }
            _ => Err(Error::ParseError {
                offset: pos,
                message: "expected integer exponent".into(),
            }),
        }
    } else {
        Ok(base)
    }
}

fn parse_atom(lx: &mut Lexer) -> Result<Scalar> {
    let pos = lx.pos;
    match lx.next_tok()? {
        Tok::Int(n) => Ok(Scalar::from_rat(Rat::from_integer(n))),
        Tok::Q => Ok(Scalar::q()),
        Tok::LParen => {
            let v = parse_sum(lx)?;
            let pos = lx.pos;
            match lx.next_tok()? {
                Tok::RParen => Ok(v),
                _ => Err(Error::ParseError {
                    offset: pos,
                    message: "expected ')'".into(),
                }),
            }
        }
        t => Err(Error::ParseError {
            offset: pos,
            message: format!("unexpected token {t:?}"),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(text: &str) -> Scalar {
        text.parse().unwrap()
    }

    #[test]
    fn canonical_cancellation() {
        // (q^2 - 1)/(q - 1) normalizes to q + 1
        assert_eq!(s("(q^2 - 1)/(q - 1)"), s("q + 1"));
    }

    #[test]
    fn inv_of_q() {
        assert_eq!(Scalar::q().inv().unwrap(), s("1/q"));
    }

    #[test]
    fn mul_cancels() {
        assert_eq!(s("(q+1)/(q-1)").mul(&s("q-1")), s("q+1"));
    }

    #[test]
    fn inv_zero_is_error() {
        assert_eq!(Scalar::zero().inv(), Err(Error::DivisionByZero));
    }

    #[test]
    fn eval_simple() {
        assert_eq!(s("q+1").eval(&rat_int(2)).unwrap(), rat_int(3));
        assert_eq!(s("q^3 - q").eval(&rat_int(2)).unwrap(), rat_int(6));
    }

    #[test]
    fn eval_pole() {
        assert!(matches!(
            s("(q+1)/(q-1)").eval(&rat_int(1)),
            Err(Error::PoleAtSpecialization(_))
        ));
    }

    #[test]
    fn display_round_trip() {
        for text in [
            "(q+1)/(q-1)",
            "q^2 - 1",
            "-3/2*q^2 + 1",
            "0",
            "1/q",
            "(2*q^3 - 1/7)/(q^2 + q)",
        ] {
            let v = s(text);
            let printed = v.to_string();
            assert_eq!(printed.parse::<Scalar>().unwrap(), v, "text = {text}");
        }
    }

    #[test]
    fn monic_denominator() {
        let v = s("1/(2*q - 2)");
        assert_eq!(v.denominator().leading(), Rat::one());
        assert_eq!(v, s("(1/2)/(q-1)"));
    }

    #[test]
    fn parse_error_offset() {
        match "q + ".parse::<Scalar>() {
            Err(Error::ParseError { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
