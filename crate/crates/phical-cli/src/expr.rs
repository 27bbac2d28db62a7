//! Rational-expression input syntax: variables x, z, x1, x2, t, u, the
//! parameter q, rational constants, and + - * / ^ with integer exponents.

use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;

use phical::scalars::Scalar;
use phical::series::{LaurentSeries, MPoly, RationalExpr};

pub const VARS: [&str; 6] = ["x", "z", "x1", "x2", "t", "u"];

#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    pub kind: ExprKind,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprKind {
    Int(BigInt),
    Var(String),
    Q,
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "parse error at byte {}: {}", self.offset, self.message)
    }
}

impl std::error::Error for ParseError {}

fn err<T>(offset: usize, message: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError {
        offset,
        message: message.into(),
    })
}

struct Parser<'a> {
    text: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.text.len() && self.text[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.text.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    let off = self.pos;
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = Expr {
                        kind: ExprKind::Add(Box::new(lhs), Box::new(rhs)),
                        offset: off,
                    };
                }
                Some(b'-') => {
                    let off = self.pos;
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = Expr {
                        kind: ExprKind::Sub(Box::new(lhs), Box::new(rhs)),
                        offset: off,
                    };
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    let off = self.pos;
                    self.pos += 1;
                    let rhs = self.factor()?;
                    lhs = Expr {
                        kind: ExprKind::Mul(Box::new(lhs), Box::new(rhs)),
                        offset: off,
                    };
                }
                Some(b'/') => {
                    let off = self.pos;
                    self.pos += 1;
                    let rhs = self.factor()?;
                    lhs = Expr {
                        kind: ExprKind::Div(Box::new(lhs), Box::new(rhs)),
                        offset: off,
                    };
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Some(b'-') => {
                let off = self.pos;
                self.pos += 1;
                let inner = self.factor()?;
                Ok(Expr {
                    kind: ExprKind::Neg(Box::new(inner)),
                    offset: off,
                })
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            let off = self.pos;
            self.pos += 1;
            let e = self.int_exponent(off)?;
            return Ok(Expr {
                kind: ExprKind::Pow(Box::new(base), e),
                offset: off,
            });
        }
        Ok(base)
    }

    fn int_exponent(&mut self, op_off: usize) -> Result<i64, ParseError> {
        self.skip_ws();
        let mut sign = 1i64;
        if self.text.get(self.pos) == Some(&b'-') {
            sign = -1;
            self.pos += 1;
        }
        let start = self.pos;
        while self.pos < self.text.len() && self.text[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return err(op_off + 1, "expected an integer exponent after '^'");
        }
        let digits = std::str::from_utf8(&self.text[start..self.pos]).unwrap();
        match digits.parse::<i64>() {
            Ok(v) => Ok(sign * v),
            Err(_) => err(start, "exponent out of range"),
        }
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            None => err(self.pos, "unexpected end of input"),
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if self.peek() != Some(b')') {
                    return err(self.pos, "expected ')'");
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() => {
                let start = self.pos;
                while self.pos < self.text.len() && self.text[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
                let digits = std::str::from_utf8(&self.text[start..self.pos]).unwrap();
                Ok(Expr {
                    kind: ExprKind::Int(digits.parse().unwrap()),
                    offset: start,
                })
            }
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.pos < self.text.len()
                    && (self.text[self.pos].is_ascii_alphanumeric())
                {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.text[start..self.pos]).unwrap();
                if name == "q" {
                    return Ok(Expr {
                        kind: ExprKind::Q,
                        offset: start,
                    });
                }
                if VARS.contains(&name) {
                    return Ok(Expr {
                        kind: ExprKind::Var(name.to_string()),
                        offset: start,
                    });
                }
                err(start, format!("unknown symbol '{name}'"))
            }
            Some(c) => err(self.pos, format!("unexpected character '{}'", c as char)),
        }
    }
}

pub fn parse_expr(text: &str) -> Result<Expr, ParseError> {
    if text.trim().is_empty() {
        return err(0, "empty expression");
    }
    let mut p = Parser {
        text: text.as_bytes(),
        pos: 0,
    };
    let e = p.expr()?;
    if p.peek().is_some() {
        return err(p.pos, "trailing input");
    }
    Ok(e)
}

impl Expr {
    fn precedence(&self) -> u8 {
        match self.kind {
            ExprKind::Add(..) | ExprKind::Sub(..) => 1,
            ExprKind::Mul(..) | ExprKind::Div(..) => 2,
            ExprKind::Neg(..) => 3,
            ExprKind::Pow(..) => 4,
            _ => 5,
        }
    }

    /// Variables of the fixed universe that occur, in canonical order.
    pub fn vars(&self) -> Vec<String> {
        let mut seen = vec![false; VARS.len()];
        self.collect_vars(&mut seen);
        VARS.iter()
            .zip(seen)
            .filter(|(_, s)| *s)
            .map(|(v, _)| v.to_string())
            .collect()
    }

    fn collect_vars(&self, seen: &mut [bool]) {
        match &self.kind {
            ExprKind::Var(v) => {
                let i = VARS.iter().position(|w| w == v).unwrap();
                seen[i] = true;
            }
            ExprKind::Neg(a) | ExprKind::Pow(a, _) => a.collect_vars(seen),
            ExprKind::Add(a, b)
            | ExprKind::Sub(a, b)
            | ExprKind::Mul(a, b)
            | ExprKind::Div(a, b) => {
                a.collect_vars(seen);
                b.collect_vars(seen);
            }
            _ => {}
        }
    }

    /// Evaluate as a rational function num/den over the given variables.
    pub fn eval(&self, vars: &[String]) -> Result<(MPoly, MPoly), ParseError> {
        let vv = vars.to_vec();
        let one = || MPoly::constant(vv.clone(), Scalar::one());
        match &self.kind {
            ExprKind::Int(n) => Ok((
                MPoly::constant(
                    vv.clone(),
                    Scalar::from_rat(BigRational::from_integer(n.clone())),
                ),
                one(),
            )),
            ExprKind::Q => Ok((MPoly::constant(vv.clone(), Scalar::q()), one())),
            ExprKind::Var(v) => Ok((MPoly::var(vv.clone(), v), one())),
            ExprKind::Neg(a) => {
                let (n, d) = a.eval(vars)?;
                Ok((n.neg(), d))
            }
            ExprKind::Add(a, b) => {
                let (na, da) = a.eval(vars)?;
                let (nb, db) = b.eval(vars)?;
                Ok((na.mul(&db).add(&nb.mul(&da)), da.mul(&db)))
            }
            ExprKind::Sub(a, b) => {
                let (na, da) = a.eval(vars)?;
                let (nb, db) = b.eval(vars)?;
                Ok((na.mul(&db).sub(&nb.mul(&da)), da.mul(&db)))
            }
            ExprKind::Mul(a, b) => {
                let (na, da) = a.eval(vars)?;
                let (nb, db) = b.eval(vars)?;
                Ok((na.mul(&nb), da.mul(&db)))
            }
            ExprKind::Div(a, b) => {
                let (na, da) = a.eval(vars)?;
                let (nb, db) = b.eval(vars)?;
                if nb.is_zero() {
                    return err(b.offset, "division by zero");
                }
                Ok((na.mul(&db), da.mul(&nb)))
            }
            ExprKind::Pow(a, e) => {
                let (na, da) = a.eval(vars)?;
                let mut num = one();
                let mut den = one();
                for _ in 0..e.unsigned_abs() {
                    num = num.mul(&na);
                    den = den.mul(&da);
                }
                if *e < 0 {
                    if na.is_zero() {
                        return err(a.offset, "zero raised to a negative power");
                    }
                    std::mem::swap(&mut num, &mut den);
                }
                Ok((num, den))
            }
        }
    }

    /// Evaluate as a rational expression in the variables that occur.
    pub fn to_rational(&self) -> Result<RationalExpr, ParseError> {
        let vars = self.vars();
        let (num, den) = self.eval(&vars)?;
        RationalExpr::new(num, den).map_err(|_| ParseError {
            offset: self.offset,
            message: "division by zero".into(),
        })
    }

    /// Evaluate as an exact Laurent polynomial in the single variable `var`;
    /// the denominator must reduce to a monomial.
    pub fn to_laurent(&self, var: &str) -> Result<LaurentSeries, ParseError> {
        let occurring = self.vars();
        if occurring.iter().any(|v| v != var) {
            return err(
                self.offset,
                format!("expected an expression in '{var}' only"),
            );
        }
        let vars = vec![var.to_string()];
        let (num, den) = self.eval(&vars)?;
        let mut den_terms = den.terms();
        let lead = match (den_terms.next(), den_terms.next()) {
            (Some(t), None) => t,
            _ => {
                return err(
                    self.offset,
                    "denominator must be a monomial for a Laurent polynomial",
                )
            }
        };
        let (shift, lead_c) = (lead.0[0], lead.1.clone());
        let inv = lead_c.inv().map_err(|_| ParseError {
            offset: self.offset,
            message: "division by zero".into(),
        })?;
        let terms: Vec<(i64, Scalar)> = num
            .terms()
            .map(|(e, c)| (e[0] - shift, c.mul(&inv)))
            .collect();
        Ok(LaurentSeries::from_terms(var, terms, phical::series::EXACT))
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let paren = |f: &mut fmt::Formatter<'_>, e: &Expr, min: u8| -> fmt::Result {
            if e.precedence() < min {
                write!(f, "({e})")
            } else {
                write!(f, "{e}")
            }
        };
        match &self.kind {
            ExprKind::Int(n) => write!(f, "{n}"),
            ExprKind::Q => write!(f, "q"),
            ExprKind::Var(v) => write!(f, "{v}"),
            ExprKind::Neg(a) => {
                write!(f, "-")?;
                paren(f, a, 3)
            }
            ExprKind::Add(a, b) => {
                paren(f, a, 1)?;
                write!(f, " + ")?;
                paren(f, b, 2)
            }
            ExprKind::Sub(a, b) => {
                paren(f, a, 1)?;
                write!(f, " - ")?;
                paren(f, b, 2)
            }
            ExprKind::Mul(a, b) => {
                paren(f, a, 2)?;
                write!(f, "*")?;
                paren(f, b, 3)
            }
            ExprKind::Div(a, b) => {
                paren(f, a, 2)?;
                write!(f, "/")?;
                paren(f, b, 5)
            }
            ExprKind::Pow(a, e) => {
                paren(f, a, 5)?;
                if *e < 0 {
                    write!(f, "^-{}", -e)
                } else {
                    write!(f, "^{e}")
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn print_parse_round_trip_is_identity() {
        let canonical = [
            "x",
            "q",
            "3/4",
            "x + z",
            "x - q*z",
            "(x - q*z)/(q*x - z)",
            "x^-2",
            "x1*x2^3 + t/u",
            "-(x + z)",
            "2*x^2 - 1",
        ];
        for text in canonical {
            let ast = parse_expr(text).unwrap();
            let printed = ast.to_string();
            let re = parse_expr(&printed).unwrap();
            assert_eq!(re.to_string(), printed, "from {text}");
        }
    }

    #[test]
    fn error_offsets_point_at_the_problem() {
        assert_eq!(parse_expr("x + ").unwrap_err().offset, 4);
        assert_eq!(parse_expr("x ^ y").unwrap_err().offset, 3);
        assert_eq!(parse_expr("foo").unwrap_err().offset, 0);
        assert_eq!(parse_expr("x + bar").unwrap_err().offset, 4);
    }

    #[test]
    fn division_by_zero_flags_the_divisor() {
        let ast = parse_expr("x/(z - z)").unwrap();
        let err = ast.to_rational().unwrap_err();
        assert!(err.message.contains("division by zero"));
    }

    #[test]
    fn laurent_requires_monomial_denominator() {
        let ast = parse_expr("x/(1 + x)").unwrap();
        assert!(ast.to_laurent("x").is_err());
        let ok = parse_expr("(1 + x^3)/x^2").unwrap().to_laurent("x").unwrap();
        assert_eq!(ok.coeff(-2), Scalar::one());
        assert_eq!(ok.coeff(1), Scalar::one());
    }
}
