//! Truncated formal series arithmetic: Laurent series, iterated x-z series,
//! bidegree window tables with shape tags, iota expansions, delta-function
//! calculus, log/exp utilities, and substitution x1 = phi(x,z).
//!
//! Truncation metadata is carried in-band and propagated pessimistically:
//! addition keeps `min(hi1, hi2)`, multiplication keeps
//! `min(lo1 + hi2, lo2 + hi1)`. A polynomial value is marked exact with the
//! sentinel [`EXACT`], which is absorbing under these rules.

use std::collections::BTreeMap;
use std::fmt;

use num_traits::{One, Zero};
use serde::ser::SerializeStruct;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::scalars::{rat_int, Rat, Scalar};

/// Truncation order standing for "all coefficients exact".
///
/// Large enough that no real exponent reaches it, small enough that the
/// saturating window arithmetic cannot overflow.
pub const EXACT: i64 = i64::MAX / 4;

fn hi_add(a: i64, b: i64) -> i64 {
    if a >= EXACT || b >= EXACT {
        // an exact factor never tightens a truncation order, even when the
        // finite summand is a negative valuation or shift
        EXACT
    } else {
        (a.saturating_add(b)).min(EXACT)
    }
}

/// Generalized binomial coefficient C(n, j) for integer n (possibly negative).
pub fn binom(n: i64, j: u64) -> Rat {
    let mut acc = Rat::one();
    for i in 0..j {
        acc = acc * rat_int(n - i as i64) / rat_int(i as i64 + 1);
    }
    acc
}

pub fn factorial(n: u64) -> Rat {
    let mut acc = Rat::one();
    for i in 1..=n {
        acc = acc * rat_int(i as i64);
    }
    acc
}

// ---------------------------------------------------------------------------
// LaurentSeries

/// Truncated element of F((x)): finitely many known coefficients between a
/// lower bound `lo` and an exclusive truncation order `hi`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaurentSeries {
    var: String,
    lo: i64,
    hi: i64,
    coeffs: BTreeMap<i64, Scalar>,
}

impl LaurentSeries {
    pub fn zero(var: &str) -> Self {
        LaurentSeries {
            var: var.to_string(),
            lo: 0,
            hi: EXACT,
            coeffs: BTreeMap::new(),
        }
    }

    pub fn constant(var: &str, c: Scalar) -> Self {
        Self::monomial(var, c, 0)
    }

    pub fn one(var: &str) -> Self {
        Self::constant(var, Scalar::one())
    }

    /// The series `c * var^k`, exact.
    pub fn monomial(var: &str, c: Scalar, k: i64) -> Self {
        let mut coeffs = BTreeMap::new();
        if !c.is_zero() {
            coeffs.insert(k, c);
        }
        LaurentSeries {
            var: var.to_string(),
            lo: k,
            hi: EXACT,
            coeffs,
        }
    }

    /// The identity series `var^1`.
    pub fn x(var: &str) -> Self {
        Self::monomial(var, Scalar::one(), 1)
    }

    /// Build from explicit terms; `hi` is the exclusive truncation order
    /// (use [`EXACT`] for exact values such as Laurent polynomials).
    pub fn from_terms(var: &str, terms: Vec<(i64, Scalar)>, hi: i64) -> Self {
        let mut coeffs = BTreeMap::new();
        for (k, c) in terms {
            if !c.is_zero() && k < hi {
                let e = coeffs.entry(k).or_insert_with(Scalar::zero);
                *e = e.add(&c);
            }
        }
        coeffs.retain(|_, c: &mut Scalar| !c.is_zero());
        let lo = coeffs.keys().next().copied().unwrap_or(0).min(hi.min(0));
        LaurentSeries {
            var: var.to_string(),
            lo,
            hi,
            coeffs,
        }
    }

    pub fn var(&self) -> &str {
        &self.var
    }

    pub fn lo(&self) -> i64 {
        self.lo
    }

    pub fn hi(&self) -> i64 {
        self.hi
    }

    pub fn is_exact(&self) -> bool {
        self.hi >= EXACT
    }

    pub fn coeff(&self, k: i64) -> Scalar {
        self.coeffs.get(&k).cloned().unwrap_or_else(Scalar::zero)
    }

    pub fn terms(&self) -> impl Iterator<Item = (i64, &Scalar)> {
        self.coeffs.iter().map(|(k, c)| (*k, c))
    }

    pub fn is_zero_on_window(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Lowest exponent carrying a nonzero coefficient, if any.
    pub fn valuation(&self) -> Option<i64> {
        self.coeffs.keys().next().copied()
    }

    fn check_var(&self, other: &LaurentSeries) -> Result<()> {
        if self.var != other.var {
            return Err(Error::VariableMismatch {
                expected: self.var.clone(),
                got: other.var.clone(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &LaurentSeries) -> Result<LaurentSeries> {
        self.check_var(other)?;
        let hi = self.hi.min(other.hi);
        let mut coeffs = self.coeffs.clone();
        for (k, c) in &other.coeffs {
            let e = coeffs.entry(*k).or_insert_with(Scalar::zero);
            *e = e.add(c);
        }
        coeffs.retain(|k, c| *k < hi && !c.is_zero());
        Ok(LaurentSeries {
            var: self.var.clone(),
            lo: self.lo.min(other.lo),
            hi,
            coeffs,
        })
    }

    pub fn neg(&self) -> LaurentSeries {
        LaurentSeries {
            var: self.var.clone(),
            lo: self.lo,
            hi: self.hi,
            coeffs: self.coeffs.iter().map(|(k, c)| (*k, c.neg())).collect(),
        }
    }

    pub fn sub(&self, other: &LaurentSeries) -> Result<LaurentSeries> {
        self.add(&other.neg())
    }

    pub fn scale(&self, c: &Scalar) -> LaurentSeries {
        if c.is_zero() {
            let mut r = LaurentSeries::zero(&self.var);
            r.hi = self.hi;
            r.lo = self.lo;
            return r;
        }
        LaurentSeries {
            var: self.var.clone(),
            lo: self.lo,
            hi: self.hi,
            coeffs: self.coeffs.iter().map(|(k, a)| (*k, a.mul(c))).collect(),
        }
    }

    pub fn mul(&self, other: &LaurentSeries) -> Result<LaurentSeries> {
        self.check_var(other)?;
        // Window bound uses the stored valuation, not the declared lo: stored
        // zeros inside the window are exact, so a factor whose low coefficients
        // cancelled does not drag the product window down with it.
        let va = self.valuation().unwrap_or(self.hi).max(self.lo);
        let vb = other.valuation().unwrap_or(other.hi).max(other.lo);
        let hi = hi_add(va, other.hi).min(hi_add(vb, self.hi));
        let mut coeffs: BTreeMap<i64, Scalar> = BTreeMap::new();
        for (i, a) in &self.coeffs {
            for (j, b) in &other.coeffs {
                let k = i + j;
                if k >= hi {
                    continue;
                }
                let e = coeffs.entry(k).or_insert_with(Scalar::zero);
                *e = e.add(&a.mul(b));
            }
        }
        coeffs.retain(|_, c| !c.is_zero());
        Ok(LaurentSeries {
            var: self.var.clone(),
            lo: self.lo + other.lo,
            hi,
            coeffs,
        })
    }

    /// Multiply by `var^k`.
    pub fn shift(&self, k: i64) -> LaurentSeries {
        LaurentSeries {
            var: self.var.clone(),
            lo: self.lo + k,
            hi: hi_add(self.hi, k),
            coeffs: self.coeffs.iter().map(|(e, c)| (*e + k, c.clone())).collect(),
        }
    }

    /// Restrict the truncation order.
    pub fn truncate(&self, hi: i64) -> LaurentSeries {
        let hi = hi.min(self.hi);
        let mut coeffs = self.coeffs.clone();
        coeffs.retain(|k, _| *k < hi);
        LaurentSeries {
            var: self.var.clone(),
            lo: self.lo,
            hi,
            coeffs,
        }
    }

    /// Formal derivative d/dvar.
    pub fn derivative(&self) -> LaurentSeries {
        let mut coeffs = BTreeMap::new();
        for (k, c) in &self.coeffs {
            if *k != 0 {
                let v = c.scale_rat(&rat_int(*k));
                if !v.is_zero() {
                    coeffs.insert(k - 1, v);
                }
            }
        }
        LaurentSeries {
            var: self.var.clone(),
            lo: self.lo - 1,
            hi: hi_add(self.hi, -1),
            coeffs,
        }
    }

    /// Rename the formal variable.
    pub fn rename(&self, var: &str) -> LaurentSeries {
        LaurentSeries {
            var: var.to_string(),
            lo: self.lo,
            hi: self.hi,
            coeffs: self.coeffs.clone(),
        }
    }

    /// Inverse of a unit of F((x)).
    ///
    /// The result window starts at `-v` (v the valuation) and carries the
    /// same relative precision as the input.
    pub fn invert_unit(&self) -> Result<LaurentSeries> {
        let v = self.valuation().ok_or(Error::DivisionByZero)?;
        let lead = self.coeff(v);
        let lead_inv = lead.inv()?;
        // u = a / (lead * x^v) - 1 has positive valuation
        let u = self.shift(-v).scale(&lead_inv).sub(&LaurentSeries::one(&self.var))?;
        let rel = if self.is_exact() {
            if u.is_zero_on_window() {
                0
            } else {
                // exact input: pick enough terms that the geometric series
                // is exact on the default window; u^n has valuation >= n
                EXACT
            }
        } else {
            self.hi - v
        };
        let mut acc = LaurentSeries::one(&self.var);
        let mut pow = LaurentSeries::one(&self.var);
        let mut n: i64 = 1;
        loop {
            if rel != EXACT && n >= rel {
                break;
            }
            pow = pow.mul(&u)?;
            if pow.is_zero_on_window() {
                break;
            }
            if n % 2 == 1 {
                acc = acc.sub(&pow)?;
            } else {
                acc = acc.add(&pow)?;
            }
            n += 1;
            if n > 10_000 {
                return Err(Error::PrecisionExhausted(
                    "inversion of exact non-polynomial unit".into(),
                ));
            }
        }
        let mut out = acc.scale(&lead_inv).shift(-v);
        if !self.is_exact() {
            out = out.truncate(rel - v);
            out.lo = -v;
        }
        Ok(out)
    }

    /// Coefficient-wise comparison on the intersection of the valid windows.
    pub fn agrees_with(&self, other: &LaurentSeries) -> bool {
        if self.var != other.var {
            return false;
        }
        let hi = self.hi.min(other.hi);
        for k in self.coeffs.keys().chain(other.coeffs.keys()) {
            if *k < hi && self.coeff(*k) != other.coeff(*k) {
                return false;
            }
        }
        true
    }

    /// Specialize every coefficient at `q = q0`.
    pub fn eval_q(&self, q0: &Rat) -> Result<LaurentSeries> {
        let mut coeffs = BTreeMap::new();
        for (k, c) in &self.coeffs {
            let v = c.eval(q0)?;
            if !v.is_zero() {
                coeffs.insert(*k, Scalar::from_rat(v));
            }
        }
        Ok(LaurentSeries {
            var: self.var.clone(),
            lo: self.lo,
            hi: self.hi,
            coeffs,
        })
    }
}

impl fmt::Display for LaurentSeries {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.coeffs.is_empty() {
            write!(f, "0")?;
        } else {
            let mut first = true;
            for (k, c) in &self.coeffs {
                if !first {
                    write!(f, " + ")?;
                }
                first = false;
                match k {
                    0 => write!(f, "{c}")?,
                    1 => write!(f, "{c}*{}", self.var)?,
                    k => write!(f, "{c}*{}^{k}", self.var)?,
                }
            }
        }
        if !self.is_exact() {
            write!(f, " + O({}^{})", self.var, self.hi)?;
        }
        Ok(())
    }
}

impl Serialize for LaurentSeries {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = serializer.serialize_struct("LaurentSeries", 4)?;
        st.serialize_field("var", &self.var)?;
        st.serialize_field("lo", &self.lo)?;
        st.serialize_field("hi", &self.hi)?;
        let terms: Vec<(i64, String)> = self
            .coeffs
            .iter()
            .map(|(k, c)| (*k, c.to_string()))
            .collect();
        st.serialize_field("terms", &terms)?;
        st.end()
    }
}

impl<'de> Deserialize<'de> for LaurentSeries {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            var: String,
            lo: i64,
            hi: i64,
            terms: Vec<(i64, String)>,
        }
        let raw = Raw::deserialize(deserializer)?;
        let mut coeffs = BTreeMap::new();
        for (k, text) in raw.terms {
            let c: Scalar = text.parse().map_err(serde::de::Error::custom)?;
            if !c.is_zero() {
                coeffs.insert(k, c);
            }
        }
        Ok(LaurentSeries {
            var: raw.var,
            lo: raw.lo,
            hi: raw.hi,
            coeffs,
        })
    }
}

// ---------------------------------------------------------------------------
// SeriesXZ

/// Truncated element of F((x))[[z]] or more generally F((x))((z)): a row of
/// Laurent series in x for every z-exponent in `[zlo, zhi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesXZ {
    zvar: String,
    zlo: i64,
    zhi: i64,
    rows: Vec<LaurentSeries>,
}

impl SeriesXZ {
    pub fn new(zvar: &str, zlo: i64, rows: Vec<LaurentSeries>) -> Self {
        let zhi = zlo + rows.len() as i64;
        SeriesXZ {
            zvar: zvar.to_string(),
            zlo,
            zhi,
            rows,
        }
    }

    /// A z-exact value: rows outside the given span are exactly zero.
    pub fn exact(zvar: &str, zlo: i64, rows: Vec<LaurentSeries>) -> Self {
        SeriesXZ {
            zvar: zvar.to_string(),
            zlo,
            zhi: EXACT,
            rows,
        }
    }

    pub fn exact_one(zvar: &str, xvar: &str) -> Self {
        SeriesXZ::exact(zvar, 0, vec![LaurentSeries::one(xvar)])
    }

    pub fn zero(zvar: &str, xvar: &str, zlo: i64, zhi: i64) -> Self {
        let rows = (zlo..zhi).map(|_| LaurentSeries::zero(xvar)).collect();
        SeriesXZ {
            zvar: zvar.to_string(),
            zlo,
            zhi,
            rows,
        }
    }

    pub fn zvar(&self) -> &str {
        &self.zvar
    }

    pub fn xvar(&self) -> &str {
        self.rows
            .first()
            .map(|r| r.var())
            .unwrap_or("x")
    }

    pub fn zlo(&self) -> i64 {
        self.zlo
    }

    pub fn zhi(&self) -> i64 {
        self.zhi
    }

    pub fn row(&self, j: i64) -> LaurentSeries {
        if j < self.zlo || j >= self.zlo + self.rows.len() as i64 {
            let mut z = LaurentSeries::zero(self.xvar());
            if j >= self.zhi {
                // beyond the truncation order nothing is known
                z = z.truncate(i64::MIN / 4);
            }
            return z;
        }
        self.rows[(j - self.zlo) as usize].clone()
    }

    pub fn rows(&self) -> impl Iterator<Item = (i64, &LaurentSeries)> {
        self.rows.iter().enumerate().map(|(i, r)| (self.zlo + i as i64, r))
    }

    /// Drop leading all-zero rows (tightens `zlo`; keeps `zhi`).
    pub fn normalized(&self) -> SeriesXZ {
        let mut zlo = self.zlo;
        let mut rows = self.rows.clone();
        while rows.first().map_or(false, |r| r.is_zero_on_window() && r.is_exact()) {
            rows.remove(0);
            zlo += 1;
        }
        SeriesXZ {
            zvar: self.zvar.clone(),
            zlo,
            zhi: self.zhi,
            rows,
        }
    }

    pub fn add(&self, other: &SeriesXZ) -> Result<SeriesXZ> {
        if self.zvar != other.zvar {
            return Err(Error::VariableMismatch {
                expected: self.zvar.clone(),
                got: other.zvar.clone(),
            });
        }
        let zlo = self.zlo.min(other.zlo);
        let zhi = self.zhi.min(other.zhi);
        let span_end = (self.zlo + self.rows.len() as i64)
            .max(other.zlo + other.rows.len() as i64)
            .min(zhi)
            .max(zlo);
        let mut rows = Vec::new();
        for j in zlo..span_end {
            rows.push(self.row(j).add(&other.row(j))?);
        }
        Ok(SeriesXZ {
            zvar: self.zvar.clone(),
            zlo,
            zhi,
            rows,
        })
    }

    pub fn neg(&self) -> SeriesXZ {
        SeriesXZ {
            zvar: self.zvar.clone(),
            zlo: self.zlo,
            zhi: self.zhi,
            rows: self.rows.iter().map(|r| r.neg()).collect(),
        }
    }

    pub fn sub(&self, other: &SeriesXZ) -> Result<SeriesXZ> {
        self.add(&other.neg())
    }

    pub fn scale(&self, c: &Scalar) -> SeriesXZ {
        SeriesXZ {
            zvar: self.zvar.clone(),
            zlo: self.zlo,
            zhi: self.zhi,
            rows: self.rows.iter().map(|r| r.scale(c)).collect(),
        }
    }

    pub fn scale_series(&self, s: &LaurentSeries) -> Result<SeriesXZ> {
        let mut rows = Vec::new();
        for r in &self.rows {
            rows.push(r.mul(s)?);
        }
        Ok(SeriesXZ {
            zvar: self.zvar.clone(),
            zlo: self.zlo,
            zhi: self.zhi,
            rows,
        })
    }

    pub fn shift_z(&self, k: i64) -> SeriesXZ {
        SeriesXZ {
            zvar: self.zvar.clone(),
            zlo: self.zlo + k,
            zhi: hi_add(self.zhi, k),
            rows: self.rows.clone(),
        }
    }

    pub fn mul(&self, other: &SeriesXZ) -> Result<SeriesXZ> {
        if self.zvar != other.zvar {
            return Err(Error::VariableMismatch {
                expected: self.zvar.clone(),
                got: other.zvar.clone(),
            });
        }
        let zlo = self.zlo + other.zlo;
        let zhi = hi_add(self.zlo, other.zhi).min(hi_add(other.zlo, self.zhi));
        let xvar = self.xvar().to_string();
        let span_end = (self.zlo + self.rows.len() as i64 + other.zlo
            + other.rows.len() as i64
            - 1)
        .min(zhi)
        .max(zlo);
        let mut rows: Vec<LaurentSeries> =
            (zlo..span_end).map(|_| LaurentSeries::zero(&xvar)).collect();
        for (i, a) in self.rows() {
            for (j, b) in other.rows() {
                let k = i + j;
                if k < zlo || k >= span_end {
                    continue;
                }
                let idx = (k - zlo) as usize;
                rows[idx] = rows[idx].add(&a.mul(b)?)?;
            }
        }
        Ok(SeriesXZ {
            zvar: self.zvar.clone(),
            zlo,
            zhi,
            rows,
        })
    }

    /// Inverse of a unit of F((x))((z)): the lowest nonzero z-row must be an
    /// invertible Laurent series in x.
    pub fn invert_unit(&self) -> Result<SeriesXZ> {
        let norm = self.normalized();
        let v = norm.zlo;
        if norm.rows.is_empty() || norm.rows[0].is_zero_on_window() {
            return Err(Error::DivisionByZero);
        }
        let lead_inv = norm.rows[0].invert_unit()?;
        let rel = if norm.zhi >= EXACT { EXACT } else { norm.zhi - v };
        if rel >= EXACT && norm.rows.iter().skip(1).any(|r| !r.is_zero_on_window()) {
            return Err(Error::PrecisionExhausted(
                "inversion of a z-exact non-monomial series needs a finite z-order; truncate first"
                    .into(),
            ));
        }
        let count = if rel >= EXACT { 1 } else { rel.max(1) as usize };
        // B_0 = A_0^-1, B_n = -A_0^-1 sum_{k>=1} A_k B_{n-k}
        let mut brows: Vec<LaurentSeries> = Vec::with_capacity(count);
        brows.push(lead_inv.clone());
        for n in 1..count {
            let mut acc = LaurentSeries::zero(self.xvar());
            for k in 1..=n.min(norm.rows.len() - 1) {
                acc = acc.add(&norm.rows[k].mul(&brows[n - k])?)?;
            }
            brows.push(lead_inv.mul(&acc)?.neg());
        }
        Ok(SeriesXZ {
            zvar: self.zvar.clone(),
            zlo: -v,
            zhi: if rel >= EXACT { EXACT } else { rel - v },
            rows: brows,
        })
    }

    pub fn truncate_z(&self, zhi: i64) -> SeriesXZ {
        let zhi = zhi.min(self.zhi);
        let keep = ((zhi - self.zlo).max(0)) as usize;
        SeriesXZ {
            zvar: self.zvar.clone(),
            zlo: self.zlo,
            zhi,
            rows: self.rows.iter().take(keep).cloned().collect(),
        }
    }

    pub fn agrees_with(&self, other: &SeriesXZ) -> bool {
        if self.zvar != other.zvar {
            return false;
        }
        let zlo = self.zlo.min(other.zlo);
        let zhi = self.zhi.min(other.zhi);
        let span_end = (self.zlo + self.rows.len() as i64)
            .max(other.zlo + other.rows.len() as i64)
            .min(zhi)
            .max(zlo);
        for j in zlo..span_end {
            if !self.row(j).agrees_with(&other.row(j)) {
                return false;
            }
        }
        true
    }
}

// ---------------------------------------------------------------------------
// log / exp utilities

/// log(1+v) = v - v^2/2 + v^3/3 - ... to the exclusive order `order`.
pub fn log1p_series(var: &str, order: i64) -> LaurentSeries {
    let mut terms = Vec::new();
    for n in 1..order {
        let sign = if n % 2 == 1 { 1 } else { -1 };
        terms.push((n, Scalar::from_rat(rat(sign, n))));
    }
    LaurentSeries::from_terms(var, terms, order)
}

fn rat(n: i64, d: i64) -> Rat {
    Rat::new(n.into(), d.into())
}

/// exp(v) = 1 + v + v^2/2! + ... to the exclusive order `order`.
pub fn exp_x_series(var: &str, order: i64) -> LaurentSeries {
    let mut terms = Vec::new();
    for n in 0..order {
        terms.push((n, Scalar::from_rat(Rat::one() / factorial(n as u64))));
    }
    LaurentSeries::from_terms(var, terms, order)
}

/// exp(f) for a series of strictly positive valuation.
pub fn exp_series(f: &LaurentSeries) -> Result<LaurentSeries> {
    if f.valuation().map_or(false, |v| v < 1) {
        return Err(Error::CompositionError(
            "exp requires strictly positive valuation".into(),
        ));
    }
    let order = if f.is_exact() { EXACT } else { f.hi() };
    let mut acc = LaurentSeries::one(f.var());
    let mut pow = LaurentSeries::one(f.var());
    let mut n: i64 = 1;
    loop {
        if order != EXACT && n >= order {
            break;
        }
        pow = pow.mul(f)?;
        if pow.is_zero_on_window() {
            break;
        }
        acc = acc.add(&pow.scale(&Scalar::from_rat(Rat::one() / factorial(n as u64))))?;
        n += 1;
        if n > 10_000 {
            return Err(Error::CompositionError("exp did not terminate".into()));
        }
    }
    if order != EXACT {
        acc = acc.truncate(order);
    }
    Ok(acc)
}

/// g(f) for f of strictly positive valuation; g may have negative exponents.
pub fn compose(g: &LaurentSeries, f: &LaurentSeries) -> Result<LaurentSeries> {
    let fv = f.valuation();
    if fv.map_or(true, |v| v < 1) {
        return Err(Error::CompositionError(
            "composition requires strictly positive inner valuation".into(),
        ));
    }
    let mut acc = LaurentSeries::zero(f.var());
    let f_inv = if g.valuation().map_or(false, |v| v < 0) {
        Some(f.invert_unit()?)
    } else {
        None
    };
    // group by sign of the exponent and use repeated multiplication
    let mut pos_pows: Vec<LaurentSeries> = vec![LaurentSeries::one(f.var())];
    let mut neg_pows: Vec<LaurentSeries> = vec![LaurentSeries::one(f.var())];
    for (k, c) in g.terms() {
        let p = if k >= 0 {
            while (pos_pows.len() as i64) <= k {
                let last = pos_pows.last().unwrap().clone();
                pos_pows.push(last.mul(f)?);
            }
            pos_pows[k as usize].clone()
        } else {
            let fi = f_inv.as_ref().unwrap();
            while (neg_pows.len() as i64) <= -k {
                let last = neg_pows.last().unwrap().clone();
                neg_pows.push(last.mul(fi)?);
            }
            neg_pows[(-k) as usize].clone()
        };
        acc = acc.add(&p.scale(c))?;
    }
    // truncation from g: unknown g-terms at exponent >= g.hi contribute from
    // z-order g.hi * val(f) upward
    if !g.is_exact() {
        let v = fv.unwrap();
        acc = acc.truncate(g.hi().saturating_mul(v).min(EXACT));
    }
    Ok(acc)
}

// ---------------------------------------------------------------------------
// Substitution x1 = phi(x, z)

/// Substitute `x1 = x * e^z` into a Laurent series in x1: the fast path
/// `x1^m -> x^m * sum_j m^j z^j / j!`.
pub fn substitute_xez(f: &LaurentSeries, xvar: &str, zvar: &str, zorder: i64) -> SeriesXZ {
    let mut rows: Vec<LaurentSeries> = (0..zorder).map(|_| LaurentSeries::zero(xvar)).collect();
    for (m, c) in f.terms() {
        let mut mj = Rat::one();
        for j in 0..zorder {
            let coeff = c.scale_rat(&(mj.clone() / factorial(j as u64)));
            rows[j as usize] = rows[j as usize]
                .add(&LaurentSeries::monomial(xvar, coeff, m))
                .expect("same variable");
            mj *= rat_int(m);
        }
    }
    let mut out = SeriesXZ::new(zvar, 0, rows);
    if !f.is_exact() {
        for row in &mut out.rows {
            *row = row.truncate(f.hi());
        }
    }
    out
}

/// Substitute `x1 = phi(x, z)` into a Laurent series in x1 via the binomial
/// route `phi = x + z*A`. Requires `phi(x, 0) = x`.
pub fn substitute_assoc(f: &LaurentSeries, phi: &SeriesXZ) -> Result<SeriesXZ> {
    let xvar = phi.xvar().to_string();
    let zvar = phi.zvar().to_string();
    if phi.zlo() > 0 || !phi.row(0).agrees_with(&LaurentSeries::x(&xvar)) {
        return Err(Error::NotAnAssociateBase(
            "phi(x,0) must equal x".into(),
        ));
    }
    if phi.zhi() >= EXACT {
        return Err(Error::CompositionError(
            "substitution needs a finite z-truncation order on phi".into(),
        ));
    }
    let zorder = phi.zhi();
    // y = (phi - x) / x: the relative perturbation, z-valuation >= 1
    let x_inv = LaurentSeries::monomial(&xvar, Scalar::one(), -1);
    let mut y_rows = Vec::new();
    for j in 1..zorder {
        y_rows.push(phi.row(j).mul(&x_inv)?);
    }
    let y = SeriesXZ::new(&zvar, 1, y_rows);

    let mut out = SeriesXZ::zero(&zvar, &xvar, 0, zorder);
    // powers of y up to the z-truncation order
    let mut y_pows: Vec<SeriesXZ> = vec![SeriesXZ::exact_one(&zvar, &xvar)];
    for _ in 1..zorder {
        let next = y_pows.last().unwrap().mul(&y)?.truncate_z(zorder);
        y_pows.push(next);
    }
    for (m, c) in f.terms() {
        // x1^m = x^m * (1 + y)^m = x^m * sum_j C(m, j) y^j
        let mut term = SeriesXZ::zero(&zvar, &xvar, 0, zorder);
        for (j, yj) in y_pows.iter().enumerate() {
            let b = Scalar::from_rat(binom(m, j as u64)).mul(c);
            term = term.add(&yj.scale(&b))?;
        }
        let xm = LaurentSeries::monomial(&xvar, Scalar::one(), m);
        out = out.add(&term.scale_series(&xm)?)?;
    }
    if !f.is_exact() {
        for row in &mut out.rows {
            *row = row.truncate(f.hi());
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Window tables

/// Which series space a window table lives in.
///
/// `IterLower(i, j)`: iterated Laurent, lower-bounded in var i uniformly and
/// in var j for each fixed exponent of var i. `JointLower`: jointly
/// lower-bounded. `Distribution`: no lower bound claimed outside the window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    IterLower(usize, usize),
    JointLower,
    Distribution,
}

/// Values a window table can carry: Scalars, or module vectors downstream.
pub trait CoeffValue: Clone + PartialEq + std::fmt::Debug {
    fn cv_zero() -> Self;
    fn cv_is_zero(&self) -> bool;
    fn cv_add(&self, other: &Self) -> Self;
    fn cv_scale(&self, c: &Scalar) -> Self;
}

impl CoeffValue for Scalar {
    fn cv_zero() -> Self {
        Scalar::zero()
    }
    fn cv_is_zero(&self) -> bool {
        self.is_zero()
    }
    fn cv_add(&self, other: &Self) -> Self {
        self.add(other)
    }
    fn cv_scale(&self, c: &Scalar) -> Self {
        self.mul(c)
    }
}

/// Coefficient table over a finite multi-degree window with a shape tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowTable<V: CoeffValue = Scalar> {
    vars: Vec<String>,
    /// Inclusive (lo, hi) exponent range per variable: coefficients are
    /// exact for every exponent vector inside the box.
    ranges: Vec<(i64, i64)>,
    coeffs: BTreeMap<Vec<i64>, V>,
    shape: Shape,
}

impl<V: CoeffValue> WindowTable<V> {
    pub fn new(vars: Vec<String>, ranges: Vec<(i64, i64)>, shape: Shape) -> Self {
        assert!(vars.len() == ranges.len());
        assert!(vars.len() == 2 || vars.len() == 3);
        WindowTable {
            vars,
            ranges,
            coeffs: BTreeMap::new(),
            shape,
        }
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    pub fn ranges(&self) -> &[(i64, i64)] {
        &self.ranges
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn in_window(&self, exps: &[i64]) -> bool {
        exps.iter()
            .zip(&self.ranges)
            .all(|(e, (lo, hi))| e >= lo && e <= hi)
    }

    pub fn set(&mut self, exps: Vec<i64>, v: V) {
        if !self.in_window(&exps) {
            return;
        }
        if v.cv_is_zero() {
            self.coeffs.remove(&exps);
        } else {
            self.coeffs.insert(exps, v);
        }
    }

    pub fn accumulate(&mut self, exps: Vec<i64>, v: V) {
        if !self.in_window(&exps) || v.cv_is_zero() {
            return;
        }
        let cur = self.coeffs.remove(&exps);
        let next = match cur {
            Some(c) => c.cv_add(&v),
            None => v,
        };
        if !next.cv_is_zero() {
            self.coeffs.insert(exps, next);
        }
    }

    pub fn get(&self, exps: &[i64]) -> V {
        self.coeffs.get(exps).cloned().unwrap_or_else(V::cv_zero)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&Vec<i64>, &V)> {
        self.coeffs.iter()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn map_values<W: CoeffValue>(&self, f: impl Fn(&V) -> W) -> WindowTable<W> {
        let mut out = WindowTable::new(self.vars.clone(), self.ranges.clone(), self.shape);
        for (k, v) in &self.coeffs {
            out.set(k.clone(), f(v));
        }
        out
    }

    pub fn add(&self, other: &WindowTable<V>) -> Result<WindowTable<V>> {
        if self.vars != other.vars {
            return Err(Error::VariableMismatch {
                expected: self.vars.join(","),
                got: other.vars.join(","),
            });
        }
        let ranges: Vec<(i64, i64)> = self
            .ranges
            .iter()
            .zip(&other.ranges)
            .map(|((a, b), (c, d))| ((*a).max(*c), (*b).min(*d)))
            .collect();
        let shape = if self.shape == other.shape {
            self.shape
        } else {
            Shape::Distribution
        };
        let mut out = WindowTable::new(self.vars.clone(), ranges, shape);
        for (k, v) in &self.coeffs {
            out.accumulate(k.clone(), v.clone());
        }
        for (k, v) in &other.coeffs {
            out.accumulate(k.clone(), v.clone());
        }
        Ok(out)
    }

    pub fn neg(&self) -> WindowTable<V> {
        self.map_values(|v| v.cv_scale(&Scalar::from_int(-1)))
    }

    pub fn sub(&self, other: &WindowTable<V>) -> Result<WindowTable<V>> {
        self.add(&other.neg())
    }

    pub fn scale(&self, c: &Scalar) -> WindowTable<V> {
        self.map_values(|v| v.cv_scale(c))
    }

    /// Multiply by a finite Laurent polynomial given as (exponent vector,
    /// coefficient) terms. The valid window shrinks by the polynomial's
    /// exponent spread: near-boundary output would need input from outside
    /// the window.
    pub fn mul_poly(&self, poly: &[(Vec<i64>, Scalar)]) -> WindowTable<V> {
        let n = self.vars.len();
        let mut min_sh = vec![i64::MAX; n];
        let mut max_sh = vec![i64::MIN; n];
        for (exps, _) in poly {
            for i in 0..n {
                min_sh[i] = min_sh[i].min(exps[i]);
                max_sh[i] = max_sh[i].max(exps[i]);
            }
        }
        if poly.is_empty() {
            min_sh = vec![0; n];
            max_sh = vec![0; n];
        }
        let ranges: Vec<(i64, i64)> = self
            .ranges
            .iter()
            .enumerate()
            .map(|(i, (lo, hi))| (lo + max_sh[i], hi + min_sh[i]))
            .collect();
        let mut out = WindowTable::new(self.vars.clone(), ranges, self.shape);
        for (k, v) in &self.coeffs {
            for (exps, c) in poly {
                let nk: Vec<i64> = k.iter().zip(exps).map(|(a, b)| a + b).collect();
                out.accumulate(nk, v.cv_scale(c));
            }
        }
        out
    }

    /// Full table product. Legal only when at least one operand has a
    /// jointly lower-bounded support (its window box covers the support from
    /// below); a Distribution times a Distribution is refused.
    pub fn mul(&self, other: &WindowTable<Scalar>) -> Result<WindowTable<V>> {
        if self.vars != other.vars {
            return Err(Error::VariableMismatch {
                expected: self.vars.join(","),
                got: other.vars.join(","),
            });
        }
        match (self.shape, other.shape) {
            (Shape::Distribution, Shape::Distribution) => {
                return Err(Error::CompositionError(
                    "product of two distributions does not exist in general".into(),
                ))
            }
            (Shape::IterLower(a, b), Shape::IterLower(c, d)) if (a, b) != (c, d) => {
                return Err(Error::CompositionError(
                    "iterated-Laurent factors with opposite iteration order".into(),
                ))
            }
            _ => {}
        }
        let shape = match (self.shape, other.shape) {
            (Shape::JointLower, s) | (s, Shape::JointLower) => s,
            (s, _) => s,
        };
        let n = self.vars.len();
        let mut ranges = Vec::with_capacity(n);
        for i in 0..n {
            let (lo1, hi1) = self.ranges[i];
            let (lo2, hi2) = other.ranges[i];
            ranges.push((lo1 + lo2, (lo1 + hi2).min(lo2 + hi1)));
        }
        let mut out = WindowTable::new(self.vars.clone(), ranges, shape);
        for (k1, v) in &self.coeffs {
            for (k2, c) in &other.coeffs {
                let nk: Vec<i64> = k1.iter().zip(k2).map(|(a, b)| a + b).collect();
                out.accumulate(nk, v.cv_scale(c));
            }
        }
        Ok(out)
    }

    /// Restrict to a smaller window box.
    pub fn restricted(&self, ranges: Vec<(i64, i64)>) -> WindowTable<V> {
        let ranges: Vec<(i64, i64)> = self
            .ranges
            .iter()
            .zip(&ranges)
            .map(|((a, b), (c, d))| ((*a).max(*c), (*b).min(*d)))
            .collect();
        let mut out = WindowTable::new(self.vars.clone(), ranges, self.shape);
        for (k, v) in &self.coeffs {
            out.set(k.clone(), v.clone());
        }
        out
    }

    /// Coefficient-wise equality on the intersection of the valid windows.
    pub fn agrees_with(&self, other: &WindowTable<V>) -> bool {
        if self.vars != other.vars {
            return false;
        }
        let ranges: Vec<(i64, i64)> = self
            .ranges
            .iter()
            .zip(&other.ranges)
            .map(|((a, b), (c, d))| ((*a).max(*c), (*b).min(*d)))
            .collect();
        for k in self.coeffs.keys().chain(other.coeffs.keys()) {
            let inside = k
                .iter()
                .zip(&ranges)
                .all(|(e, (lo, hi))| e >= lo && e <= hi);
            if inside && self.get(k) != other.get(k) {
                return false;
            }
        }
        true
    }

    /// Verify the support against the declared shape within the window.
    pub fn shape_sound(&self) -> bool {
        match self.shape {
            Shape::Distribution => true,
            Shape::JointLower | Shape::IterLower(..) => self
                .coeffs
                .keys()
                .all(|k| k.iter().zip(&self.ranges).all(|(e, (lo, _))| e >= lo)),
        }
    }

    /// List of (exponents, description) for entries where two tables differ.
    pub fn diff_locations(&self, other: &WindowTable<V>) -> Vec<Vec<i64>> {
        let ranges: Vec<(i64, i64)> = self
            .ranges
            .iter()
            .zip(&other.ranges)
            .map(|((a, b), (c, d))| ((*a).max(*c), (*b).min(*d)))
            .collect();
        let mut out = Vec::new();
        for k in self.coeffs.keys().chain(other.coeffs.keys()) {
            let inside = k
                .iter()
                .zip(&ranges)
                .all(|(e, (lo, hi))| e >= lo && e <= hi);
            if inside && self.get(k) != other.get(k) && !out.contains(k) {
                out.push(k.clone());
            }
        }
        out.sort();
        out.dedup();
        out
    }
}

// ---------------------------------------------------------------------------
// Rational expressions and iota expansion

/// Multivariate Laurent polynomial over Q(q).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MPoly {
    vars: Vec<String>,
    terms: BTreeMap<Vec<i64>, Scalar>,
}

impl MPoly {
    pub fn zero(vars: Vec<String>) -> Self {
        MPoly {
            vars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(vars: Vec<String>, c: Scalar) -> Self {
        let mut p = MPoly::zero(vars);
        let n = p.vars.len();
        p.insert(vec![0; n], c);
        p
    }

    pub fn monomial(vars: Vec<String>, exps: Vec<i64>, c: Scalar) -> Self {
        let mut p = MPoly::zero(vars);
        p.insert(exps, c);
        p
    }

    pub fn var(vars: Vec<String>, which: &str) -> Self {
        let idx = vars.iter().position(|v| v == which).expect("unknown variable");
        let mut exps = vec![0; vars.len()];
        exps[idx] = 1;
        MPoly::monomial(vars, exps, Scalar::one())
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    pub fn insert(&mut self, exps: Vec<i64>, c: Scalar) {
        if c.is_zero() {
            return;
        }
        let cur = self.terms.remove(&exps);
        let next = match cur {
            Some(v) => v.add(&c),
            None => c,
        };
        if !next.is_zero() {
            self.terms.insert(exps, next);
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<i64>, &Scalar)> {
        self.terms.iter()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add(&self, other: &MPoly) -> MPoly {
        assert_eq!(self.vars, other.vars);
        let mut out = self.clone();
        for (k, v) in &other.terms {
            out.insert(k.clone(), v.clone());
        }
        out
    }

    pub fn neg(&self) -> MPoly {
        MPoly {
            vars: self.vars.clone(),
            terms: self.terms.iter().map(|(k, v)| (k.clone(), v.neg())).collect(),
        }
    }

    pub fn sub(&self, other: &MPoly) -> MPoly {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &MPoly) -> MPoly {
        assert_eq!(self.vars, other.vars);
        let mut out = MPoly::zero(self.vars.clone());
        for (k1, v1) in &self.terms {
            for (k2, v2) in &other.terms {
                let k: Vec<i64> = k1.iter().zip(k2).map(|(a, b)| a + b).collect();
                out.insert(k, v1.mul(v2));
            }
        }
        out
    }

    pub fn scale(&self, c: &Scalar) -> MPoly {
        let mut out = MPoly::zero(self.vars.clone());
        for (k, v) in &self.terms {
            out.insert(k.clone(), v.mul(c));
        }
        out
    }

    /// Substitute q -> q0 in every coefficient.
    pub fn eval_q(&self, q0: &Rat) -> Result<MPoly> {
        let mut out = MPoly::zero(self.vars.clone());
        for (k, v) in &self.terms {
            out.insert(k.clone(), Scalar::from_rat(v.eval(q0)?));
        }
        Ok(out)
    }
}

/// Quotient of two multivariate Laurent polynomials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationalExpr {
    pub num: MPoly,
    pub den: MPoly,
}

impl RationalExpr {
    pub fn new(num: MPoly, den: MPoly) -> Result<Self> {
        if den.is_zero() {
            return Err(Error::DivisionByZero);
        }
        Ok(RationalExpr { num, den })
    }

    pub fn vars(&self) -> &[String] {
        self.num.vars()
    }
}

/// Direction-dependent embedding of a rational function into iterated
/// Laurent series: expansion in nonnegative powers of the *inner* variable.
///
/// `order` is the number of inner-variable rows produced, starting from the
/// valuation of the result in the inner variable.
pub fn iota_expand(
    f: &RationalExpr,
    outer: &str,
    inner: &str,
    order: i64,
) -> Result<WindowTable<Scalar>> {
    let vars = f.num.vars().to_vec();
    let oi = vars
        .iter()
        .position(|v| v == outer)
        .ok_or_else(|| Error::VariableMismatch {
            expected: outer.to_string(),
            got: vars.join(","),
        })?;
    let ii = vars
        .iter()
        .position(|v| v == inner)
        .ok_or_else(|| Error::VariableMismatch {
            expected: inner.to_string(),
            got: vars.join(","),
        })?;
    if vars.len() != 2 || oi == ii {
        return Err(Error::ExpansionDirectionError(
            "iota expansion needs two distinct variables".into(),
        ));
    }

    // split a polynomial into rows by inner-variable degree; each row is a
    // Laurent polynomial in the outer variable
    let split = |p: &MPoly| -> BTreeMap<i64, BTreeMap<i64, Scalar>> {
        let mut rows: BTreeMap<i64, BTreeMap<i64, Scalar>> = BTreeMap::new();
        for (exps, c) in p.terms() {
            rows.entry(exps[ii])
                .or_default()
                .insert(exps[oi], c.clone());
        }
        rows
    };
    let num_rows = split(&f.num);
    let den_rows = split(&f.den);
    let (d0, lead) = den_rows
        .iter()
        .next()
        .map(|(d, r)| (*d, r.clone()))
        .ok_or(Error::DivisionByZero)?;
    if lead.len() != 1 {
        return Err(Error::ExpansionDirectionError(format!(
            "lowest {inner}-degree part of the denominator is not a monomial in {outer}"
        )));
    }
    let (lead_exp, lead_coeff) = lead.into_iter().next().unwrap();
    let lead_inv = lead_coeff.inv()?;

    let n0 = num_rows.keys().next().copied().unwrap_or(0);
    let v_start = n0 - d0;
    let mut result: BTreeMap<i64, BTreeMap<i64, Scalar>> = BTreeMap::new();
    for step in 0..order {
        let d = v_start + step;
        // row_d = (num_{d + d0} - sum_{e < d} result_e * den_{d - e + d0}) / lead
        let mut acc: BTreeMap<i64, Scalar> =
            num_rows.get(&(d + d0)).cloned().unwrap_or_default();
        for (e, re) in result.range(..d) {
            if let Some(dr) = den_rows.get(&(d - e + d0)) {
                for (oe1, c1) in re {
                    for (oe2, c2) in dr {
                        let k = oe1 + oe2;
                        let v = c1.mul(c2).neg();
                        let ent = acc.entry(k).or_insert_with(Scalar::zero);
                        *ent = ent.add(&v);
                    }
                }
            }
        }
        let mut row: BTreeMap<i64, Scalar> = BTreeMap::new();
        for (k, c) in acc {
            let v = c.mul(&lead_inv);
            if !v.is_zero() {
                row.insert(k - lead_exp, v);
            }
        }
        result.insert(d, row);
    }

    // pack into a window table: inner rows [v_start, v_start + order)
    let mut olo = i64::MAX;
    let mut ohi = i64::MIN;
    for row in result.values() {
        for k in row.keys() {
            olo = olo.min(*k);
            ohi = ohi.max(*k);
        }
    }
    if olo > ohi {
        olo = 0;
        ohi = 0;
    }
    let mut ranges = vec![(0, 0); 2];
    ranges[oi] = (olo, ohi);
    ranges[ii] = (v_start, v_start + order - 1);
    let mut table = WindowTable::new(vars.clone(), ranges, Shape::IterLower(oi, ii));
    for (d, row) in result {
        for (k, c) in row {
            let mut exps = vec![0; 2];
            exps[oi] = k;
            exps[ii] = d;
            table.set(exps, c);
        }
    }
    Ok(table)
}

// ---------------------------------------------------------------------------
// Delta-function calculus

/// The formal delta function delta(numer/denom) = sum_n numer^n denom^{-n},
/// tabulated on the inclusive window [-d, d] in both variables.
pub fn delta_series(numer_var: &str, denom_var: &str, d: i64) -> WindowTable<Scalar> {
    let vars = vec![numer_var.to_string(), denom_var.to_string()];
    let mut t = WindowTable::new(vars, vec![(-d, d), (-d, d)], Shape::Distribution);
    for n in -d..=d {
        t.set(vec![n, -n], Scalar::one());
    }
    t
}

/// One term of the standard delta-function identity over three variables:
///
/// sum_n (s_a x_a + s_b x_b)^n (s_out x_out)^{-n-1}
///
/// expanded in nonnegative powers of x_b, on the window [-d, d]^3. Variable
/// positions are indices into `vars`.
pub fn delta_term(
    vars: [&str; 3],
    out: usize,
    a: usize,
    b: usize,
    s_a: i64,
    s_b: i64,
    s_out: i64,
    d: i64,
) -> WindowTable<Scalar> {
    let vars: Vec<String> = vars.iter().map(|s| s.to_string()).collect();
    let mut t = WindowTable::new(vars, vec![(-d, d); 3], Shape::Distribution);
    for n in (-d - 1)..=(d - 1) {
        // out-exponent -n-1 in window
        for j in 0..=(2 * d).max(0) {
            let ea = n - j;
            if ea < -d || ea > d || j > d {
                continue;
            }
            // (s_a x_a)^{n-j} (s_b x_b)^j binomial; integer signs are +-1
            let sign_a = if s_a == 1 || (n - j) % 2 == 0 { 1 } else { -1 };
            let sign_b = if s_b == 1 || j % 2 == 0 { 1 } else { -1 };
            let sign_out = if s_out == 1 || (n + 1) % 2 == 0 { 1 } else { -1 };
            let c = binom(n, j as u64) * rat_int(sign_a * sign_b * sign_out);
            let mut exps = vec![0i64; 3];
            exps[a] = n - j;
            exps[b] = j;
            exps[out] = -n - 1;
            t.accumulate(exps, Scalar::from_rat(c));
        }
    }
    t
}

/// (x2 z)^{-1} delta((s_a x1 + s_b x2) / (x2 z)) over vars (x1, x2, z),
/// expanded in nonnegative powers of the `b` variable, window [-d, d]^3.
/// `s_out` carries the sign of the denominator (x2 z vs -x2 z).
pub fn delta_term_subst(
    vars: [&str; 3],
    a: usize,
    b: usize,
    s_a: i64,
    s_b: i64,
    s_out: i64,
    x2: usize,
    z: usize,
    d: i64,
) -> WindowTable<Scalar> {
    let vars_v: Vec<String> = vars.iter().map(|s| s.to_string()).collect();
    let mut t = WindowTable::new(vars_v, vec![(-d, d); 3], Shape::Distribution);
    // sum_n (s_a x_a + s_b x_b)^n (s_out x2 z)^{-n-1}
    for n in (-d - 1)..=(d - 1) {
        for j in 0..=(2 * d + 2) {
            let sign_a = if s_a == 1 || (n - j) % 2 == 0 { 1 } else { -1 };
            let sign_b = if s_b == 1 || j % 2 == 0 { 1 } else { -1 };
            let sign_out = if s_out == 1 || (n + 1) % 2 == 0 { 1 } else { -1 };
            let c = binom(n, j as u64) * rat_int(sign_a * sign_b * sign_out);
            let mut exps = vec![0i64; 3];
            exps[a] += n - j;
            exps[b] += j;
            exps[x2] += -n - 1;
            exps[z] += -n - 1;
            t.accumulate(exps, Scalar::from_rat(c));
        }
    }
    t
}

/// x1^{-1} delta(x2 (1+z) / x1) = sum_n x2^n (1+z)^n x1^{-n-1} over vars
/// (x1, x2, z), with (1+z)^n expanded in nonnegative powers of z.
pub fn delta_term_onepz(vars: [&str; 3], x1: usize, x2: usize, z: usize, d: i64) -> WindowTable<Scalar> {
    let vars_v: Vec<String> = vars.iter().map(|s| s.to_string()).collect();
    let mut t = WindowTable::new(vars_v, vec![(-d, d); 3], Shape::Distribution);
    for n in -d..=d {
        for j in 0..=(2 * d + 2) {
            let c = binom(n, j as u64);
            let mut exps = vec![0i64; 3];
            exps[x1] = -n - 1;
            exps[x2] = n;
            exps[z] = j;
            t.accumulate(exps, Scalar::from_rat(c));
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sc(text: &str) -> Scalar {
        text.parse().unwrap()
    }

    #[test]
    fn laurent_mul_identity() {
        let a = LaurentSeries::from_terms(
            "x",
            vec![(-1, Scalar::one()), (0, Scalar::one())],
            3,
        );
        let one = LaurentSeries::one("x");
        assert_eq!(a.mul(&one).unwrap().truncate(a.hi()), a);
    }

    #[test]
    fn laurent_mul_truncation_rule() {
        // (1 - x) * (1 + x + x^2 truncated at 3) = 1 - x^3, truncated to hi=3
        let a = LaurentSeries::from_terms(
            "x",
            vec![(0, Scalar::one()), (1, Scalar::from_int(-1))],
            EXACT,
        );
        let b = LaurentSeries::from_terms(
            "x",
            vec![(0, Scalar::one()), (1, Scalar::one()), (2, Scalar::one())],
            3,
        );
        let p = a.mul(&b).unwrap();
        assert_eq!(p.hi(), 3);
        assert!(p.agrees_with(&LaurentSeries::one("x")));
    }

    #[test]
    fn laurent_var_mismatch() {
        let a = LaurentSeries::one("x");
        let b = LaurentSeries::one("z");
        assert!(matches!(a.mul(&b), Err(Error::VariableMismatch { .. })));
    }

    #[test]
    fn invert_geometric() {
        // (1 - q x)^-1 = 1 + q x + q^2 x^2 + ...
        let a = LaurentSeries::from_terms(
            "x",
            vec![(0, Scalar::one()), (1, sc("-q"))],
            3,
        );
        let inv = a.invert_unit().unwrap();
        assert_eq!(inv.coeff(0), Scalar::one());
        assert_eq!(inv.coeff(1), sc("q"));
        assert_eq!(inv.coeff(2), sc("q^2"));
        assert_eq!(inv.hi(), 3);
    }

    #[test]
    fn invert_monomials() {
        let x = LaurentSeries::x("x");
        assert_eq!(
            x.invert_unit().unwrap().coeff(-1),
            Scalar::one()
        );
        let two = LaurentSeries::constant("x", Scalar::from_int(2));
        assert_eq!(
            two.invert_unit().unwrap().coeff(0),
            Scalar::from_rat(rat(1, 2))
        );
        assert!(matches!(
            LaurentSeries::zero("x").invert_unit(),
            Err(Error::DivisionByZero)
        ));
    }

    #[test]
    fn iota_trig_coefficients() {
        // iota_{z,x}((x - q z)/(q x - z)) = q + (q^2-1)(x/z) + (q^3-q)(x/z)^2 + ...
        let vars = vec!["x".to_string(), "z".to_string()];
        let x = MPoly::var(vars.clone(), "x");
        let z = MPoly::var(vars.clone(), "z");
        let q = MPoly::constant(vars.clone(), Scalar::q());
        let num = x.sub(&q.mul(&z));
        let den = q.mul(&x).sub(&z);
        let f = RationalExpr::new(num, den).unwrap();
        let t = iota_expand(&f, "z", "x", 4).unwrap();
        assert_eq!(t.get(&[0, 0]), sc("q"));
        assert_eq!(t.get(&[1, -1]), sc("q^2 - 1"));
        assert_eq!(t.get(&[2, -2]), sc("q^3 - q"));
        assert_eq!(t.get(&[3, -3]), sc("q^4 - q^2"));
    }

    #[test]
    fn iota_reciprocal() {
        let vars = vec!["x".to_string(), "z".to_string()];
        let x = MPoly::var(vars.clone(), "x");
        let z = MPoly::var(vars.clone(), "z");
        let q = MPoly::constant(vars.clone(), Scalar::q());
        let num = q.mul(&x).sub(&z);
        let den = x.sub(&q.mul(&z));
        let f = RationalExpr::new(num, den).unwrap();
        let t = iota_expand(&f, "z", "x", 2).unwrap();
        assert_eq!(t.get(&[0, 0]), sc("1/q"));
        assert_eq!(t.get(&[1, -1]), sc("(1 - q^2)/(q^2)"));
    }

    #[test]
    fn iota_of_one() {
        let vars = vec!["x1".to_string(), "x2".to_string()];
        let one = MPoly::constant(vars.clone(), Scalar::one());
        let f = RationalExpr::new(one.clone(), one).unwrap();
        let t = iota_expand(&f, "x1", "x2", 3).unwrap();
        assert_eq!(t.get(&[0, 0]), Scalar::one());
        assert_eq!(t.entries().count(), 1);
    }

    #[test]
    fn delta_coefficients() {
        let t = delta_series("x", "z", 4);
        assert_eq!(t.get(&[3, -3]), Scalar::one());
        assert_eq!(t.get(&[3, -2]), Scalar::zero());
    }

    #[test]
    fn x_minus_z_kills_delta() {
        let t = delta_series("x", "z", 5);
        let poly = vec![
            (vec![1, 0], Scalar::one()),
            (vec![0, 1], Scalar::from_int(-1)),
        ];
        let p = t.mul_poly(&poly);
        assert!(p.is_zero());
    }

    #[test]
    fn log_exp_round_trip() {
        let l = log1p_series("z", 9);
        let e = exp_series(&l).unwrap();
        // e^{log(1+z)} = 1 + z
        let expect = LaurentSeries::from_terms(
            "z",
            vec![(0, Scalar::one()), (1, Scalar::one())],
            EXACT,
        );
        assert!(e.agrees_with(&expect));

        // log(1 + (e^z - 1)) = z
        let em1 = exp_x_series("z", 9)
            .sub(&LaurentSeries::one("z"))
            .unwrap();
        let l2 = compose(&log1p_series("z", 9), &em1).unwrap();
        assert!(l2.agrees_with(&LaurentSeries::x("z")));
    }

    #[test]
    fn substitute_additive() {
        // x1^2 with phi = x + z gives x^2 + 2 x z + z^2
        let phi = SeriesXZ::new(
            "z",
            0,
            vec![LaurentSeries::x("x"), LaurentSeries::one("x"), LaurentSeries::zero("x")],
        );
        let f = LaurentSeries::monomial("x1", Scalar::one(), 2);
        let s = substitute_assoc(&f, &phi).unwrap();
        assert_eq!(s.row(0).coeff(2), Scalar::one());
        assert_eq!(s.row(1).coeff(1), Scalar::from_int(2));
        assert_eq!(s.row(2).coeff(0), Scalar::one());
    }

    #[test]
    fn substitute_xez_inverse_power() {
        // x1^-1 -> x^-1 (1 - z + z^2/2 - ...)
        let f = LaurentSeries::monomial("x1", Scalar::one(), -1);
        let s = substitute_xez(&f, "x", "z", 4);
        assert_eq!(s.row(0).coeff(-1), Scalar::one());
        assert_eq!(s.row(1).coeff(-1), Scalar::from_int(-1));
        assert_eq!(s.row(2).coeff(-1), Scalar::from_rat(rat(1, 2)));
        assert_eq!(s.row(3).coeff(-1), Scalar::from_rat(rat(-1, 6)));
    }

    #[test]
    fn substitute_paths_agree() {
        // the generic binomial path at phi = x e^z matches the fast path
        let order = 6;
        let rows: Vec<LaurentSeries> = (0..order)
            .map(|j| {
                LaurentSeries::monomial(
                    "x",
                    Scalar::from_rat(Rat::one() / factorial(j as u64)),
                    1,
                )
            })
            .collect();
        let phi = SeriesXZ::new("z", 0, rows);
        for m in [-2i64, -1, 0, 1, 3] {
            let f = LaurentSeries::monomial("x1", Scalar::one(), m);
            let a = substitute_assoc(&f, &phi).unwrap();
            let b = substitute_xez(&f, "x", "z", order);
            assert!(a.agrees_with(&b), "m = {m}");
        }
    }

    #[test]
    fn series_xz_invert() {
        // invert x (e^z - 1) = x z (1 + z/2 + ...) : zlo of the inverse is -1
        let order = 6;
        let rows: Vec<LaurentSeries> = (1..order)
            .map(|j| {
                LaurentSeries::monomial(
                    "x",
                    Scalar::from_rat(Rat::one() / factorial(j as u64)),
                    1,
                )
            })
            .collect();
        let a = SeriesXZ::new("z", 1, rows);
        let inv = a.invert_unit().unwrap();
        assert_eq!(inv.zlo(), -1);
        let prod = a.mul(&inv).unwrap();
        let one = SeriesXZ::new("z", 0, vec![LaurentSeries::one("x")]);
        assert!(prod.agrees_with(&one));
    }

    #[test]
    fn window_table_shapes() {
        let d1 = delta_series("x", "z", 3);
        let d2 = delta_series("x", "z", 3);
        assert!(matches!(d1.mul(&d2), Err(Error::CompositionError(_))));
    }

    #[test]
    fn laurent_json_round_trip() {
        let a = LaurentSeries::from_terms(
            "x",
            vec![(-1, Scalar::one()), (2, sc("(q+1)/(q-1)"))],
            5,
        );
        let text = serde_json::to_string(&a).unwrap();
        let b: LaurentSeries = serde_json::from_str(&text).unwrap();
        assert_eq!(a, b);
        assert_eq!(serde_json::to_string(&b).unwrap(), text);
    }
}
