//! The E(W) calculus: fields on a desk module, operator-product window
//! tables, multiplier search, the Y_E^phi product with mode extraction, and
//! the identity checkers built on top.
//!
//! Everything is window-exact: an identity is verified coefficient by
//! coefficient on a finite exponent box, against sampled states. Every
//! truncation is justified either by an annihilation bound or by the
//! certified lower corner of a multiplied product.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use crate::associates::Associate;
use crate::error::{Error, Result};
use crate::fockrep::{BgModule, Gen, ModuleState};
use crate::report::CheckReport;
use crate::scalars::{rat_int, Rat, Scalar};
use crate::series::{
    binom, exp_x_series, factorial, log1p_series, substitute_assoc, substitute_xez, CoeffValue,
    LaurentSeries, SeriesXZ, Shape, WindowTable,
};

/// Values a field can act on: desk-module vectors, or coordinate vectors
/// for the finite-dimensional oracle.
pub trait Vect: CoeffValue + fmt::Display + Send + Sync + 'static {}

impl<T: CoeffValue + fmt::Display + Send + Sync + 'static> Vect for T {}

// ---------------------------------------------------------------------------
// Fields

/// An element a(x) of E(W) = Hom(W, W((x))), given by its mode action
/// a_n: W -> W together with an annihilation bound: for each w a bound N(w)
/// with a_n w = 0 for all n >= N(w).
#[derive(Clone)]
pub struct FieldOperator<V: Vect> {
    label: String,
    act: Arc<dyn Fn(i64, &V) -> Result<V> + Send + Sync>,
    ann: Arc<dyn Fn(&V) -> Result<i64> + Send + Sync>,
}

impl<V: Vect> FieldOperator<V> {
    pub fn new(
        label: impl Into<String>,
        act: impl Fn(i64, &V) -> Result<V> + Send + Sync + 'static,
        ann: impl Fn(&V) -> Result<i64> + Send + Sync + 'static,
    ) -> Self {
        FieldOperator {
            label: label.into(),
            act: Arc::new(act),
            ann: Arc::new(ann),
        }
    }

    /// 1_W: mode -1 is the identity, every other mode is zero.
    pub fn identity() -> Self {
        FieldOperator::new(
            "1",
            |n, w: &V| {
                if n == -1 {
                    Ok(w.clone())
                } else {
                    Ok(V::cv_zero())
                }
            },
            |_| Ok(0),
        )
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn apply(&self, n: i64, w: &V) -> Result<V> {
        (self.act)(n, w)
    }

    /// N with a_n w = 0 for all n >= N.
    pub fn ann_bound(&self, w: &V) -> Result<i64> {
        (self.ann)(w)
    }
}

impl<V: Vect> fmt::Debug for FieldOperator<V> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FieldOperator({})", self.label)
    }
}

/// The generating current g(x) acting on the desk module.
pub fn module_field(module: &Arc<BgModule>, g: Gen) -> FieldOperator<ModuleState> {
    let m = Arc::clone(module);
    FieldOperator::new(
        g.name(),
        move |n, w: &ModuleState| m.act(g, n, w),
        |w| Ok(w.annihilation_bound()),
    )
}

// ---------------------------------------------------------------------------
// Multipliers

/// A compatibility multiplier p(x1, x2): either a power of (x1 - x2) or a
/// Laurent polynomial in the ratio t = x1/x2.
#[derive(Debug, Clone, PartialEq)]
pub enum Multiplier {
    Power(u32),
    RatioPoly(Vec<(i64, Scalar)>),
}

fn parity(j: i64) -> i64 {
    if j.rem_euclid(2) == 0 {
        1
    } else {
        -1
    }
}

impl Multiplier {
    pub fn one() -> Self {
        Multiplier::Power(0)
    }

    /// Terms as (exponents of the two variables, coefficient).
    pub fn terms(&self) -> Vec<(Vec<i64>, Scalar)> {
        match self {
            Multiplier::Power(k) => {
                let k = *k as i64;
                (0..=k)
                    .map(|j| {
                        let c = Scalar::from_rat(binom(k, j as u64) * rat_int(parity(j)));
                        (vec![k - j, j], c)
                    })
                    .filter(|(_, c)| !c.is_zero())
                    .collect()
            }
            Multiplier::RatioPoly(t) => t
                .iter()
                .filter(|(_, c)| !c.is_zero())
                .map(|(j, c)| (vec![*j, -*j], c.clone()))
                .collect(),
        }
    }

    /// The multiplier as a Laurent polynomial in t = x1/x2, up to a power
    /// of x2 (which carries no zero at t = 1).
    fn t_poly(&self) -> Vec<(i64, Scalar)> {
        match self {
            Multiplier::Power(k) => {
                let k = *k as i64;
                (0..=k)
                    .map(|j| {
                        (
                            k - j,
                            Scalar::from_rat(binom(k, j as u64) * rat_int(parity(j))),
                        )
                    })
                    .collect()
            }
            Multiplier::RatioPoly(t) => t.clone(),
        }
    }

    /// Multiplicity of the zero of p(t) at t = 1.
    pub fn zero_multiplicity_at_one(&self) -> u32 {
        let terms = self.t_poly();
        let lo = terms.iter().map(|(j, _)| *j).min().unwrap_or(0);
        let deg = terms.iter().map(|(j, _)| *j).max().unwrap_or(0) - lo;
        let mut coeffs = vec![Scalar::zero(); (deg + 1) as usize];
        for (j, c) in &terms {
            let idx = (j - lo) as usize;
            coeffs[idx] = coeffs[idx].add(c);
        }
        let mut mult = 0;
        loop {
            if coeffs.is_empty() || coeffs.iter().all(|c| c.is_zero()) {
                return mult;
            }
            let at_one = coeffs.iter().fold(Scalar::zero(), |acc, c| acc.add(c));
            if !at_one.is_zero() {
                return mult;
            }
            // synthetic division by (t - 1)
            let mut quot = vec![Scalar::zero(); coeffs.len() - 1];
            let mut carry = Scalar::zero();
            for i in (1..coeffs.len()).rev() {
                carry = carry.add(&coeffs[i]);
                quot[i - 1] = carry.clone();
            }
            coeffs = quot;
            mult += 1;
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Multiplier::Power(k) => format!("(x1-x2)^{k}"),
            Multiplier::RatioPoly(t) => {
                let parts: Vec<String> = t.iter().map(|(j, c)| format!("({c})*t^{j}")).collect();
                parts.join(" + ")
            }
        }
    }

    /// Per-variable (min, max) exponent shifts of the terms.
    fn exp_spans(&self) -> ((i64, i64), (i64, i64)) {
        let terms = self.terms();
        if terms.is_empty() {
            return ((0, 0), (0, 0));
        }
        let mut s = ((i64::MAX, i64::MIN), (i64::MAX, i64::MIN));
        for (e, _) in &terms {
            s.0 .0 = s.0 .0.min(e[0]);
            s.0 .1 = s.0 .1.max(e[0]);
            s.1 .0 = s.1 .0.min(e[1]);
            s.1 .1 = s.1 .1.max(e[1]);
        }
        s
    }
}

/// A multiplier together with the pair of field labels it was certified
/// for. Only `find_multiplier` produces these, so `y_phi_on_state` cannot
/// be fed an unverified guess.
#[derive(Debug, Clone)]
pub struct CertifiedMultiplier {
    mult: Multiplier,
    pair: (String, String),
}

impl CertifiedMultiplier {
    pub fn multiplier(&self) -> &Multiplier {
        &self.mult
    }

    pub fn pair(&self) -> (&str, &str) {
        (&self.pair.0, &self.pair.1)
    }
}

// ---------------------------------------------------------------------------
// Operator products on windows

/// Window realization of a(x1)b(x2)w: exact coefficients on a box.
pub struct OpProduct<V: Vect> {
    pub table: WindowTable<V>,
}

fn two_vars() -> Vec<String> {
    vec!["x1".to_string(), "x2".to_string()]
}

/// Coefficient of x1^{e1} x2^{e2} in a(x1)b(x2)w is a_{-e1-1} b_{-e2-1} w.
pub fn product_window<V: Vect>(
    a: &FieldOperator<V>,
    b: &FieldOperator<V>,
    w: &V,
    r1: (i64, i64),
    r2: (i64, i64),
) -> Result<OpProduct<V>> {
    let mut table = WindowTable::new(two_vars(), vec![r1, r2], Shape::Distribution);
    for e2 in r2.0..=r2.1 {
        let u = b.apply(-e2 - 1, w)?;
        if u.cv_is_zero() {
            continue;
        }
        let na = a.ann_bound(&u)?;
        for e1 in r1.0.max(-na)..=r1.1 {
            let v = a.apply(-e1 - 1, &u)?;
            table.set(vec![e1, e2], v);
        }
    }
    Ok(OpProduct { table })
}

/// Coefficient of x1^{e1} x2^{e2} in u(x2)v(x1)w: v acts first.
pub fn product_window_rev<V: Vect>(
    u: &FieldOperator<V>,
    v: &FieldOperator<V>,
    w: &V,
    r1: (i64, i64),
    r2: (i64, i64),
) -> Result<OpProduct<V>> {
    let mut table = WindowTable::new(two_vars(), vec![r1, r2], Shape::Distribution);
    for e1 in r1.0..=r1.1 {
        let s = v.apply(-e1 - 1, w)?;
        if s.cv_is_zero() {
            continue;
        }
        let nu = u.ann_bound(&s)?;
        for e2 in r2.0.max(-nu)..=r2.1 {
            let t = u.apply(-e2 - 1, &s)?;
            table.set(vec![e1, e2], t);
        }
    }
    Ok(OpProduct { table })
}

/// Raw convolution of a vector-valued table with a scalar one, accumulated
/// into an explicit target box. The caller guarantees the factors cover
/// every exponent pair that can land in the target; no shape logic here.
pub fn convolve<V: Vect>(
    vt: &WindowTable<V>,
    st: &WindowTable<Scalar>,
    ranges: Vec<(i64, i64)>,
) -> WindowTable<V> {
    let mut out = WindowTable::new(vt.vars().to_vec(), ranges, Shape::Distribution);
    for (ke, v) in vt.entries() {
        for (ks, c) in st.entries() {
            let k: Vec<i64> = ke.iter().zip(ks).map(|(a, b)| a + b).collect();
            if out.in_window(&k) {
                out.accumulate(k, v.cv_scale(c));
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Multiplier search

fn t_mul(a: &[(i64, Scalar)], b: &[(i64, Scalar)]) -> Vec<(i64, Scalar)> {
    let mut acc: HashMap<i64, Scalar> = HashMap::new();
    for (i, c) in a {
        for (j, d) in b {
            let e = acc.entry(i + j).or_insert_with(Scalar::zero);
            *e = e.add(&c.mul(d));
        }
    }
    let mut out: Vec<(i64, Scalar)> = acc.into_iter().filter(|(_, c)| !c.is_zero()).collect();
    out.sort_by_key(|(j, _)| *j);
    out
}

fn factored_candidate(q: &Scalar, a: i64, b: i64, c: i64) -> Multiplier {
    if b == 0 && c == 0 {
        return Multiplier::Power(a as u32);
    }
    let t1 = vec![(1, Scalar::one()), (0, Scalar::from_int(-1))];
    let qt1 = vec![(1, q.clone()), (0, Scalar::from_int(-1))];
    let tq = vec![(1, Scalar::one()), (0, q.neg())];
    let mut p = vec![(0, Scalar::one())];
    for _ in 0..a {
        p = t_mul(&p, &t1);
    }
    for _ in 0..b {
        p = t_mul(&p, &qt1);
    }
    for _ in 0..c {
        p = t_mul(&p, &tq);
    }
    Multiplier::RatioPoly(p)
}

/// Default candidate list: products (t-1)^a (q*t-1)^b (t-q)^c of the three
/// linear certificates, ordered by total degree with plain powers first.
/// The pure (t-1)^a candidates are kept in (x1-x2)^a form.
pub fn default_candidates(q: &Scalar, k_max: u32) -> Vec<Multiplier> {
    let mut out = Vec::new();
    for total in 0..=k_max as i64 {
        for a in (0..=total).rev() {
            for b in (0..=(total - a)).rev() {
                out.push(factored_candidate(q, a, b, total - a - b));
            }
        }
    }
    out
}

/// Memoized coefficients of a(x1)b(x2)w for one fixed (a, b, w): the raw
/// product entries are candidate-independent, so the multiplier search and
/// the window-growth probes share them instead of re-applying the operators.
struct ProductCache<'a, V: Vect> {
    a: &'a FieldOperator<V>,
    b: &'a FieldOperator<V>,
    w: &'a V,
    inner: HashMap<i64, V>,
    ann: HashMap<i64, i64>,
    entries: HashMap<(i64, i64), V>,
}

impl<'a, V: Vect> ProductCache<'a, V> {
    fn new(a: &'a FieldOperator<V>, b: &'a FieldOperator<V>, w: &'a V) -> Self {
        ProductCache {
            a,
            b,
            w,
            inner: HashMap::new(),
            ann: HashMap::new(),
            entries: HashMap::new(),
        }
    }

    /// Raw coefficient of x1^{e1} x2^{e2}, memoized; zero when b annihilates
    /// or a's lower bound on the intermediate state rules the mode out.
    fn raw_entry(&mut self, e1: i64, e2: i64) -> Result<V> {
        if let Some(v) = self.entries.get(&(e1, e2)) {
            return Ok(v.clone());
        }
        if !self.inner.contains_key(&e2) {
            let u = self.b.apply(-e2 - 1, self.w)?;
            if !u.cv_is_zero() {
                self.ann.insert(e2, self.a.ann_bound(&u)?);
            }
            self.inner.insert(e2, u);
        }
        let u = self.inner[&e2].clone();
        if u.cv_is_zero() || e1 < -self.ann[&e2] {
            return Ok(V::cv_zero());
        }
        let v = self.a.apply(-e1 - 1, &u)?;
        self.entries.insert((e1, e2), v.clone());
        Ok(v)
    }

    /// Entry of p * a(x1)b(x2)w at (e1, e2).
    fn mult_entry(&mut self, terms: &[(Vec<i64>, Scalar)], e1: i64, e2: i64) -> Result<V> {
        let mut acc = V::cv_zero();
        for (s, c) in terms {
            let r = self.raw_entry(e1 - s[0], e2 - s[1])?;
            if !r.cv_is_zero() {
                acc = acc.cv_add(&r.cv_scale(c));
            }
        }
        Ok(acc)
    }

    /// Per-variable minimum exponents of p * a(x1)b(x2)w on [-d, d]^2,
    /// scanning from the low edge so unstable candidates reject after a few
    /// entries instead of a full window product.
    fn lazy_minima(
        &mut self,
        terms: &[(Vec<i64>, Scalar)],
        d: i64,
    ) -> Result<Option<(i64, i64)>> {
        let mut m1 = None;
        'col: for e1 in -d..=d {
            for e2 in -d..=d {
                if !self.mult_entry(terms, e1, e2)?.cv_is_zero() {
                    m1 = Some(e1);
                    break 'col;
                }
            }
        }
        let m1 = match m1 {
            None => return Ok(None),
            Some(m) => m,
        };
        for e2 in -d..=d {
            for e1 in m1..=d {
                if !self.mult_entry(terms, e1, e2)?.cv_is_zero() {
                    return Ok(Some((m1, e2)));
                }
            }
        }
        unreachable!("a nonzero column implies a nonzero row");
    }
}

/// p * a(x1)b(x2)w exactly on [-d, d]^2.
fn multiplied_product<V: Vect>(
    a: &FieldOperator<V>,
    b: &FieldOperator<V>,
    w: &V,
    mult: &Multiplier,
    d: i64,
) -> Result<WindowTable<V>> {
    let (s1, s2) = mult.exp_spans();
    let raw = product_window(a, b, w, (-d - s1.1, d - s1.0), (-d - s2.1, d - s2.0))?;
    Ok(raw
        .table
        .mul_poly(&mult.terms())
        .restricted(vec![(-d, d), (-d, d)]))
}

/// Minimum exponents of p * a(x1)b(x2)w once they are stable under window
/// growth; None when the product vanishes on the grown window.
fn stable_minima_cached<V: Vect>(
    cache: &mut ProductCache<'_, V>,
    mult: &Multiplier,
    d: i64,
) -> Result<Option<(i64, i64)>> {
    let terms = mult.terms();
    let mut d = d;
    for _ in 0..3 {
        let small = cache.lazy_minima(&terms, d)?;
        let big = cache.lazy_minima(&terms, d + 2)?;
        match (small, big) {
            (Some(ms), Some(mb)) if ms == mb => return Ok(Some(ms)),
            (None, None) => return Ok(None),
            _ => d += 4,
        }
    }
    Err(Error::PrecisionExhausted(format!(
        "lower corner of {} * {}(x1){}(x2) did not stabilize",
        mult.describe(),
        cache.a.label(),
        cache.b.label()
    )))
}

fn stable_minima<V: Vect>(
    a: &FieldOperator<V>,
    b: &FieldOperator<V>,
    w: &V,
    mult: &Multiplier,
    d: i64,
) -> Result<Option<(i64, i64)>> {
    stable_minima_cached(&mut ProductCache::new(a, b, w), mult, d)
}

/// Search the candidate list for the first multiplier p whose product
/// p * a(x1)b(x2)w looks jointly lower-truncated on every sample: the
/// per-variable minimum exponents must not move when the window grows.
/// Failure of a candidate is inconclusive for the pair, not a disproof.
pub fn find_multiplier<V: Vect>(
    a: &FieldOperator<V>,
    b: &FieldOperator<V>,
    samples: &[V],
    candidates: &[Multiplier],
    d: i64,
) -> Result<(CertifiedMultiplier, CheckReport)> {
    let mut caches: Vec<ProductCache<'_, V>> =
        samples.iter().map(|w| ProductCache::new(a, b, w)).collect();
    for cand in candidates {
        let mut report = CheckReport::passing();
        for (si, cache) in caches.iter_mut().enumerate() {
            let ok = match stable_minima_cached(cache, cand, d) {
                Ok(_) => true,
                Err(Error::PrecisionExhausted(_)) => false,
                Err(e) => return Err(e),
            };
            if !ok {
                report.push(
                    format!("candidate {} on sample {si}", cand.describe()),
                    vec![d],
                    "minimum exponents move as the window grows",
                );
            }
        }
        if report.pass {
            return Ok((
                CertifiedMultiplier {
                    mult: cand.clone(),
                    pair: (a.label().to_string(), b.label().to_string()),
                },
                report,
            ));
        }
    }
    Err(Error::NoMultiplierFound)
}

// ---------------------------------------------------------------------------
// The associate parameter of Y_E^phi

/// Which associate phi(x, z) the product is taken along.
#[derive(Debug, Clone)]
pub enum Phi {
    /// phi = x e^z, the fast path.
    Xez,
    /// phi = x: the degenerate associate; the product is z-independent.
    Identity,
    /// A general associate given by its z-rows.
    Series(SeriesXZ),
}

fn div_floor(a: i64, b: i64) -> i64 {
    num_integer::Integer::div_floor(&a, &b)
}

fn div_ceil(a: i64, b: i64) -> i64 {
    -num_integer::Integer::div_floor(&-a, &b)
}

impl Phi {
    pub fn from_associate(a: &Associate) -> Phi {
        Phi::Series(a.phi.clone())
    }

    /// x1^m as a series in (x, z), rows below z^zorder.
    fn substitute_power(&self, m: i64, xvar: &str, zorder: i64) -> Result<SeriesXZ> {
        match self {
            Phi::Xez => {
                let mono = LaurentSeries::monomial(xvar, Scalar::one(), m);
                Ok(substitute_xez(&mono, xvar, "z", zorder))
            }
            Phi::Identity => Ok(SeriesXZ::exact(
                "z",
                0,
                vec![LaurentSeries::monomial(xvar, Scalar::one(), m)],
            )),
            Phi::Series(phi) => {
                let mono = LaurentSeries::monomial(xvar, Scalar::one(), m);
                substitute_assoc(&mono, &phi.truncate_z(zorder))
            }
        }
    }

    /// Per-z-row bounds (lo, hi) on the x-shift rate of substitution: row j
    /// of the substituted x1^m has x-exponents within [m + lo*j, m + hi*j].
    fn shift_bounds(&self) -> (i64, i64) {
        match self {
            Phi::Xez | Phi::Identity => (0, 0),
            Phi::Series(phi) => {
                let mut lo = 0i64;
                let mut hi = 0i64;
                for (j, row) in phi.rows() {
                    if j <= 0 {
                        continue;
                    }
                    for (k, c) in row.terms() {
                        if c.is_zero() {
                            continue;
                        }
                        let rel = k - 1;
                        lo = lo.min(div_floor(rel, j));
                        hi = hi.max(div_ceil(rel, j));
                    }
                }
                (lo, hi)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Y_E^phi

struct YphiPlan {
    /// True when the multiplied product vanished on the probe window.
    zero: bool,
    /// Post-multiplier x1 exponents to compute, inclusive.
    r1: (i64, i64),
    /// Post-multiplier x exponents to compute, inclusive.
    rx: (i64, i64),
    /// Lower bound on the x-exponents of the substituted product.
    sub_xlo: i64,
    /// x-range of the substituted table.
    sub_x: (i64, i64),
    /// The inverse factor p(phi(x,z), x)^{-1}.
    pinv: SeriesXZ,
    pinv_xlo: i64,
    pinv_xhi: i64,
    out_z: (i64, i64),
}

fn plan_y_phi<V: Vect>(
    a: &FieldOperator<V>,
    b: &FieldOperator<V>,
    phi: &Phi,
    mult: &Multiplier,
    w: &V,
    xwin: (i64, i64),
    zorder: i64,
) -> Result<YphiPlan> {
    let xvar = "x";
    let kz = mult.zero_multiplicity_at_one() as i64;
    let zorder_p = zorder + 2 * kz + 2;

    // the inverse factor p(phi(x,z), x)^{-1}
    let mut p_sub = SeriesXZ::zero("z", xvar, 0, zorder_p);
    for (e, c) in mult.terms() {
        let s = phi.substitute_power(e[0], xvar, zorder_p)?;
        let xm = LaurentSeries::monomial(xvar, c, e[1]);
        p_sub = p_sub.add(&s.scale_series(&xm)?)?;
    }
    let pinv = p_sub.invert_unit()?;
    if pinv.zlo() + zorder - 1 >= pinv.zhi() {
        return Err(Error::PrecisionExhausted(format!(
            "inverse multiplier has z-rows below {}, need {}",
            pinv.zhi(),
            pinv.zlo() + zorder
        )));
    }
    let mut pinv_xlo = 0i64;
    let mut pinv_xhi = 0i64;
    let mut pinv_whi = i64::MAX;
    let out_z = (pinv.zlo(), pinv.zlo() + zorder - 1);
    for (j, row) in pinv.rows() {
        if j > out_z.1 {
            break;
        }
        if let Some(v) = row.valuation() {
            pinv_xlo = pinv_xlo.min(v);
        }
        for (k, c) in row.terms() {
            if !c.is_zero() {
                pinv_xhi = pinv_xhi.max(k);
            }
        }
        if !row.is_exact() {
            pinv_whi = pinv_whi.min(row.hi());
        }
    }

    // substituted-table x-range that feeds the final window through the
    // inverse-factor convolution
    let sub_x = (xwin.0 - pinv_xhi, xwin.1 - pinv_xlo);

    // lower corner of the multiplied product, certified by window growth;
    // with support in a quadrant, each target coefficient of the
    // substitution is a finite sum over an anti-diagonal triangle
    let nb = b.ann_bound(w)?;
    let d_probe = nb.abs() + xwin.0.abs().max(xwin.1.abs()) + 4;
    let minima = stable_minima(a, b, w, mult, d_probe)?;
    let (m1, m2) = match minima {
        None => {
            return Ok(YphiPlan {
                zero: true,
                r1: (0, -1),
                rx: (0, -1),
                sub_xlo: 0,
                sub_x,
                pinv,
                pinv_xlo,
                pinv_xhi,
                out_z,
            })
        }
        Some(m) => m,
    };
    let (slo, _shi) = phi.shift_bounds();
    let neg_shift = slo.min(0) * (zorder - 1).max(0);
    let cap = sub_x.1 - neg_shift;
    let r1 = (m1, cap - m2);
    let rx = (m2, cap - m1);
    let sub_xlo = m1 + m2 + neg_shift;
    if pinv_whi <= xwin.1 - sub_xlo {
        return Err(Error::PrecisionExhausted(format!(
            "inverse multiplier rows are x-exact only below {pinv_whi}, need {}",
            xwin.1 - sub_xlo
        )));
    }
    Ok(YphiPlan {
        zero: r1.1 < r1.0,
        r1,
        rx,
        sub_xlo,
        sub_x,
        pinv,
        pinv_xlo,
        pinv_xhi,
        out_z,
    })
}

/// The Y_E^phi product evaluated on one state: coefficients of x^m z^j in
/// (Y_E^phi(a(x), z) b(x)) w, as a table over vars ("x", "z"), exact on its
/// claimed window. The z-rows start at the valuation forced by the
/// multiplier; rows below it are identically zero.
pub fn y_phi_on_state<V: Vect>(
    a: &FieldOperator<V>,
    b: &FieldOperator<V>,
    phi: &Phi,
    cert: &CertifiedMultiplier,
    w: &V,
    xwin: (i64, i64),
    zorder: i64,
) -> Result<WindowTable<V>> {
    if cert.pair() != (a.label(), b.label()) {
        return Err(Error::UncertifiedMultiplier(format!(
            "certificate is for ({}, {}), product is ({}, {})",
            cert.pair().0,
            cert.pair().1,
            a.label(),
            b.label()
        )));
    }
    let mult = &cert.mult;
    let plan = plan_y_phi(a, b, phi, mult, w, xwin, zorder)?;
    let xz_vars = vec!["x".to_string(), "z".to_string()];
    if plan.zero {
        return Ok(WindowTable::new(
            xz_vars,
            vec![xwin, plan.out_z],
            Shape::Distribution,
        ));
    }
    let (d1, dx) = mult.exp_spans();

    // 1. raw product on the pre-multiplier box, then the multiplier
    let raw = product_window(
        a,
        b,
        w,
        (plan.r1.0 - d1.1, plan.r1.1 - d1.0),
        (plan.rx.0 - dx.1, plan.rx.1 - dx.0),
    )?;
    let pm = raw
        .table
        .mul_poly(&mult.terms())
        .restricted(vec![plan.r1, plan.rx]);

    // 2. substitute x1 = phi(x, z)
    let mut sub = WindowTable::new(
        xz_vars.clone(),
        vec![plan.sub_x, (0, zorder - 1)],
        Shape::Distribution,
    );
    let mut cache: HashMap<i64, SeriesXZ> = HashMap::new();
    for (k, v) in pm.entries() {
        let (e1, ex) = (k[0], k[1]);
        let s = match cache.get(&e1) {
            Some(s) => s.clone(),
            None => {
                let s = phi.substitute_power(e1, "x", zorder)?;
                cache.insert(e1, s.clone());
                s
            }
        };
        for (j, row) in s.rows() {
            if j >= zorder {
                break;
            }
            for (kx, c) in row.terms() {
                if !c.is_zero() {
                    sub.accumulate(vec![ex + kx, j], v.cv_scale(c));
                }
            }
        }
    }

    // 3. multiply by the inverse factor
    let mut pinv_tab = WindowTable::new(
        xz_vars,
        vec![(plan.pinv_xlo, plan.pinv_xhi), plan.out_z],
        Shape::Distribution,
    );
    for (j, row) in plan.pinv.rows() {
        if j > plan.out_z.1 {
            break;
        }
        for (kx, c) in row.terms() {
            if !c.is_zero() {
                pinv_tab.accumulate(vec![kx, j], c.clone());
            }
        }
    }
    Ok(convolve(&sub, &pinv_tab, vec![xwin, plan.out_z]))
}

/// Sound bound N(w) for the composite field a_n^phi b: its modes m >= N(w)
/// vanish on w, uniformly in n.
fn composite_ann<V: Vect>(
    a: &FieldOperator<V>,
    b: &FieldOperator<V>,
    phi: &Phi,
    mult: &Multiplier,
    w: &V,
) -> Result<i64> {
    let plan = plan_y_phi(a, b, phi, mult, w, (0, 0), 2)?;
    if plan.zero {
        return Ok(0);
    }
    Ok(-(plan.sub_xlo + plan.pinv_xlo))
}

/// The mode a(x)_n^phi b(x) as a new field, closing E(W) under the partial
/// products. Results are cached per (mode, state).
pub fn mode<V: Vect>(
    a: &FieldOperator<V>,
    n: i64,
    b: &FieldOperator<V>,
    phi: &Phi,
    cert: &CertifiedMultiplier,
) -> FieldOperator<V> {
    let label = format!("({}_{{{}}}{})", a.label(), n, b.label());
    let (a1, b1, phi1, cert1) = (a.clone(), b.clone(), phi.clone(), cert.clone());
    let (a2, b2, phi2, cert2) = (a.clone(), b.clone(), phi.clone(), cert.clone());
    // one table per state, over an x-window grown on demand: successive mode
    // requests against the same state (window products) share a single
    // product evaluation
    type TableMemo<V> = HashMap<String, ((i64, i64), WindowTable<V>)>;
    let memo: Arc<Mutex<TableMemo<V>>> = Arc::new(Mutex::new(HashMap::new()));
    FieldOperator::new(
        label,
        move |m, w: &V| {
            let x = -m - 1;
            let key = w.to_string();
            let mut guard = memo.lock().unwrap();
            let grow = match guard.get(&key) {
                Some((xw, _)) if xw.0 <= x && x <= xw.1 => None,
                Some((xw, _)) => Some((xw.0.min(x - 8), xw.1.max(x + 8))),
                None => Some((x - 8, x + 8)),
            };
            if let Some(xwin) = grow {
                let zorder = (-n - 1).max(0) + 8;
                let t = y_phi_on_state(&a1, &b1, &phi1, &cert1, w, xwin, zorder)?;
                guard.insert(key.clone(), (xwin, t));
            }
            let (_, t) = guard.get(&key).unwrap();
            let zr = t.ranges()[1];
            if -n - 1 < zr.0 {
                // below the z-valuation of the product: exactly zero
                Ok(V::cv_zero())
            } else if -n - 1 > zr.1 {
                Err(Error::WindowEscape(format!(
                    "mode {n} lies above the computed z-window [{}, {}]",
                    zr.0, zr.1
                )))
            } else {
                Ok(t.get(&[x, -n - 1]))
            }
        },
        move |w| composite_ann(&a2, &b2, &phi2, cert2.multiplier(), w),
    )
}

// ---------------------------------------------------------------------------
// Locality relations

/// A Laurent polynomial fraction in one ratio variable t.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioFn {
    pub num: Vec<(i64, Scalar)>,
    pub den: Vec<(i64, Scalar)>,
}

impl RatioFn {
    pub fn one() -> Self {
        RatioFn {
            num: vec![(0, Scalar::one())],
            den: vec![(0, Scalar::one())],
        }
    }

    /// Expansion of q(x1/x2) in ascending powers of x1/x2 (the direction
    /// with |x2| > |x1|), `order` terms from the valuation up, as a 2-var
    /// exponent table.
    pub fn iota_table(&self, order: i64) -> Result<WindowTable<Scalar>> {
        let lo_n = self.num.iter().map(|(j, _)| *j).min().unwrap_or(0);
        let lo_d = self
            .den
            .iter()
            .map(|(j, _)| *j)
            .min()
            .ok_or(Error::DivisionByZero)?;
        let lead = self
            .den
            .iter()
            .find(|(j, _)| *j == lo_d)
            .map(|(_, c)| c.clone())
            .ok_or(Error::DivisionByZero)?;
        if lead.is_zero() {
            return Err(Error::DivisionByZero);
        }
        let lead_inv = lead.inv()?;
        let v = lo_n - lo_d;
        let mut res: Vec<(i64, Scalar)> = Vec::new();
        for step in 0..order {
            let k = v + step;
            let mut acc = self
                .num
                .iter()
                .find(|(j, _)| *j == k + lo_d)
                .map(|(_, c)| c.clone())
                .unwrap_or_else(Scalar::zero);
            for (e, re) in &res {
                if let Some((_, dc)) = self.den.iter().find(|(j, _)| *j == k - e + lo_d) {
                    acc = acc.sub(&re.mul(dc));
                }
            }
            res.push((k, acc.mul(&lead_inv)));
        }
        let hi = v + order - 1;
        let mut t = WindowTable::new(two_vars(), vec![(v, hi), (-hi, -v)], Shape::Distribution);
        for (k, c) in res {
            t.set(vec![k, -k], c);
        }
        Ok(t)
    }

    /// q(e^{x1-x2}) expanded around the diagonal, as a (x1, x2) exponent
    /// table: the series in u = x1 - x2 is truncated at u^{u_order}, each
    /// power of u is expanded in at most k_max nonnegative powers of x1.
    pub fn exp_table(&self, u_order: i64, k_max: i64) -> Result<WindowTable<Scalar>> {
        let eu = exp_x_series("u", u_order + 2);
        let eu_inv = eu.invert_unit()?;
        let eval = |terms: &[(i64, Scalar)]| -> Result<LaurentSeries> {
            let mut acc = LaurentSeries::zero("u").truncate(u_order + 2);
            for (j, c) in terms {
                let mut p = LaurentSeries::one("u").truncate(u_order + 2);
                let base = if *j >= 0 { &eu } else { &eu_inv };
                for _ in 0..j.abs() {
                    p = p.mul(base)?;
                }
                acc = acc.add(&p.scale(c))?;
            }
            Ok(acc)
        };
        let num = eval(&self.num)?;
        let den = eval(&self.den)?;
        let series = num.mul(&den.invert_unit()?)?;
        if series.hi() <= u_order {
            return Err(Error::PrecisionExhausted(
                "exponential coefficient series lost precision".into(),
            ));
        }
        let val = series.valuation().unwrap_or(0);
        let mut t = WindowTable::new(
            two_vars(),
            vec![(0, k_max), (val - k_max, u_order)],
            Shape::Distribution,
        );
        for (n, c) in series.terms() {
            if c.is_zero() || n > u_order {
                continue;
            }
            // (x1 - x2)^n = sum_k binom(n, k) x1^k (-x2)^{n-k}
            for k in 0..=k_max {
                let co = binom(n, k as u64) * rat_int(parity(n - k));
                let scaled = c.scale_rat(&co);
                if !scaled.is_zero() {
                    t.accumulate(vec![k, n - k], scaled);
                }
            }
        }
        Ok(t)
    }
}

/// A declared locality relation
/// p * a(x1)b(x2) = p * sum_i iota(q_i(x1/x2)) u_i(x2) v_i(x1),
/// verified rather than trusted.
#[derive(Clone)]
pub struct LocalityRelation<V: Vect> {
    pub left: (FieldOperator<V>, FieldOperator<V>),
    pub right: Vec<(RatioFn, FieldOperator<V>, FieldOperator<V>)>,
    pub multiplier: Multiplier,
}

/// The defining exchange relation of the trig system for a generator pair.
pub fn trig_relation(module: &Arc<BgModule>, pair: (Gen, Gen)) -> LocalityRelation<ModuleState> {
    let q = module.kind().q_scalar();
    let a = module_field(module, pair.0);
    let b = module_field(module, pair.1);
    let qt_minus_1 = vec![(1, q.clone()), (0, Scalar::from_int(-1))];
    let t_minus_q = vec![(1, Scalar::one()), (0, q.neg())];
    if pair.0 == pair.1 {
        if q.is_one() {
            LocalityRelation {
                left: (a.clone(), b.clone()),
                right: vec![(RatioFn::one(), b, a)],
                multiplier: Multiplier::Power(0),
            }
        } else {
            LocalityRelation {
                left: (a.clone(), b.clone()),
                right: vec![(
                    RatioFn {
                        num: t_minus_q,
                        den: qt_minus_1.clone(),
                    },
                    b,
                    a,
                )],
                multiplier: Multiplier::RatioPoly(qt_minus_1),
            }
        }
    } else {
        let coeff = if q.is_one() {
            RatioFn::one()
        } else {
            RatioFn {
                num: qt_minus_1,
                den: t_minus_q,
            }
        };
        LocalityRelation {
            left: (a.clone(), b.clone()),
            right: vec![(coeff, b, a)],
            multiplier: Multiplier::Power(1),
        }
    }
}

/// Verify a declared locality relation exactly on [-d, d]^2, per sample.
pub fn check_strig_locality<V: Vect>(
    rel: &LocalityRelation<V>,
    d: i64,
    samples: &[V],
) -> Result<CheckReport> {
    let mut report = CheckReport::passing();
    let (a, b) = (&rel.left.0, &rel.left.1);
    let (s1, s2) = rel.multiplier.exp_spans();
    for (si, w) in samples.iter().enumerate() {
        let lhs = multiplied_product(a, b, w, &rel.multiplier, d)?;
        let mut rhs = WindowTable::new(two_vars(), vec![(-d, d), (-d, d)], Shape::Distribution);
        for (qi, ui, vi) in &rel.right {
            let nv = vi.ann_bound(w)?.abs();
            let iota = qi.iota_table(2 * d + nv + s1.1 - s1.0 + 6)?;
            let ir = iota.ranges().to_vec();
            let rp = product_window_rev(
                ui,
                vi,
                w,
                (-d - s1.1 - ir[0].1, d - s1.0 - ir[0].0),
                (-d - s2.1 - ir[1].1, d - s2.0 - ir[1].0),
            )?;
            let conv = convolve(
                &rp.table,
                &iota,
                vec![(-d - s1.1, d - s1.0), (-d - s2.1, d - s2.0)],
            );
            let term = conv
                .mul_poly(&rel.multiplier.terms())
                .restricted(vec![(-d, d), (-d, d)]);
            rhs = rhs.add(&term)?;
        }
        for loc in lhs.diff_locations(&rhs) {
            report.push(
                format!("locality of ({}, {}) on sample {si}", a.label(), b.label()),
                loc.clone(),
                format!("lhs = {}, rhs = {}", lhs.get(&loc), rhs.get(&loc)),
            );
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Composed products and locality conversion

fn three_vars() -> Vec<String> {
    vec!["x".to_string(), "x1".to_string(), "x2".to_string()]
}

/// A certificate cache keyed by field labels, populated on demand with
/// `find_multiplier` over the default candidates.
pub struct Certifier<V: Vect> {
    q: Scalar,
    samples: Vec<V>,
    d: i64,
    cache: Mutex<HashMap<(String, String), CertifiedMultiplier>>,
}

impl<V: Vect> Certifier<V> {
    pub fn new(q: Scalar, samples: Vec<V>, d: i64) -> Self {
        Certifier {
            q,
            samples,
            d,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn certify(
        &self,
        a: &FieldOperator<V>,
        b: &FieldOperator<V>,
    ) -> Result<CertifiedMultiplier> {
        let key = (a.label().to_string(), b.label().to_string());
        if let Some(hit) = self.cache.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        // composite pairs need multiplier zeros of order up to the window
        // depth at both t = 1 and t = q, so the candidate degree grows with d;
        // past degree 6 only those two zero locations ever certify, so the
        // tail skips the (q*t-1) factors instead of sweeping the full family
        let k_max = (2 * self.d + 2).max(6);
        let mut cands = default_candidates(&self.q, 6);
        for total in 7..=k_max {
            for a in (0..=total).rev() {
                cands.push(factored_candidate(&self.q, a, 0, total - a));
            }
        }
        let (cert, _) = find_multiplier(a, b, &self.samples, &cands, self.d)?;
        self.cache.lock().unwrap().insert(key, cert.clone());
        Ok(cert)
    }
}

/// Y^phi(outer, y_out) applied to the composite fields of
/// Y^phi(inner_a, y_in) inner_b, on w, as a 3-var table: axis `outer_axis`
/// carries the exponent of y_out, axis `inner_axis` that of y_in, axis 0
/// the underlying x. The inner coefficient of y_in^{e} is the composite
/// field (inner_a)_{-e-1}(inner_b).
#[allow(clippy::too_many_arguments)]
fn composed_table<V: Vect>(
    outer: &FieldOperator<V>,
    inner_a: &FieldOperator<V>,
    inner_b: &FieldOperator<V>,
    phi: &Phi,
    certs: &Certifier<V>,
    w: &V,
    dx: i64,
    r_outer: (i64, i64),
    r_inner: (i64, i64),
    outer_axis: usize,
    inner_axis: usize,
) -> Result<WindowTable<V>> {
    let cert_in = certs.certify(inner_a, inner_b)?;
    let kz_in = cert_in.multiplier().zero_multiplicity_at_one() as i64;
    let mut ranges = vec![(0, 0); 3];
    ranges[0] = (-dx, dx);
    ranges[outer_axis] = r_outer;
    ranges[inner_axis] = r_inner;
    let mut out = WindowTable::new(three_vars(), ranges, Shape::Distribution);
    for e_in in r_inner.0..=r_inner.1 {
        let j = -e_in - 1;
        if j >= kz_in {
            // composite modes at or above the multiplier's zero order are
            // zero fields
            continue;
        }
        let dj = mode(inner_a, j, inner_b, phi, &cert_in);
        let cert_out = certs.certify(outer, &dj)?;
        let zorder = r_outer.1.max(0) + 10;
        let t = y_phi_on_state(outer, &dj, phi, &cert_out, w, (-dx, dx), zorder)?;
        let zr = t.ranges()[1];
        if zr.1 < r_outer.1 {
            return Err(Error::WindowEscape(format!(
                "outer z-window [{}, {}] does not reach row {}",
                zr.0, zr.1, r_outer.1
            )));
        }
        for (k, v) in t.entries() {
            let e_out = k[1];
            if e_out < r_outer.0 || e_out > r_outer.1 {
                continue;
            }
            let mut exps = vec![0; 3];
            exps[0] = k[0];
            exps[outer_axis] = e_out;
            exps[inner_axis] = e_in;
            out.accumulate(exps, v.clone());
        }
    }
    Ok(out)
}

/// Check the conversion of a verified locality relation for (a, b) into
/// (x1-x2)^k-locality of the Y_E^e products, with coefficients
/// q_i(e^{x1-x2}) and k the multiplicity of the zero of p at t = 1. Both
/// sides are assembled as (x, x1, x2) tables against span fields c and
/// sampled states.
pub fn check_locality_conversion<V: Vect>(
    rel: &LocalityRelation<V>,
    c_fields: &[FieldOperator<V>],
    samples: &[V],
    d: i64,
    q: &Scalar,
) -> Result<CheckReport> {
    let mut report = CheckReport::passing();
    let k = rel.multiplier.zero_multiplicity_at_one() as i64;
    let phi = Phi::Xez;
    let (a, b) = (&rel.left.0, &rel.left.1);
    let certs = Certifier::new(q.clone(), samples.to_vec(), d);
    let kpow: Vec<(Vec<i64>, Scalar)> = Multiplier::Power(k as u32)
        .terms()
        .into_iter()
        .map(|(e, c)| (vec![0, e[0], e[1]], c))
        .collect();
    let win3 = vec![(-d, d), (-d, d), (-d, d)];
    for c in c_fields {
        for (si, w) in samples.iter().enumerate() {
            let lhs_raw = composed_table(
                a,
                b,
                c,
                &phi,
                &certs,
                w,
                d,
                (-d - k, d),
                (-d - k, d),
                1,
                2,
            )?;
            let lhs = lhs_raw.mul_poly(&kpow).restricted(win3.clone());
            let mut rhs = WindowTable::new(three_vars(), win3.clone(), Shape::Distribution);
            for (qi, ui, vi) in &rel.right {
                let cert_vc = certs.certify(vi, c)?;
                let n_in = composite_ann(vi, c, &phi, cert_vc.multiplier(), w)?;
                let k_max = d + k + n_in.abs() + 4;
                let u_order = k_max + d + k + 10;
                let coeff2 = qi.exp_table(u_order, k_max)?;
                let cr = coeff2.ranges().to_vec();
                // u_i attaches to x2 (outer), v_i to x1 (inner)
                let raw = composed_table(
                    ui,
                    vi,
                    c,
                    &phi,
                    &certs,
                    w,
                    d,
                    (-d - k - cr[1].1, d - cr[1].0),
                    (-d - k - cr[0].1, d - cr[0].0),
                    2,
                    1,
                )?;
                let coeff3 = {
                    let mut t = WindowTable::new(
                        three_vars(),
                        vec![(0, 0), cr[0], cr[1]],
                        Shape::Distribution,
                    );
                    for (e, v) in coeff2.entries() {
                        t.set(vec![0, e[0], e[1]], v.clone());
                    }
                    t
                };
                let conv = convolve(&raw, &coeff3, vec![(-d, d), (-d - k, d), (-d - k, d)]);
                rhs = rhs.add(&conv.mul_poly(&kpow).restricted(win3.clone()))?;
            }
            for loc in lhs.diff_locations(&rhs) {
                report.push(
                    format!(
                        "conversion of ({}, {}) against {} on sample {si} (k = {k})",
                        a.label(),
                        b.label(),
                        c.label()
                    ),
                    loc.clone(),
                    format!("lhs = {}, rhs = {}", lhs.get(&loc), rhs.get(&loc)),
                );
            }
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Jacobi-type identity

fn xxz_vars() -> Vec<String> {
    vec!["x1".to_string(), "x2".to_string(), "z".to_string()]
}

/// (x2 z)^{-1} delta((x1 - x2)/(x2 z)) * T, with (x1 - x2)^n expanded in
/// nonnegative powers of x2, on [-d, d]^3.
fn delta_front<V: Vect>(t: &WindowTable<V>, d: i64) -> WindowTable<V> {
    let mut out = WindowTable::new(
        xxz_vars(),
        vec![(-d, d), (-d, d), (-d, d)],
        Shape::Distribution,
    );
    for (k, v) in t.entries() {
        for tz in -d..=d {
            let n = -tz - 1;
            for t1 in -d..=d.min(k[0] + n) {
                let j = k[0] + n - t1;
                let t2 = k[1] + j - n - 1;
                if t2 < -d || t2 > d {
                    continue;
                }
                let c = binom(n, j as u64) * rat_int(parity(j));
                if num_traits::Zero::is_zero(&c) {
                    continue;
                }
                out.accumulate(vec![t1, t2, tz], v.cv_scale(&Scalar::from_rat(c)));
            }
        }
    }
    out
}

/// (x2 z)^{-1} delta((x2 - x1)/(-x2 z)) * T, with (x2 - x1)^n expanded in
/// nonnegative powers of x1, on [-d, d]^3.
fn delta_back<V: Vect>(t: &WindowTable<V>, d: i64) -> WindowTable<V> {
    let mut out = WindowTable::new(
        xxz_vars(),
        vec![(-d, d), (-d, d), (-d, d)],
        Shape::Distribution,
    );
    for (k, v) in t.entries() {
        for tz in -d..=d {
            let n = -tz - 1;
            for t1 in (-d).max(k[0])..=d {
                let j = t1 - k[0];
                let t2 = k[1] - j - 1;
                if t2 < -d || t2 > d {
                    continue;
                }
                let c = binom(n, j as u64) * rat_int(parity(j + n));
                if num_traits::Zero::is_zero(&c) {
                    continue;
                }
                out.accumulate(vec![t1, t2, tz], v.cv_scale(&Scalar::from_rat(c)));
            }
        }
    }
    out
}

/// x1^{-1} delta(x2(1+z)/x1) * (the product series at z -> log(1+z),
/// x -> x2), on [-d, d]^3. Row (kx, zrow) of the product table carries
/// x2^{kx} log(1+z)^{zrow}.
fn delta_substituted<V: Vect>(ytab: &WindowTable<V>, d: i64) -> Result<WindowTable<V>> {
    let zr = ytab.ranges()[1];
    let zorder = d + zr.0.abs() + 4;
    let lg = log1p_series("z", zorder);
    let lg_unit_inv = lg.shift(-1).invert_unit()?;
    let lg_inv = lg_unit_inv.shift(-1);
    let mut pow_cache: HashMap<i64, LaurentSeries> = HashMap::new();
    let mut lpow = |e: i64| -> Result<LaurentSeries> {
        if let Some(p) = pow_cache.get(&e) {
            return Ok(p.clone());
        }
        let base = if e >= 0 { lg.clone() } else { lg_inv.clone() };
        let mut acc = LaurentSeries::one("z").truncate(zorder);
        for _ in 0..e.abs() {
            acc = acc.mul(&base)?;
        }
        pow_cache.insert(e, acc.clone());
        Ok(acc)
    };
    let mut out = WindowTable::new(
        xxz_vars(),
        vec![(-d, d), (-d, d), (-d, d)],
        Shape::Distribution,
    );
    for (k, v) in ytab.entries() {
        let (kx, zrow) = (k[0], k[1]);
        let lp = lpow(zrow)?;
        for t1 in -d..=d {
            let m = -t1 - 1;
            let t2 = m + kx;
            if t2 < -d || t2 > d {
                continue;
            }
            // z-content: (1+z)^m * log(1+z)^{zrow}
            for (zl, lc) in lp.terms() {
                if lc.is_zero() {
                    continue;
                }
                for j in 0..=(d - zl).max(-1) {
                    let tz = j + zl;
                    if tz < -d {
                        continue;
                    }
                    let c = binom(m, j as u64);
                    if num_traits::Zero::is_zero(&c) {
                        continue;
                    }
                    out.accumulate(vec![t1, t2, tz], v.cv_scale(&lc.scale_rat(&c)));
                }
            }
        }
    }
    Ok(out)
}

fn pow_int(base: i64, e: u64) -> Rat {
    let mut acc = rat_int(1);
    for _ in 0..e {
        acc *= rat_int(base);
    }
    acc
}

/// Check the phi-coordinated Jacobi identity for a verified relation of
/// (u, v): the three-term delta form on a (x1, x2, z) window and the
/// residue form on a (x1, x2) window, with the internal product realized
/// by Y_E^e modes. Returns the report plus the residue right-hand side per
/// sample, for callers that want to inspect the reduction.
pub fn check_jacobi_phi<V: Vect>(
    u: &FieldOperator<V>,
    v: &FieldOperator<V>,
    rel: &LocalityRelation<V>,
    d: i64,
    samples: &[V],
    q: &Scalar,
) -> Result<(CheckReport, Vec<WindowTable<V>>)> {
    let mut report = CheckReport::passing();
    let mut residues = Vec::new();
    let phi = Phi::Xez;
    let certs = Certifier::new(q.clone(), samples.to_vec(), d);
    let cert = certs.certify(u, v)?;
    for (si, w) in samples.iter().enumerate() {
        let nv = v.ann_bound(w)?.abs();
        // A = u(x1) v(x2) w on a box wide enough for the delta convolutions
        let abox = vec![(-2 * d - 2, 2 * d + nv + 2), ((-d - 2).min(-nv - 2), 4 * d + 4)];
        let a_tab = product_window(u, v, w, abox[0], abox[1])?.table;
        // B = sum_i iota(q_i) u_i(x2) v_i(x1) w
        let bbox = vec![(-d - nv - 4, d), ((-d - 2).min(-nv - 2), 2 * d + nv + 4)];
        let mut b_tab = WindowTable::new(two_vars(), bbox.clone(), Shape::Distribution);
        for (qi, ui, vi) in &rel.right {
            let nvi = vi.ann_bound(w)?.abs();
            let iota = qi.iota_table(2 * d + nvi + nv + 8)?;
            let ir = iota.ranges().to_vec();
            let rp = product_window_rev(
                ui,
                vi,
                w,
                (bbox[0].0 - ir[0].1, bbox[0].1 - ir[0].0),
                (bbox[1].0 - ir[1].1, bbox[1].1 - ir[1].0),
            )?;
            let conv = convolve(&rp.table, &iota, bbox.clone());
            b_tab = b_tab.add(&conv)?;
        }
        // the product table, x playing the role of x2
        let ytab = y_phi_on_state(u, v, &phi, &cert, w, (-2 * d - 2, 2 * d + 2), d + 8)?;

        // residue form: A - B = sum_{n>=0} sum_m ((m+1)^n/n!)
        //   x1^{-m-1} x2^{m+1+kx} T[kx, -n-1]
        let lhs_res = a_tab.sub(&b_tab)?.restricted(vec![(-d, d), (-d, d)]);
        let mut rhs_res =
            WindowTable::new(two_vars(), vec![(-d, d), (-d, d)], Shape::Distribution);
        for (k, val) in ytab.entries() {
            let n = -k[1] - 1;
            if n < 0 {
                continue;
            }
            for m in (-d - 1)..=(d - 1) {
                let weight = Scalar::from_rat(pow_int(m + 1, n as u64) / factorial(n as u64));
                if weight.is_zero() {
                    continue;
                }
                rhs_res.accumulate(vec![-m - 1, m + 1 + k[0]], val.cv_scale(&weight));
            }
        }
        for loc in lhs_res.diff_locations(&rhs_res) {
            report.push(
                format!(
                    "residue form ({}, {}) on sample {si}",
                    u.label(),
                    v.label()
                ),
                loc.clone(),
                format!("lhs = {}, rhs = {}", lhs_res.get(&loc), rhs_res.get(&loc)),
            );
        }

        // three-term delta form
        let lhs_delta = delta_front(&a_tab, d).sub(&delta_back(&b_tab, d))?;
        let rhs_delta = delta_substituted(&ytab, d)?;
        for loc in lhs_delta.diff_locations(&rhs_delta) {
            report.push(
                format!("delta form ({}, {}) on sample {si}", u.label(), v.label()),
                loc.clone(),
                format!(
                    "lhs = {}, rhs = {}",
                    lhs_delta.get(&loc),
                    rhs_delta.get(&loc)
                ),
            );
        }
        residues.push(rhs_res);
    }
    Ok((report, residues))
}

// ---------------------------------------------------------------------------
// Weak associativity and the state-field homomorphism

/// Check (x0+x2)^k Y(a, x0+x2) Y(b, x2) c = (x0+x2)^k Y(Y(a, x0)b, x2) c on
/// sampled states, both sides realized as (x, x0, x2) tables on [-d, d]^3.
pub fn check_weak_assoc<V: Vect>(
    a: &FieldOperator<V>,
    b: &FieldOperator<V>,
    c: &FieldOperator<V>,
    k: u32,
    phi: &Phi,
    samples: &[V],
    d: i64,
    q: &Scalar,
) -> Result<CheckReport> {
    let mut report = CheckReport::passing();
    let certs = Certifier::new(q.clone(), samples.to_vec(), d);
    let cert_bc = certs.certify(b, c)?;
    let cert_ab = certs.certify(a, b)?;
    let k = k as i64;
    let zorder = 2 * d + k + 16;
    let vars = vec!["x".to_string(), "x0".to_string(), "x2".to_string()];
    for (si, w) in samples.iter().enumerate() {
        // inner z-window of Y(b, x2) c on w
        let inner = y_phi_on_state(b, c, phi, &cert_bc, w, (0, 0), d + 8)?;
        let izr = inner.ranges()[1];

        // LHS: inner row jz carries x2^{jz}; the outer zeta-row p turns
        // zeta^p (x0+x2)^k into (x0+x2)^{k+p}, which needs k + p >= 0
        let mut lhs = WindowTable::new(
            vars.clone(),
            vec![(-d, d), (-d, d), (-d, d)],
            Shape::Distribution,
        );
        for jz in izr.0..=d.min(izr.1) {
            let n = -jz - 1;
            let dj = mode(b, n, c, phi, &cert_bc);
            let cert_adj = certs.certify(a, &dj)?;
            let t = y_phi_on_state(a, &dj, phi, &cert_adj, w, (-d, d), zorder)?;
            for (ke, v) in t.entries() {
                let p = ke[1];
                if k + p < 0 {
                    return Err(Error::PolicyError(format!(
                        "associativity exponent {k} does not clear the z-valuation {p}"
                    )));
                }
                for i in 0..=(k + p) {
                    let c0 = Scalar::from_rat(binom(k + p, i as u64));
                    lhs.accumulate(vec![ke[0], k + p - i, jz + i], v.cv_scale(&c0));
                }
            }
        }

        // RHS: sum_n x0^{-n-1} (x0+x2)^k Y(a_n^phi b, x2) c w; composite
        // fields with n at or above the multiplier's zero order are zero
        let kz_ab = cert_ab.multiplier().zero_multiplicity_at_one() as i64;
        let mut rhs = WindowTable::new(
            vars.clone(),
            vec![(-d, d), (-d, d), (-d, d)],
            Shape::Distribution,
        );
        for n in (-(d + k) - 1)..kz_ab {
            let en = mode(a, n, b, phi, &cert_ab);
            let cert_enc = certs.certify(&en, c)?;
            let t = y_phi_on_state(&en, c, phi, &cert_enc, w, (-d, d), zorder)?;
            for (ke, v) in t.entries() {
                let j2 = ke[1];
                for i in 0..=k {
                    let c0 = Scalar::from_rat(binom(k, i as u64));
                    rhs.accumulate(vec![ke[0], -n - 1 + k - i, j2 + i], v.cv_scale(&c0));
                }
            }
        }
        for loc in lhs.diff_locations(&rhs) {
            report.push(
                format!(
                    "weak associativity ({}, {}, {}) with k = {k} on sample {si}",
                    a.label(),
                    b.label(),
                    c.label()
                ),
                loc.clone(),
                format!("lhs = {}, rhs = {}", lhs.get(&loc), rhs.get(&loc)),
            );
        }
    }
    Ok(report)
}

/// Check that mode extraction is consistent with the full product: for each
/// z-row of Y_E^phi(u(x), z) v(x) w, the composite field's modes reproduce
/// the table column by column.
pub fn state_field_check<V: Vect>(
    u: &FieldOperator<V>,
    v: &FieldOperator<V>,
    phi: &Phi,
    samples: &[V],
    d: i64,
    q: &Scalar,
) -> Result<CheckReport> {
    let mut report = CheckReport::passing();
    let certs = Certifier::new(q.clone(), samples.to_vec(), d);
    let cert = certs.certify(u, v)?;
    for (si, w) in samples.iter().enumerate() {
        let rhs = y_phi_on_state(u, v, phi, &cert, w, (-d, d), d + 4)?;
        let zr = rhs.ranges()[1];
        let mut lhs = WindowTable::new(
            vec!["x".to_string(), "z".to_string()],
            vec![(-d, d), zr],
            Shape::Distribution,
        );
        for zrow in zr.0..=zr.1 {
            let n = -zrow - 1;
            let f = mode(u, n, v, phi, &cert);
            for e in -d..=d {
                lhs.set(vec![e, zrow], f.apply(-e - 1, w)?);
            }
        }
        for loc in lhs.diff_locations(&rhs) {
            report.push(
                format!("state-field ({}, {}) on sample {si}", u.label(), v.label()),
                loc.clone(),
                format!("lhs = {}, rhs = {}", lhs.get(&loc), rhs.get(&loc)),
            );
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Finite-dimensional oracle

/// A coordinate vector over Q(q), for the matrix-field oracle module.
#[derive(Debug, Clone, PartialEq)]
pub struct QVec(pub Vec<Scalar>);

impl CoeffValue for QVec {
    fn cv_zero() -> Self {
        QVec(Vec::new())
    }
    fn cv_is_zero(&self) -> bool {
        self.0.iter().all(|c| c.is_zero())
    }
    fn cv_add(&self, other: &Self) -> Self {
        let n = self.0.len().max(other.0.len());
        let get = |v: &[Scalar], i: usize| v.get(i).cloned().unwrap_or_else(Scalar::zero);
        QVec(
            (0..n)
                .map(|i| get(&self.0, i).add(&get(&other.0, i)))
                .collect(),
        )
    }
    fn cv_scale(&self, c: &Scalar) -> Self {
        if c.is_zero() {
            return QVec(Vec::new());
        }
        QVec(self.0.iter().map(|v| v.mul(c)).collect())
    }
}

impl fmt::Display for QVec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, "]")
    }
}

/// A 2x2 matrix of Laurent polynomials in x: a field on W = Q(q)^2 whose
/// vertex operator is evaluation, Y_W(a, x0) = a(x0).
#[derive(Debug, Clone)]
pub struct MatField {
    pub label: String,
    pub entries: [[LaurentSeries; 2]; 2],
}

impl MatField {
    pub fn new(label: impl Into<String>, entries: [[LaurentSeries; 2]; 2]) -> Self {
        MatField {
            label: label.into(),
            entries,
        }
    }

    pub fn field(&self) -> FieldOperator<QVec> {
        let entries = self.entries.clone();
        let entries2 = self.entries.clone();
        FieldOperator::new(
            self.label.clone(),
            move |n, w: &QVec| {
                let get = |i: usize| w.0.get(i).cloned().unwrap_or_else(Scalar::zero);
                let mut out = vec![Scalar::zero(); 2];
                for (i, row) in entries.iter().enumerate() {
                    for (j, e) in row.iter().enumerate() {
                        out[i] = out[i].add(&e.coeff(-n - 1).mul(&get(j)));
                    }
                }
                Ok(QVec(out))
            },
            move |_| {
                let mut lo = 0i64;
                for row in &entries2 {
                    for e in row {
                        if let Some(v) = e.valuation() {
                            lo = lo.min(v);
                        }
                    }
                }
                Ok(-lo)
            },
        )
    }

    fn max_abs_exp(&self) -> i64 {
        let mut m = 0i64;
        for row in &self.entries {
            for e in row {
                for (k, c) in e.terms() {
                    if !c.is_zero() {
                        m = m.max(k.abs());
                    }
                }
            }
        }
        m
    }
}

/// Verify the evaluation construction on W = Q(q)^2: the engine's Y_E^phi
/// product equals the closed form a(phi(x, z)) b(x) entry-exactly on each
/// basis vector, and the flow property e^{z D} b(x) = b(phi(x, z)) holds
/// with D = p(x) d/dx.
pub fn borcherds_oracle(
    a: &MatField,
    b: &MatField,
    p: &LaurentSeries,
    assoc: &Associate,
    order: i64,
) -> Result<CheckReport> {
    let mut report = CheckReport::passing();
    let phi = Phi::Series(assoc.phi.clone());
    let af = a.field();
    let bf = b.field();
    let basis = [
        QVec(vec![Scalar::one(), Scalar::zero()]),
        QVec(vec![Scalar::zero(), Scalar::one()]),
    ];
    let samples: Vec<QVec> = basis.to_vec();
    let cands = vec![Multiplier::Power(0)];
    let deg = a.max_abs_exp().max(b.max_abs_exp());
    let (cert, _) = find_multiplier(&af, &bf, &samples, &cands, 2 * deg + 4)?;

    // closed form a(phi(x, z)) * b(x), entrywise
    let tr = assoc.phi.truncate_z(order + 1);
    let mut closed: Vec<Vec<SeriesXZ>> = Vec::new();
    for i in 0..2 {
        let mut row_out = Vec::new();
        for j in 0..2 {
            let mut acc = SeriesXZ::zero("z", "x", 0, order + 1);
            for (kk, entry) in a.entries[i].iter().enumerate() {
                let s = substitute_assoc(entry, &tr)?;
                acc = acc.add(&s.scale_series(&b.entries[kk][j])?)?;
            }
            row_out.push(acc);
        }
        closed.push(row_out);
    }

    let xw = 2 * order + 2 * deg + 2;
    for (bi, w) in basis.iter().enumerate() {
        let engine = y_phi_on_state(&af, &bf, &phi, &cert, w, (-xw, xw), order)?;
        let mut want = WindowTable::new(
            vec!["x".to_string(), "z".to_string()],
            engine.ranges().to_vec(),
            Shape::Distribution,
        );
        for (i, row_out) in closed.iter().enumerate() {
            let entry = &row_out[bi];
            for (zj, row) in entry.rows() {
                if zj >= engine.ranges()[1].1 + 1 {
                    break;
                }
                for (kx, c) in row.terms() {
                    if c.is_zero() || kx < -xw || kx > xw {
                        continue;
                    }
                    let mut vv = vec![Scalar::zero(); 2];
                    vv[i] = c.clone();
                    want.accumulate(vec![kx, zj], QVec(vv));
                }
            }
        }
        for loc in engine.diff_locations(&want) {
            report.push(
                format!("closed form vs engine on e{}", bi + 1),
                loc.clone(),
                format!("engine = {}, closed = {}", engine.get(&loc), want.get(&loc)),
            );
        }
    }

    // flow property on b: e^{z D} b(x) = b(phi(x, z))
    for (i, row) in b.entries.iter().enumerate() {
        for (j, entry) in row.iter().enumerate() {
            let mut rows = Vec::new();
            let mut cur = entry.clone();
            let mut fact = rat_int(1);
            for n in 0..=order {
                if n > 0 {
                    cur = p.mul(&cur.derivative())?;
                    fact *= rat_int(n);
                }
                rows.push(cur.scale(&Scalar::from_rat(rat_int(1) / fact.clone())));
            }
            let lhs = SeriesXZ::new("z", 0, rows);
            let rhs = substitute_assoc(entry, &assoc.phi.truncate_z(order + 1))?;
            if !lhs.agrees_with(&rhs) {
                report.push(
                    "flow property",
                    vec![i as i64, j as i64],
                    format!("entry ({i},{j}): flow and substitution differ"),
                );
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests;
