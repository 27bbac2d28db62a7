//! Associates of the one-dimensional additive formal group: construction
//! from a generator p(x), recovery of p, and verification of the flow
//! axioms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report::CheckReport;
use crate::scalars::{Rat, Scalar};
use crate::series::{binom, substitute_assoc, LaurentSeries, MPoly, RationalExpr, SeriesXZ};

/// Only the additive group F(x,y) = x + y is instantiated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FormalGroup {
    Additive,
}

impl FormalGroup {
    /// F(x, 0) = x and associativity hold identically for x + y.
    pub fn law_holds(&self) -> bool {
        true
    }
}

/// A series phi(x,z) in F((x))[[z]] with phi(x,0) = x and
/// phi(phi(x,y),z) = phi(x,y+z), together with its generator p when known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Associate {
    pub phi: SeriesXZ,
    pub generator_p: Option<LaurentSeries>,
    pub order: i64,
}

impl Associate {
    pub fn row(&self, n: i64) -> LaurentSeries {
        self.phi.row(n)
    }
}

/// phi = e^{z p(x) d/dx} x: rows f_0 = x, f_{n+1} = p f_n' / (n+1), up to
/// and including z^order.
///
/// Applying p d/dx to a window [lo, hi) yields [lo + lo_p - 1, hi + lo_p - 1);
/// if p is truncated, the rows lose x-precision at that rate and the
/// construction fails early once a row's window closes.
pub fn associate_from_p(p: &LaurentSeries, order: i64) -> Result<Associate> {
    if order < 1 {
        return Err(Error::PolicyError("associate order must be >= 1".into()));
    }
    let xvar = p.var();
    let mut rows = vec![LaurentSeries::x(xvar)];
    for n in 0..order {
        let prev = rows.last().unwrap();
        let next = p
            .mul(&prev.derivative())?
            .scale(&Scalar::from_rat(Rat::new(1.into(), (n + 1).into())));
        if !next.is_exact() && next.hi() <= next.lo() {
            return Err(Error::PrecisionExhausted(format!(
                "row z^{} has empty x-window [{}, {})",
                n + 1,
                next.lo(),
                next.hi()
            )));
        }
        rows.push(next);
    }
    Ok(Associate {
        phi: SeriesXZ::new("z", 0, rows),
        generator_p: Some(p.clone()),
        order,
    })
}

/// p(x) = phi_z(x, 0): the z^1 row.
pub fn p_from_associate(phi: &SeriesXZ) -> Result<LaurentSeries> {
    let xvar = phi.xvar();
    if phi.zlo() > 0 || !phi.row(0).agrees_with(&LaurentSeries::x(xvar)) {
        return Err(Error::NotAnAssociateBase("phi(x,0) must equal x".into()));
    }
    Ok(phi.row(1))
}

fn rename_z(phi: &SeriesXZ, zvar: &str) -> SeriesXZ {
    SeriesXZ::new(zvar, phi.zlo(), phi.rows().map(|(_, r)| r.clone()).collect())
}

/// Check phi(x,0) = x and phi(phi(x,x2),x0) = phi(x,x0+x2) for all
/// bidegrees x0^m x2^j with m + j <= order.
pub fn verify_associate(assoc: &Associate, order: i64) -> Result<CheckReport> {
    let mut report = CheckReport::passing();
    let phi = &assoc.phi;
    let xvar = phi.xvar().to_string();
    if phi.zlo() > 0 || !phi.row(0).agrees_with(&LaurentSeries::x(&xvar)) {
        report.push("phi(x,0) = x", vec![0], "z^0 row differs from x");
        return Ok(report);
    }
    if let Some(p) = &assoc.generator_p {
        if !phi.row(1).agrees_with(p) {
            report.push(
                "phi_z(x,0) = p",
                vec![1],
                "z^1 row differs from the declared generator",
            );
        }
    }
    if order >= phi.zhi() {
        return Err(Error::PrecisionExhausted(format!(
            "flow check to total order {order} needs z-order > {order}, have {}",
            phi.zhi() - 1
        )));
    }
    let phi_x2 = rename_z(phi, "x2");
    // LHS coefficient of x0^m x2^j: row j of f_m(phi(x, x2));
    // RHS coefficient:               C(m+j, m) f_{m+j}(x).
    for m in 0..=order {
        let fm = phi.row(m);
        let subst = substitute_assoc(&fm, &phi_x2)?;
        for j in 0..=(order - m) {
            let lhs = subst.row(j);
            let rhs = phi
                .row(m + j)
                .scale(&Scalar::from_rat(binom(m + j, m as u64)));
            if !lhs.agrees_with(&rhs) {
                report.push(
                    "phi(phi(x,x2),x0) = phi(x,x0+x2)",
                    vec![m, j],
                    format!("x0^{m} x2^{j}: {lhs} != {rhs}"),
                );
            }
        }
    }
    Ok(report)
}

/// Check phi(phi(x,-z),z) = x to z-order `order`.
pub fn inverse_flow_check(assoc: &Associate, order: i64) -> Result<CheckReport> {
    let mut report = CheckReport::passing();
    let phi = &assoc.phi;
    let xvar = phi.xvar().to_string();
    if order >= phi.zhi() {
        return Err(Error::PrecisionExhausted(format!(
            "inverse flow check to order {order} needs z-order > {order}, have {}",
            phi.zhi() - 1
        )));
    }
    // phi(x,-z): negate odd rows
    let neg_rows: Vec<LaurentSeries> = phi
        .rows()
        .map(|(n, r)| {
            if n % 2 == 0 {
                r.clone()
            } else {
                r.neg()
            }
        })
        .collect();
    let phi_neg = SeriesXZ::new("z", 0, neg_rows);
    let mut total = SeriesXZ::zero("z", &xvar, 0, phi.zhi());
    for (m, fm) in phi.rows() {
        let subst = substitute_assoc(fm, &phi_neg)?;
        total = total.add(&subst.shift_z(m).truncate_z(phi.zhi()))?;
    }
    let expect = SeriesXZ::new("z", 0, vec![LaurentSeries::x(&xvar)]);
    for j in 0..=order {
        let lhs = total.row(j);
        let rhs = expect.row(j);
        if !lhs.agrees_with(&rhs) {
            report.push(
                "phi(phi(x,-z),z) = x",
                vec![j],
                format!("z^{j}: {lhs} != {rhs}"),
            );
        }
    }
    Ok(report)
}

/// Substitution witness: f(phi(x,z),x) != 0 for nonzero f when phi != x.
///
/// Only the numerator matters: the denominator substitutes to a unit. The
/// report records the witness coefficient location (z-exponent, x-exponent)
/// as pass data; an empty window is inconclusive, not a disproof.
pub fn injectivity_probe(f: &RationalExpr, assoc: &Associate) -> Result<(CheckReport, (i64, i64))> {
    let phi = &assoc.phi;
    let vars = f.vars().to_vec();
    if vars.len() != 2 {
        return Err(Error::VariableMismatch {
            expected: "x1,x".to_string(),
            got: vars.join(","),
        });
    }
    let subst_poly = |p: &MPoly| -> Result<SeriesXZ> {
        let xvar = phi.xvar().to_string();
        let mut acc = SeriesXZ::zero("z", &xvar, 0, phi.zhi());
        for (exps, c) in p.terms() {
            let (a, b) = (exps[0], exps[1]);
            let x1a = LaurentSeries::monomial("x1", c.clone(), a);
            let xb = LaurentSeries::monomial(&xvar, Scalar::one(), b);
            let s = substitute_assoc(&x1a, phi)?.scale_series(&xb)?;
            acc = acc.add(&s)?;
        }
        Ok(acc)
    };
    let num = subst_poly(&f.num)?;
    for (j, row) in num.rows() {
        if let Some(k) = row.valuation() {
            return Ok((CheckReport::passing(), (j, k)));
        }
    }
    Err(Error::WindowEscape(
        "inconclusive: no nonzero coefficient of f(phi(x,z),x) within the window".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::{exp_x_series, log1p_series, EXACT};

    fn sc(n: i64) -> Scalar {
        Scalar::from_int(n)
    }

    #[test]
    fn p_zero_gives_identity() {
        let a = associate_from_p(&LaurentSeries::zero("x"), 6).unwrap();
        assert!(a.row(0).agrees_with(&LaurentSeries::x("x")));
        for n in 1..=6 {
            assert!(a.row(n).is_zero_on_window());
        }
    }

    #[test]
    fn p_one_gives_translation() {
        let a = associate_from_p(&LaurentSeries::one("x"), 6).unwrap();
        assert!(a.row(1).agrees_with(&LaurentSeries::one("x")));
        for n in 2..=6 {
            assert!(a.row(n).is_zero_on_window());
        }
    }

    #[test]
    fn p_x_gives_x_exp_z() {
        let a = associate_from_p(&LaurentSeries::x("x"), 8).unwrap();
        for n in 0..=8 {
            let expect = LaurentSeries::monomial(
                "x",
                Scalar::from_rat(<Rat as num_traits::One>::one() / crate::series::factorial(n as u64)),
                1,
            );
            assert!(a.row(n).agrees_with(&expect), "row {n}");
        }
    }

    #[test]
    fn p_x_squared_gives_geometric() {
        // x/(1 - z x) = sum_n x^{n+1} z^n
        let p = LaurentSeries::monomial("x", sc(1), 2);
        let a = associate_from_p(&p, 8).unwrap();
        for n in 0..=8 {
            let expect = LaurentSeries::monomial("x", sc(1), n + 1);
            assert!(a.row(n).agrees_with(&expect), "row {n}");
        }
    }

    #[test]
    fn p_x_inverse_gives_sqrt() {
        // flow of p = x^-1 is x (1 + 2z/x^2)^{1/2}: row n is
        // C(1/2, n) 2^n x^{1-2n}
        let p = LaurentSeries::monomial("x", sc(1), -1);
        let a = associate_from_p(&p, 6).unwrap();
        let mut c = Rat::new(1.into(), 1.into());
        for n in 0..=6i64 {
            let expect = LaurentSeries::monomial("x", Scalar::from_rat(c.clone()), 1 - 2 * n);
            assert!(a.row(n).agrees_with(&expect), "row {n}");
            // c_{n+1} = c_n * (1/2 - n) * 2 / (n + 1)
            c = c * Rat::new((1 - 2 * n).into(), (n + 1).into());
        }
        assert!(verify_associate(&a, 5).unwrap().pass);
    }

    #[test]
    fn round_trip_p() {
        let p = LaurentSeries::from_terms(
            "x",
            vec![(-1, sc(2)), (0, sc(-1)), (3, sc(5))],
            EXACT,
        );
        let a = associate_from_p(&p, 5).unwrap();
        let p2 = p_from_associate(&a.phi).unwrap();
        assert!(p2.agrees_with(&p));
    }

    #[test]
    fn verify_passes_and_detects_corruption() {
        let p = LaurentSeries::monomial("x", sc(1), 2);
        let a = associate_from_p(&p, 7).unwrap();
        assert!(verify_associate(&a, 6).unwrap().pass);

        // hand-corrupted: phi = x + z + z*x is not an associate
        let bad = Associate {
            phi: SeriesXZ::new(
                "z",
                0,
                vec![
                    LaurentSeries::x("x"),
                    LaurentSeries::from_terms("x", vec![(0, sc(1)), (1, sc(1))], EXACT),
                    LaurentSeries::zero("x"),
                    LaurentSeries::zero("x"),
                ],
            ),
            generator_p: None,
            order: 3,
        };
        let rep = verify_associate(&bad, 2).unwrap();
        assert!(!rep.pass);
        assert!(!rep.violations.is_empty());
    }

    #[test]
    fn inverse_flow() {
        for p in [
            LaurentSeries::x("x"),
            LaurentSeries::one("x"),
            LaurentSeries::monomial("x", sc(1), 2),
        ] {
            let a = associate_from_p(&p, 7).unwrap();
            assert!(inverse_flow_check(&a, 6).unwrap().pass);
        }
    }

    #[test]
    fn injectivity_witness() {
        let vars = vec!["x1".to_string(), "x".to_string()];
        let f = RationalExpr::new(
            MPoly::var(vars.clone(), "x1").sub(&MPoly::var(vars.clone(), "x")),
            MPoly::constant(vars.clone(), Scalar::one()),
        )
        .unwrap();
        let a = associate_from_p(&LaurentSeries::x("x"), 5).unwrap();
        let (rep, (j, k)) = injectivity_probe(&f, &a).unwrap();
        assert!(rep.pass);
        // x e^z - x has lowest term x z
        assert_eq!((j, k), (1, 1));
    }

    #[test]
    fn exp_log_sanity_for_rows() {
        // row check used by the p = x^-1 case: log and exp really invert
        let l = log1p_series("z", 8);
        let e = exp_x_series("z", 8);
        let em1 = e.sub(&LaurentSeries::one("z")).unwrap();
        let comp = crate::series::compose(&l, &em1).unwrap();
        assert!(comp.agrees_with(&LaurentSeries::x("z")));
    }
}
