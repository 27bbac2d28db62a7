//! Randomized invariants: field laws for the scalars, window arithmetic for
//! the series layer, round-trips for associates, linearity of the module
//! action.

use proptest::prelude::*;

use phical::associates::{associate_from_p, p_from_associate};
use phical::fockrep::{build_module, Gen, ModuleState, SystemKind, TruncPolicy};
use phical::scalars::{rat, Poly, Rat, Scalar};
use phical::series::{
    compose, exp_series, iota_expand, log1p_series, LaurentSeries, MPoly, RationalExpr, EXACT,
};

fn small_rat() -> impl Strategy<Value = Rat> {
    (-6i64..=6, 1i64..=4).prop_map(|(n, d)| rat(n, d))
}

fn poly() -> impl Strategy<Value = Poly> {
    proptest::collection::vec(small_rat(), 1..4).prop_map(Poly::from_coeffs)
}

fn nonzero_poly() -> impl Strategy<Value = Poly> {
    poly().prop_filter("nonzero", |p| !p.is_zero())
}

fn scalar() -> impl Strategy<Value = Scalar> {
    (poly(), nonzero_poly()).prop_map(|(n, d)| Scalar::new(n, d).unwrap())
}

fn laurent() -> impl Strategy<Value = LaurentSeries> {
    proptest::collection::vec((-3i64..=4, small_rat()), 0..5).prop_map(|terms| {
        LaurentSeries::from_terms(
            "x",
            terms
                .into_iter()
                .map(|(k, c)| (k, Scalar::from_rat(c)))
                .collect(),
            EXACT,
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn scalar_ring_laws(a in scalar(), b in scalar(), c in scalar()) {
        prop_assert_eq!(a.add(&b), b.add(&a));
        prop_assert_eq!(a.mul(&b), b.mul(&a));
        prop_assert_eq!(a.add(&b).add(&c), a.add(&b.add(&c)));
        prop_assert_eq!(a.mul(&b).mul(&c), a.mul(&b.mul(&c)));
        prop_assert_eq!(a.mul(&b.add(&c)), a.mul(&b).add(&a.mul(&c)));
        prop_assert_eq!(a.sub(&a), Scalar::zero());
        prop_assert_eq!(a.mul(&Scalar::one()), a.clone());
    }

    #[test]
    fn scalar_inverse(a in scalar()) {
        if !a.is_zero() {
            prop_assert_eq!(a.mul(&a.inv().unwrap()), Scalar::one());
        }
    }

    #[test]
    fn poly_gcd_divides_both(a in nonzero_poly(), b in nonzero_poly()) {
        let g = a.gcd(&b);
        let (_, ra) = a.divrem(&g);
        let (_, rb) = b.divrem(&g);
        prop_assert!(ra.is_zero(), "gcd does not divide a: {} % {}", a, g);
        prop_assert!(rb.is_zero(), "gcd does not divide b: {} % {}", b, g);
        prop_assert_eq!(g.leading(), rat(1, 1));
    }

    #[test]
    fn laurent_ring_laws(a in laurent(), b in laurent(), c in laurent()) {
        prop_assert_eq!(a.add(&b).unwrap(), b.add(&a).unwrap());
        prop_assert_eq!(a.mul(&b).unwrap(), b.mul(&a).unwrap());
        prop_assert_eq!(
            a.mul(&b).unwrap().mul(&c).unwrap(),
            a.mul(&b.mul(&c).unwrap()).unwrap()
        );
        let lhs = a.mul(&b.add(&c).unwrap()).unwrap();
        let rhs = a.mul(&b).unwrap().add(&a.mul(&c).unwrap()).unwrap();
        prop_assert!(lhs.agrees_with(&rhs));
    }

    #[test]
    fn laurent_derivative_is_leibniz(a in laurent(), b in laurent()) {
        let lhs = a.mul(&b).unwrap().derivative();
        let rhs = a
            .derivative()
            .mul(&b)
            .unwrap()
            .add(&a.mul(&b.derivative()).unwrap())
            .unwrap();
        prop_assert!(lhs.agrees_with(&rhs));
    }

    #[test]
    fn exp_log_round_trip(order in 3i64..10) {
        let log = log1p_series("z", order);
        let explog = exp_series(&log).unwrap();
        let onepz = LaurentSeries::one("z")
            .add(&LaurentSeries::x("z"))
            .unwrap()
            .truncate(order);
        prop_assert!(explog.agrees_with(&onepz));
        let logexp = compose(
            &log1p_series("z", order),
            &exp_series(&LaurentSeries::x("z").truncate(order)).unwrap()
                .sub(&LaurentSeries::one("z")).unwrap(),
        )
        .unwrap();
        prop_assert!(logexp.agrees_with(&LaurentSeries::x("z").truncate(order)));
    }

    #[test]
    fn associate_round_trip(
        terms in proptest::collection::vec((-2i64..=3, small_rat()), 1..4)
    ) {
        let p = LaurentSeries::from_terms(
            "x",
            terms
                .into_iter()
                .map(|(k, c)| (k, Scalar::from_rat(c)))
                .collect(),
            EXACT,
        );
        let assoc = associate_from_p(&p, 6).unwrap();
        let back = p_from_associate(&assoc.phi).unwrap();
        prop_assert!(back.agrees_with(&p), "recovered {} from {}", back, p);
    }

    #[test]
    fn iota_is_multiplicative(
        c1 in small_rat().prop_filter("nonzero", |c| *c != rat(0, 1)),
        c2 in small_rat().prop_filter("nonzero", |c| *c != rat(0, 1)),
        order in 2i64..6,
    ) {
        // f_i = x - c_i z: both expandable in nonnegative powers of x
        let vars = vec!["x".to_string(), "z".to_string()];
        let x = MPoly::var(vars.clone(), "x");
        let z = MPoly::var(vars.clone(), "z");
        let one = MPoly::constant(vars.clone(), Scalar::one());
        let f1 = x.sub(&z.scale(&Scalar::from_rat(c1)));
        let f2 = x.sub(&z.scale(&Scalar::from_rat(c2)));
        let prod = f1.mul(&f2);
        let t1 = iota_expand(&RationalExpr::new(one.clone(), f1).unwrap(), "z", "x", order).unwrap();
        let t2 = iota_expand(&RationalExpr::new(one.clone(), f2).unwrap(), "z", "x", order).unwrap();
        let tp = iota_expand(&RationalExpr::new(one, prod).unwrap(), "z", "x", order).unwrap();
        let direct = t1.mul(&t2).unwrap();
        // compare on the window both sides certify
        prop_assert!(direct.agrees_with(&tp));
    }

    #[test]
    fn module_action_is_linear(n in -3i64..=3, c in small_rat()) {
        let m = build_module(
            SystemKind::rat_symbolic(),
            TruncPolicy::new(3, -6).unwrap(),
        )
        .unwrap();
        let v1 = m.act(Gen::Beta, -1, &m.vacuum()).unwrap();
        let v2 = m.act(Gen::Gamma, -2, &m.vacuum()).unwrap();
        let cs = Scalar::from_rat(c);
        let mix = v1.scale(&cs).add(&v2);
        for g in [Gen::Beta, Gen::Gamma] {
            let lhs = m.act(g, n, &mix).unwrap();
            let rhs = m
                .act(g, n, &v1)
                .unwrap()
                .scale(&cs)
                .add(&m.act(g, n, &v2).unwrap());
            prop_assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn module_state_vector_laws(c in small_rat(), d in small_rat()) {
        let m = build_module(
            SystemKind::rat_symbolic(),
            TruncPolicy::new(2, -4).unwrap(),
        )
        .unwrap();
        let v = m.act(Gen::Beta, -2, &m.vacuum()).unwrap();
        let w = m.act(Gen::Gamma, -1, &m.vacuum()).unwrap();
        let cs = Scalar::from_rat(c);
        let ds = Scalar::from_rat(d);
        prop_assert_eq!(v.add(&w), w.add(&v));
        prop_assert_eq!(v.sub(&v), ModuleState::zero());
        prop_assert_eq!(
            v.add(&w).scale(&cs),
            v.scale(&cs).add(&w.scale(&cs))
        );
        prop_assert_eq!(
            v.scale(&cs).scale(&ds),
            v.scale(&cs.mul(&ds))
        );
    }
}
