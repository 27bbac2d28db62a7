use std::sync::Arc;

use super::*;
use crate::fockrep::{build_module, BgModule, Gen, SystemKind, TruncPolicy};
use crate::scalars::rat_int;

fn trig_module() -> Arc<BgModule> {
    let kind = SystemKind::trig_symbolic();
    let policy = TruncPolicy::new(2, -48).unwrap();
    Arc::new(build_module(kind, policy).unwrap())
}

fn trig_module_q1() -> Arc<BgModule> {
    let kind = SystemKind::trig_at(rat_int(1)).unwrap();
    let policy = TruncPolicy::new(3, -48).unwrap();
    Arc::new(build_module(kind, policy).unwrap())
}

fn xez() -> Phi {
    Phi::Xez
}

#[test]
fn power_multiplier_terms() {
    let t = Multiplier::Power(2).terms();
    // (x1 - x2)^2 = x1^2 - 2 x1 x2 + x2^2
    assert_eq!(t.len(), 3);
    assert!(t.contains(&(vec![2, 0], Scalar::one())));
    assert!(t.contains(&(vec![1, 1], Scalar::from_int(-2))));
    assert!(t.contains(&(vec![0, 2], Scalar::one())));
}

#[test]
fn zero_multiplicity_at_one() {
    assert_eq!(Multiplier::Power(0).zero_multiplicity_at_one(), 0);
    assert_eq!(Multiplier::Power(3).zero_multiplicity_at_one(), 3);
    // q*t - 1 does not vanish at t = 1 for symbolic q
    let qt1 = Multiplier::RatioPoly(vec![(1, Scalar::q()), (0, Scalar::from_int(-1))]);
    assert_eq!(qt1.zero_multiplicity_at_one(), 0);
    // (t - 1)^2 = t^2 - 2t + 1
    let sq = Multiplier::RatioPoly(vec![
        (2, Scalar::one()),
        (1, Scalar::from_int(-2)),
        (0, Scalar::one()),
    ]);
    assert_eq!(sq.zero_multiplicity_at_one(), 2);
}

#[test]
fn identity_product_single_entry() {
    let one: FieldOperator<ModuleState> = FieldOperator::identity();
    let m = trig_module();
    let w = m.vacuum();
    let p = product_window(&one, &one, &w, (-2, 2), (-2, 2)).unwrap();
    for e1 in -2..=2 {
        for e2 in -2..=2 {
            let got = p.table.get(&[e1, e2]);
            if (e1, e2) == (0, 0) {
                assert_eq!(got, w);
            } else {
                assert!(got.is_zero());
            }
        }
    }
}

#[test]
fn iota_expansion_of_trig_coefficient() {
    // (t - q) / (q t - 1) = q + (q^2 - 1) t + (q^3 - q) t^2 + ...
    let q = Scalar::q();
    let f = RatioFn {
        num: vec![(1, Scalar::one()), (0, q.neg())],
        den: vec![(1, q.clone()), (0, Scalar::from_int(-1))],
    };
    let t = f.iota_table(3).unwrap();
    assert_eq!(t.get(&[0, 0]), q);
    assert_eq!(t.get(&[1, -1]), q.mul(&q).sub(&Scalar::one()));
    let q3 = q.mul(&q).mul(&q);
    assert_eq!(t.get(&[2, -2]), q3.sub(&q));
}

#[test]
fn exp_table_of_one_is_one() {
    let t = RatioFn::one().exp_table(6, 4).unwrap();
    let entries: Vec<_> = t.entries().collect();
    assert_eq!(entries.len(), 1);
    assert_eq!(t.get(&[0, 0]), Scalar::one());
}

#[test]
fn find_multiplier_identity_pair() {
    let one: FieldOperator<ModuleState> = FieldOperator::identity();
    let m = trig_module();
    let cands = default_candidates(&m.kind().q_scalar(), 3);
    let (cert, rep) = find_multiplier(&one, &one, &[m.vacuum()], &cands, 4).unwrap();
    assert!(rep.pass);
    assert_eq!(cert.multiplier(), &Multiplier::Power(0));
}

#[test]
fn find_multiplier_trig_mixed_pair() {
    let m = trig_module();
    let b = module_field(&m, Gen::Beta);
    let g = module_field(&m, Gen::Gamma);
    let cands = default_candidates(&m.kind().q_scalar(), 4);
    // (x1 - x2)^0 must fail (the contraction has an infinite tail), then
    // (x1 - x2)^1 certifies
    let (cert, _) = find_multiplier(&b, &g, &[m.vacuum()], &cands, 6).unwrap();
    assert_eq!(cert.multiplier(), &Multiplier::Power(1));
}

#[test]
fn find_multiplier_trig_same_letter_pair() {
    let m = trig_module();
    let b = module_field(&m, Gen::Beta);
    let cands = default_candidates(&m.kind().q_scalar(), 4);
    let (cert, _) = find_multiplier(&b, &b, &[m.vacuum()], &cands, 6).unwrap();
    // on the vacuum the same-letter product is already jointly truncated
    assert_eq!(cert.multiplier(), &Multiplier::Power(0));
}

#[test]
fn vacuum_property_left() {
    // Y(1_W, z) b acts as b(x), z-independently
    let m = trig_module();
    let one: FieldOperator<ModuleState> = FieldOperator::identity();
    let b = module_field(&m, Gen::Beta);
    let w = m.vacuum();
    let cands = vec![Multiplier::Power(0)];
    let (cert, _) = find_multiplier(&one, &b, &[w.clone()], &cands, 4).unwrap();
    let t = y_phi_on_state(&one, &b, &xez(), &cert, &w, (-4, 4), 4).unwrap();
    for e in -4..=4i64 {
        let want = b.apply(-e - 1, &w).unwrap();
        assert_eq!(t.get(&[e, 0]), want, "row 0 at x^{e}");
        for j in 1..4 {
            assert!(t.get(&[e, j]).is_zero(), "row {j} at x^{e}");
        }
    }
}

#[test]
fn vacuum_property_right() {
    // Y(b, z) 1_W w = b(phi(x, z)) w: row j carries e^j/j! times x^e
    let m = trig_module();
    let one: FieldOperator<ModuleState> = FieldOperator::identity();
    let b = module_field(&m, Gen::Beta);
    let w = m.vacuum();
    let cands = vec![Multiplier::Power(0)];
    let (cert, _) = find_multiplier(&b, &one, &[w.clone()], &cands, 4).unwrap();
    let t = y_phi_on_state(&b, &one, &xez(), &cert, &w, (-4, 4), 4).unwrap();
    for e in -4..=4i64 {
        let base = b.apply(-e - 1, &w).unwrap();
        for j in 0..4u64 {
            let want = base.cv_scale(&Scalar::from_rat(
                pow_int(e, j) / crate::series::factorial(j),
            ));
            assert_eq!(t.get(&[e, j as i64]), want, "x^{e} z^{j}");
        }
    }
}

#[test]
fn identity_associate_degenerates() {
    // phi = x: the product is z-independent and modes n != -1 vanish
    let m = trig_module();
    let b = module_field(&m, Gen::Beta);
    let g = module_field(&m, Gen::Gamma);
    let w = m.vacuum();
    let cands = vec![Multiplier::Power(0)];
    let (cert, _) = find_multiplier(&b, &b, &[w.clone()], &cands, 6).unwrap();
    let t = y_phi_on_state(&b, &b, &Phi::Identity, &cert, &w, (-4, 4), 4).unwrap();
    for (k, _) in t.entries() {
        assert_eq!(k[1], 0, "nonzero entry off row 0 at {k:?}");
    }
    let f = mode(&b, -1, &b, &Phi::Identity, &cert);
    let direct = product_window(&b, &b, &w, (-4, 4), (-4, 4)).unwrap();
    // row 0 at x^e is the diagonal sum of the raw product
    let mut want = ModuleState::vacuum().scale(&Scalar::zero());
    for e1 in -4..=4i64 {
        let v = direct.table.get(&[e1, -2 - e1]);
        want = want.add(&v);
    }
    assert_eq!(f.apply(1, &w).unwrap(), want);
    let f0 = mode(&b, 0, &b, &Phi::Identity, &cert);
    assert!(f0.apply(-1, &w).unwrap().is_zero());
    let _ = g;
}

#[test]
fn flagship_mixed_mode_zero_is_identity() {
    // (beta_0^e gamma) = 1_W and (beta_n^e gamma) = 0 for n >= 1
    let m = trig_module();
    let b = module_field(&m, Gen::Beta);
    let g = module_field(&m, Gen::Gamma);
    let cands = default_candidates(&m.kind().q_scalar(), 4);
    let vac = m.vacuum();
    let (cert, _) = find_multiplier(&b, &g, &[vac.clone()], &cands, 6).unwrap();
    let f0 = mode(&b, 0, &g, &xez(), &cert);
    assert_eq!(f0.apply(-1, &vac).unwrap(), vac);
    for n in [-3i64, -2, 0, 1, 2] {
        assert!(f0.apply(n, &vac).unwrap().is_zero(), "mode {n}");
    }
    // modes at and above the multiplier zero order vanish as fields
    let f1 = mode(&b, 1, &g, &xez(), &cert);
    for n in -3..=2i64 {
        assert!(f1.apply(n, &vac).unwrap().is_zero());
    }
}

#[test]
fn uncertified_pair_is_rejected() {
    let m = trig_module();
    let b = module_field(&m, Gen::Beta);
    let g = module_field(&m, Gen::Gamma);
    let cands = default_candidates(&m.kind().q_scalar(), 4);
    let (cert, _) = find_multiplier(&b, &g, &[m.vacuum()], &cands, 6).unwrap();
    let err = y_phi_on_state(&g, &b, &xez(), &cert, &m.vacuum(), (-2, 2), 3).unwrap_err();
    assert!(matches!(err, Error::UncertifiedMultiplier(_)));
}

#[test]
fn multiplier_independence_small() {
    // the same product through (x1-x2)^1 and (x1-x2)^2 certificates
    let m = trig_module();
    let b = module_field(&m, Gen::Beta);
    let g = module_field(&m, Gen::Gamma);
    let vac = m.vacuum();
    let (c1, _) = find_multiplier(&b, &g, &[vac.clone()], &[Multiplier::Power(1)], 6).unwrap();
    let (c2, _) = find_multiplier(&b, &g, &[vac.clone()], &[Multiplier::Power(2)], 6).unwrap();
    let t1 = y_phi_on_state(&b, &g, &xez(), &c1, &vac, (-3, 3), 4).unwrap();
    let t2 = y_phi_on_state(&b, &g, &xez(), &c2, &vac, (-3, 3), 4).unwrap();
    assert!(t1.diff_locations(&t2).is_empty());
}

#[test]
fn strig_locality_all_instances() {
    let m = trig_module();
    let vac = vec![m.vacuum()];
    for pair in [(Gen::Beta, Gen::Beta), (Gen::Beta, Gen::Gamma)] {
        let rel = trig_relation(&m, pair);
        let rep = check_strig_locality(&rel, 3, &vac).unwrap();
        assert!(rep.pass, "{pair:?}: {:?}", rep.violations);
    }
    let m1 = trig_module_q1();
    let rel = trig_relation(&m1, (Gen::Beta, Gen::Beta));
    let rep = check_strig_locality(&rel, 3, &[m1.vacuum()]).unwrap();
    assert!(rep.pass, "{:?}", rep.violations);
}

#[test]
fn strig_locality_detects_corruption() {
    let m = trig_module();
    let mut rel = trig_relation(&m, (Gen::Beta, Gen::Gamma));
    // break the exchange coefficient
    rel.right[0].0.num[0].1 = Scalar::from_int(7);
    let rep = check_strig_locality(&rel, 3, &[m.vacuum()]).unwrap();
    assert!(!rep.pass);
    assert!(!rep.violations.is_empty());
    assert_eq!(rep.violations[0].location.len(), 2);
}

#[test]
fn state_field_consistency() {
    let m = trig_module();
    let b = module_field(&m, Gen::Beta);
    let g = module_field(&m, Gen::Gamma);
    let q = m.kind().q_scalar();
    let rep = state_field_check(&b, &g, &xez(), &[m.vacuum()], 2, &q).unwrap();
    assert!(rep.pass, "{:?}", rep.violations);
}

#[test]
fn jacobi_identity_trig_mixed() {
    let m = trig_module();
    let b = module_field(&m, Gen::Beta);
    let g = module_field(&m, Gen::Gamma);
    let q = m.kind().q_scalar();
    let rel = trig_relation(&m, (Gen::Beta, Gen::Gamma));
    let (rep, _) = check_jacobi_phi(&b, &g, &rel, 2, &[m.vacuum()], &q).unwrap();
    assert!(rep.pass, "{:?}", rep.violations);
}

#[test]
fn locality_conversion_trig_mixed_small() {
    let m = trig_module();
    let q = m.kind().q_scalar();
    let rel = trig_relation(&m, (Gen::Beta, Gen::Gamma));
    let one: FieldOperator<ModuleState> = FieldOperator::identity();
    let rep = check_locality_conversion(&rel, &[one], &[m.vacuum()], 2, &q).unwrap();
    assert!(rep.pass, "{:?}", rep.violations);
}

#[test]
fn weak_assoc_identity_triple() {
    let m = trig_module();
    let b = module_field(&m, Gen::Beta);
    let one: FieldOperator<ModuleState> = FieldOperator::identity();
    let q = m.kind().q_scalar();
    let rep = check_weak_assoc(&b, &one, &one, 0, &xez(), &[m.vacuum()], 2, &q).unwrap();
    assert!(rep.pass, "{:?}", rep.violations);
}

#[test]
fn borcherds_evaluation_module_p_x() {
    use crate::associates::associate_from_p;
    use crate::series::LaurentSeries;
    let x = LaurentSeries::x("x");
    let one = LaurentSeries::one("x");
    let zero = LaurentSeries::zero("x");
    let a = MatField::new(
        "a",
        [[x.clone(), zero.clone()], [zero.clone(), one.clone()]],
    );
    let b = MatField::new("b", [[one.clone(), x.clone()], [zero.clone(), one.clone()]]);
    let p = x.clone();
    let assoc = associate_from_p(&p, 6).unwrap();
    let rep = borcherds_oracle(&a, &b, &p, &assoc, 4).unwrap();
    assert!(rep.pass, "{:?}", rep.violations);
}

