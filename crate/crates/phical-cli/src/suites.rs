//! Named identity suites behind `check-suite`.

use std::sync::Arc;

use phical::associates::{associate_from_p, p_from_associate, verify_associate};
use phical::eops::{
    borcherds_oracle, check_jacobi_phi, check_locality_conversion, check_strig_locality,
    check_weak_assoc, module_field, trig_relation, FieldOperator, MatField, Phi,
};
use phical::fockrep::{
    build_module, expansion_coeffs, BgModule, Gen, ModuleState, SystemKind, SystemTag,
    TruncPolicy,
};
use phical::report::CheckReport;
use phical::scalars::{rat_int, Scalar};
use phical::series::{
    compose, delta_term, delta_term_onepz, delta_term_subst, exp_series, exp_x_series,
    log1p_series, LaurentSeries,
};
use phical::{Error, Result};

pub const SUITE_NAMES: [&str; 9] = [
    "log-exp",
    "delta",
    "associates",
    "coeffs",
    "locality",
    "conversion",
    "jacobi",
    "weak-assoc",
    "borcherds",
];

pub fn run_suite(name: &str, order: i64, d: i64, kind: &SystemKind) -> Result<CheckReport> {
    match name {
        "log-exp" => log_exp(order),
        "delta" => delta(d.max(3)),
        "associates" => associates(order),
        "coeffs" => coeffs(order.max(3), kind),
        "locality" => locality(d),
        "conversion" => conversion(d),
        "jacobi" => jacobi(d),
        "weak-assoc" => weak_assoc(d),
        "borcherds" => borcherds(order.min(5)),
        "all" => {
            let mut report = CheckReport::passing();
            for n in SUITE_NAMES {
                report.merge(run_suite(n, order, d, kind)?);
            }
            Ok(report)
        }
        other => Err(Error::ParseError {
            offset: 0,
            message: format!("unknown suite '{other}'"),
        }),
    }
}

fn check_series(report: &mut CheckReport, context: &str, got: &LaurentSeries, want: &LaurentSeries) {
    if !got.agrees_with(want) {
        for k in got.lo().min(want.lo())..got.hi().min(want.hi()) {
            if got.coeff(k) != want.coeff(k) {
                report.push(context, vec![k], format!("expected {}, got {}", want.coeff(k), got.coeff(k)));
            }
        }
    }
}

fn log_exp(order: i64) -> Result<CheckReport> {
    let mut report = CheckReport::passing();
    let log = log1p_series("z", order);
    let explog = exp_series(&log)?;
    let onepz = LaurentSeries::one("z").add(&LaurentSeries::x("z"))?.truncate(order);
    check_series(&mut report, "exp(log(1+z)) = 1+z", &explog, &onepz);
    let em1 = exp_x_series("x", order).sub(&LaurentSeries::one("x"))?;
    let logexp = compose(&log1p_series("x", order), &em1)?;
    check_series(&mut report, "log(1+(e^x-1)) = x", &logexp, &LaurentSeries::x("x").truncate(order));
    Ok(report)
}

fn delta(d: i64) -> Result<CheckReport> {
    let mut report = CheckReport::passing();
    let v = ["x0", "x1", "x2"];
    // x0^-1 d((x1-x2)/x0) - x0^-1 d((x2-x1)/(-x0)) = x2^-1 d((x1-x0)/x2),
    // expansions in nonnegative powers of x2, x1, x0 respectively
    let t1 = delta_term(v, 0, 1, 2, 1, -1, 1, d);
    let t2 = delta_term(v, 0, 2, 1, -1, 1, 1, d);
    let rhs = delta_term(v, 2, 1, 0, 1, -1, 1, d);
    let diff = t1.sub(&t2)?.sub(&rhs)?;
    for loc in diff.diff_locations(&diff.scale(&Scalar::zero())) {
        report.push("three-term identity", loc, "nonzero difference entry");
    }
    // the same identity at x0 = x2 z; the right side becomes
    // x1^-1 d(x2(1+z)/x1)
    let w = ["x1", "x2", "z"];
    let s1 = delta_term_subst(w, 0, 1, 1, -1, 1, 1, 2, d);
    let s2 = delta_term_subst(w, 1, 0, -1, 1, 1, 1, 2, d);
    let sub_rhs = delta_term_onepz(w, 0, 1, 2, d);
    let sdiff = s1.sub(&s2)?.sub(&sub_rhs)?;
    for loc in sdiff.diff_locations(&sdiff.scale(&Scalar::zero())) {
        report.push("x0 = x2 z substitution", loc, "nonzero difference entry");
    }
    Ok(report)
}

fn associates(order: i64) -> Result<CheckReport> {
    let mut report = CheckReport::passing();
    let ps: Vec<(&str, LaurentSeries)> = vec![
        ("1+x", LaurentSeries::from_terms("x", vec![(0, Scalar::one()), (1, Scalar::one())], phical::series::EXACT)),
        ("x^2", LaurentSeries::monomial("x", Scalar::one(), 2)),
        ("2x^-1", LaurentSeries::monomial("x", Scalar::from_int(2), -1)),
        (
            "x^-2+3x^3",
            LaurentSeries::from_terms(
                "x",
                vec![(-2, Scalar::one()), (3, Scalar::from_int(3))],
                phical::series::EXACT,
            ),
        ),
        (
            "1/2 - x + x^2",
            LaurentSeries::from_terms(
                "x",
                vec![
                    (0, Scalar::from_rat(rat_int(1) / rat_int(2))),
                    (1, Scalar::from_int(-1)),
                    (2, Scalar::one()),
                ],
                phical::series::EXACT,
            ),
        ),
    ];
    for (label, p) in &ps {
        let assoc = associate_from_p(p, order)?;
        let back = p_from_associate(&assoc.phi)?;
        if !back.agrees_with(p) {
            report.push(format!("round-trip p = {label}"), vec![], format!("recovered {back}"));
        }
        report.merge(verify_associate(&assoc, order)?);
    }
    Ok(report)
}

fn coeffs(order: i64, kind: &SystemKind) -> Result<CheckReport> {
    let mut report = CheckReport::passing();
    let c = expansion_coeffs(kind, order)?;
    let (plain, prime, label) = match kind.tag {
        SystemTag::Trig => (&c.lambda, &c.lambda_prime, "lambda"),
        SystemTag::Rat => (&c.mu, &c.mu_prime, "mu"),
    };
    for n in 0..order as usize {
        let mut conv = Scalar::zero();
        for k in 0..=n {
            conv = conv.add(&plain[k].mul(&prime[n - k]));
        }
        let want = if n == 0 { Scalar::one() } else { Scalar::zero() };
        if conv != want {
            report.push(
                format!("{label} * {label}' = 1"),
                vec![n as i64],
                format!("coefficient {conv}"),
            );
        }
    }
    Ok(report)
}

fn trig_module() -> Result<Arc<BgModule>> {
    Ok(Arc::new(build_module(
        SystemKind::trig_symbolic(),
        TruncPolicy::new(2, -48)?,
    )?))
}

const PAIRS: [(Gen, Gen); 3] = [
    (Gen::Beta, Gen::Beta),
    (Gen::Gamma, Gen::Gamma),
    (Gen::Beta, Gen::Gamma),
];

fn locality(d: i64) -> Result<CheckReport> {
    let m = trig_module()?;
    let vac = vec![m.vacuum()];
    let mut report = CheckReport::passing();
    for pair in PAIRS {
        let rel = trig_relation(&m, pair);
        report.merge(check_strig_locality(&rel, d, &vac)?);
    }
    Ok(report)
}

fn conversion(d: i64) -> Result<CheckReport> {
    let m = trig_module()?;
    let q = m.kind().q_scalar();
    let vac = vec![m.vacuum()];
    let one: FieldOperator<ModuleState> = FieldOperator::identity();
    let mut report = CheckReport::passing();
    for pair in PAIRS {
        let rel = trig_relation(&m, pair);
        report.merge(check_locality_conversion(&rel, &[one.clone()], &vac, d, &q)?);
    }
    Ok(report)
}

fn jacobi(d: i64) -> Result<CheckReport> {
    let m = trig_module()?;
    let b = module_field(&m, Gen::Beta);
    let g = module_field(&m, Gen::Gamma);
    let q = m.kind().q_scalar();
    let rel = trig_relation(&m, (Gen::Beta, Gen::Gamma));
    let (report, _) = check_jacobi_phi(&b, &g, &rel, d, &[m.vacuum()], &q)?;
    Ok(report)
}

fn weak_assoc(d: i64) -> Result<CheckReport> {
    let m = trig_module()?;
    let b = module_field(&m, Gen::Beta);
    let g = module_field(&m, Gen::Gamma);
    let one: FieldOperator<ModuleState> = FieldOperator::identity();
    let q = m.kind().q_scalar();
    let mut report = CheckReport::passing();
    report.merge(check_weak_assoc(&b, &one, &one, 0, &Phi::Xez, &[m.vacuum()], d, &q)?);
    report.merge(check_weak_assoc(&g, &one, &one, 0, &Phi::Xez, &[m.vacuum()], d, &q)?);
    Ok(report)
}

fn borcherds(order: i64) -> Result<CheckReport> {
    let x = LaurentSeries::x("x");
    let one = LaurentSeries::one("x");
    let zero = LaurentSeries::zero("x");
    let pairs = [
        (
            MatField::new("diag", [[x.clone(), zero.clone()], [zero.clone(), one.clone()]]),
            MatField::new("upper", [[one.clone(), x.clone()], [zero.clone(), one.clone()]]),
        ),
        (
            MatField::new("lower", [[one.clone(), zero.clone()], [x.clone(), one.clone()]]),
            MatField::new("scale", [[x.clone(), zero.clone()], [zero.clone(), x.clone()]]),
        ),
        (
            MatField::new("mix", [[one.clone(), x.clone()], [x.clone(), zero.clone()]]),
            MatField::new("unit", [[one.clone(), zero.clone()], [zero.clone(), one.clone()]]),
        ),
    ];
    let ps = [
        ("1", one.clone()),
        ("x", x.clone()),
        ("x^2", LaurentSeries::monomial("x", Scalar::one(), 2)),
    ];
    let mut report = CheckReport::passing();
    for (a, b) in &pairs {
        for (label, p) in &ps {
            let assoc = associate_from_p(p, order + 2)?;
            let rep = borcherds_oracle(a, b, p, &assoc, order)?;
            if !rep.pass {
                report.push(format!("p = {label}"), vec![], "oracle mismatch");
            }
            report.merge(rep);
        }
    }
    Ok(report)
}
