//! Randomized invariants across the grid, cone, envelope, S-operator and LP
//! layers, on small grids.

use std::sync::Arc;

use proptest::prelude::*;
use qbpsh::casebook::{classify_trend, Trend};
use qbpsh::cone::{default_tolerance, StencilFamily};
use qbpsh::envelope::{greatest_minorant, least_psuper_majorant};
use qbpsh::ext::{ext_add, ext_max, ext_min, saturate, INF_TOKEN, V_MAX};
use qbpsh::formulas::eval_closed_form;
use qbpsh::grid::{make_domain, regularize, DomainKind, GridDomain, GridFunction, RegularizeMode};
use qbpsh::jensen::{build_cone, envelope_lp, jensen_lp, TOL_LP};
use qbpsh::psh::psh_check;
use qbpsh::sop::{reduced, s_lambda};

fn disc(res: usize) -> Arc<GridDomain> {
    Arc::new(make_domain(DomainKind::Disc1D, res, None).unwrap())
}

fn values(len: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(lo..hi, len)
}

fn quadratic(d: &Arc<GridDomain>, a: f64, b: [f64; 2], c: f64) -> GridFunction {
    GridFunction::from_fn(d.clone(), |n| {
        let (z, _) = d.complex_point(n);
        a * z.norm_sqr() + b[0] * z.re + b[1] * z.im + c
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn regularizations_sandwich_f(vals in values(81, -2.0, 2.0)) {
        let f = GridFunction::new(disc(9), vals);
        let lo = regularize(&f, RegularizeMode::Lsc);
        let hi = regularize(&f, RegularizeMode::Usc);
        for (n, v) in f.active_values() {
            prop_assert!(lo.values[n] <= v && v <= hi.values[n]);
        }
    }

    #[test]
    fn make_domain_is_deterministic(k in 0usize..5, half in 2usize..6) {
        let kind = [DomainKind::Disc1D, DomainKind::PuncturedDisc1D, DomainKind::Ball2C, DomainKind::Bidisc2C, DomainKind::ToricLog2D][k];
        let res = 2 * half + 1;
        let (a, b) = (make_domain(kind, res, None).unwrap(), make_domain(kind, res, None).unwrap());
        prop_assert_eq!(a.active_nodes(), b.active_nodes());
        prop_assert_eq!(a.boundary_nodes(), b.boundary_nodes());
        for n in 0..a.lattice_len {
            prop_assert_eq!(a.class_of(n), b.class_of(n));
        }
    }

    #[test]
    fn cone_closed_under_max_sum_and_scaling(a1 in 0.0f64..2.0, a2 in 0.0f64..2.0, b1 in -1.0f64..1.0, b2 in -1.0f64..1.0, s in 0.0f64..5.0) {
        let d = disc(17);
        let st = StencilFamily::one_variable();
        let tol = default_tolerance(&d);
        let f = quadratic(&d, a1, [b1, 0.3], 0.1);
        let g = quadratic(&d, a2, [-0.2, b2], -0.4);
        for h in [f.zip_with(&g, f64::max), f.zip_with(&g, |x, y| x + y), f.map(|x| s * x)] {
            prop_assert!(psh_check(&h, &st, tol).unwrap().is_member);
        }
    }

    #[test]
    fn violations_scale_linearly(vals in values(81, -1.0, 1.0), s in 0.1f64..4.0) {
        let f = GridFunction::new(disc(9), vals);
        let st = StencilFamily::one_variable();
        let v = psh_check(&f, &st, 0.0).unwrap().worst_violation;
        let vs = psh_check(&f.map(|x| s * x), &st, 0.0).unwrap().worst_violation;
        prop_assert!((vs - s * v).abs() <= 1e-12 * (1.0 + s * v));
    }

    #[test]
    fn minorant_lies_below_and_is_idempotent(vals in values(81, -1.0, 1.0)) {
        let d = disc(9);
        let f = GridFunction::new(d.clone(), vals);
        let st = StencilFamily::one_variable();
        let u = greatest_minorant(&f, &st).unwrap();
        prop_assert!(u.converged);
        for (n, v) in u.result.active_values() {
            prop_assert!(v <= f.values[n] + 1e-12);
        }
        prop_assert!(psh_check(&u.result, &st, default_tolerance(&d)).unwrap().is_member);
        let again = greatest_minorant(&u.result, &st).unwrap();
        prop_assert!(again.result.sup_abs_diff(&u.result, &d.active_nodes()) <= 10.0 * u.tolerance);
    }

    #[test]
    fn majorant_lies_above(vals in values(81, 0.0, 2.0)) {
        let f = GridFunction::new(disc(9), vals);
        let r = least_psuper_majorant(&f, &StencilFamily::one_variable()).unwrap();
        for (n, v) in r.result.active_values() {
            prop_assert!(v >= f.values[n] - 1e-12);
        }
    }

    #[test]
    fn s_lambda_homogeneous_and_monotone(vals in values(81, -1.0, 3.0), bump in values(81, 0.0, 1.0), alpha in 0.25f64..3.0) {
        let d = disc(9);
        let st = StencilFamily::one_variable();
        let f = GridFunction::new(d.clone(), vals);
        let g = f.zip_with(&GridFunction::new(d.clone(), bump), |x, y| x + y);
        let lambda = 0.5;
        let sf = s_lambda(&f, lambda, &st).unwrap();
        let scaled = s_lambda(&f.map(|x| alpha * x), alpha * lambda, &st).unwrap();
        prop_assert!(scaled.sup_abs_diff(&sf.map(|x| alpha * x), &d.active_nodes()) <= 1e-6 * (1.0 + alpha));
        let sg = s_lambda(&g, lambda, &st).unwrap();
        for (n, v) in sf.active_values() {
            prop_assert!(v <= sg.values[n] + 1e-6);
        }
    }

    #[test]
    fn reduction_is_subadditive(a in values(81, -1.0, 3.0), b in values(81, -1.0, 3.0)) {
        let d = disc(9);
        let st = StencilFamily::one_variable();
        let (f, g) = (GridFunction::new(d.clone(), a), GridFunction::new(d.clone(), b));
        let sum = reduced(&f.zip_with(&g, |x, y| x + y), 1.0, &st).unwrap();
        let (rf, rg) = (reduced(&f, 0.4, &st).unwrap(), reduced(&g, 0.6, &st).unwrap());
        for (n, v) in sum.active_values() {
            prop_assert!(v <= rf.values[n] + rg.values[n] + 1e-6);
        }
    }

    #[test]
    fn lp_weak_duality_and_monotonicity(vals in values(49, -1.0, 1.0), bump in values(49, 0.0, 0.5)) {
        let d = disc(7);
        let cone = build_cone(d.clone(), &StencilFamily::one_variable()).unwrap();
        let g = GridFunction::new(d.clone(), vals);
        let g2 = g.zip_with(&GridFunction::new(d.clone(), bump), |x, y| x + y);
        let z = d.index_of(&[3, 3]);
        let s = envelope_lp(&g, &cone, z).unwrap();
        let cert = jensen_lp(&g, &cone, z).unwrap();
        prop_assert!(s <= cert.objective + TOL_LP);
        prop_assert!(cert.verify(&cone) <= TOL_LP);
        prop_assert!(s <= envelope_lp(&g2, &cone, z).unwrap() + TOL_LP);
        let iterative = greatest_minorant(&g, &StencilFamily::one_variable()).unwrap();
        prop_assert!((iterative.result.values[z] - s).abs() <= iterative.tolerance + 1e-8);
    }

    #[test]
    fn extended_arithmetic_saturates(a in -2e6f64..2e6, b in -2e6f64..2e6) {
        let s = saturate(a);
        prop_assert!(s == INF_TOKEN || (-V_MAX..=V_MAX).contains(&s));
        prop_assert_eq!(saturate(s), s);
        prop_assert_eq!(ext_add(a, b), ext_add(b, a));
        prop_assert_eq!(ext_add(a, INF_TOKEN), INF_TOKEN);
        prop_assert!(ext_min(a, b) <= ext_max(a, b));
    }

    #[test]
    fn geometric_growth_diverges(start in 0.1f64..10.0, ratio in 1.5f64..4.0) {
        prop_assert_eq!(classify_trend(&[start, start * ratio, start * ratio * ratio]), Trend::Diverges);
        let damped = [start, start * (1.0 + 0.5 / ratio), start * (1.0 + 0.75 / ratio)];
        prop_assert!(matches!(classify_trend(&damped), Trend::Converges(_)));
    }
}

#[test]
fn pluriharmonic_polynomials_pass_both_signs() {
    let d = Arc::new(make_domain(DomainKind::Ball2C, 9, None).unwrap());
    let st = StencilFamily::two_variable();
    let tol = default_tolerance(&d);
    let f = GridFunction::from_fn(d.clone(), |n| {
        let (z, w) = d.complex_point(n);
        (z * z * 0.7 + z * w * 1.3 - w * 0.4).re + 0.2
    });
    assert!(psh_check(&f, &st, tol).unwrap().is_member);
    assert!(psh_check(&f.map(|x| -x), &st, tol).unwrap().is_member);
}

#[test]
fn closed_forms_are_finite_on_unmasked_interior_nodes() {
    let ball = Arc::new(make_domain(DomainKind::Ball2C, 9, None).unwrap());
    for (name, params) in [("ball_envelope_alpha", vec![0.5]), ("norm_sq", vec![])] {
        let f = eval_closed_form(name, &ball, &params).unwrap();
        for n in ball.interior_nodes() {
            let v = f.values[n];
            assert!(ball.is_masked(n) || v.is_finite(), "{name} at {n}: {v}");
        }
    }
}
