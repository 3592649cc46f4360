//! Registry behaviour and cheap end-to-end case runs.

use qbpsh::casebook::{case_names, ladder, lookup_case, run_case, CASES};
use qbpsh::LabError;

#[test]
fn registry_is_consistent() {
    assert_eq!(case_names().len(), CASES.len());
    for c in CASES {
        assert!(c.default_resolution <= c.max_resolution, "{}", c.name);
        assert!(c.default_resolution % 2 == 1 && c.default_resolution >= 5, "{}", c.name);
    }
    assert!(matches!(lookup_case("nope"), Err(LabError::UnknownCase(_))));
}

#[test]
fn resolution_limits_are_enforced() {
    assert!(matches!(run_case("nonuniqueness_uv", 65), Err(LabError::ResolutionCap { resolution: 65, cap: 33 })));
    assert!(matches!(run_case("ex11_punctured_disc", 32), Err(LabError::InvalidResolution(32))));
    assert!(matches!(run_case("nope", 17), Err(LabError::UnknownCase(_))));
}

#[test]
fn ladder_needs_three_increasing_rungs() {
    assert!(matches!(ladder("ball_alpha_half", &[17]), Err(LabError::InvalidConfig(_))));
    assert!(matches!(ladder("ball_alpha_half", &[25, 17, 33]), Err(LabError::InvalidConfig(_))));
}

#[test]
fn cheap_cases_pass() {
    for (name, res) in [
        ("ex11_punctured_disc", 33),
        ("ball_alpha_half", 17),
        ("ball_log_verdicts", 33),
        ("psi_sqrt_neg_log_z", 33),
        ("psi_log1p_neg_log_zw", 33),
        ("psi_bounded", 33),
        ("hessian_identities", 33),
    ] {
        let rep = run_case(name, res).unwrap();
        let failed: Vec<_> = rep.failures().iter().map(|e| e.anchor.clone()).collect();
        assert!(rep.passed(), "{name} at {res}: {failed:?}");
        assert_eq!(rep.resolution, res);
        assert!(!rep.expectations.is_empty());
    }
}

#[test]
fn reports_serialize_with_anchors_and_are_repeatable() {
    let a = run_case("ball_alpha_half", 17).unwrap();
    let b = run_case("ball_alpha_half", 17).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    let v: serde_json::Value = serde_json::from_str(&a.to_json()).unwrap();
    let first = &v["expectations"][0];
    for key in ["anchor", "tag", "expected", "measured", "pass"] {
        assert!(!first[key].is_null(), "missing {key}");
    }
    assert_eq!(a.files, b.files);
}

#[test]
fn ladder_flags_decreasing_error() {
    let lad = ladder("ball_alpha_half", &[9, 13, 17]).unwrap();
    assert_eq!(lad.rows.len(), 3);
    assert!(lad.is_decreasing("sup_error"), "{:?}", lad.column("sup_error"));
    let csv = lad.to_csv();
    assert!(csv.starts_with("resolution,"));
    assert!(!csv.contains("runtime"));
    assert!(lad.timing_csv().starts_with("resolution,runtime_s\n"));
}
