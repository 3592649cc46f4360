//! Registered closed forms, evaluated pointwise with saturation.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{LabError, Result};
use crate::ext::INF_TOKEN;
use crate::grid::{DomainKind, GridDomain, GridFunction};

/// Catalogue entry: name, parameter count range, and whether the formula only
/// depends on `(|z|, |w|)` (so it can be evaluated on the toric domain).
pub struct FormulaInfo {
    pub name: &'static str,
    pub min_params: usize,
    pub max_params: usize,
    pub rotation_invariant: bool,
    pub description: &'static str,
}

pub const CATALOGUE: &[FormulaInfo] = &[
    FormulaInfo { name: "constant", min_params: 1, max_params: 1, rotation_invariant: true, description: "c" },
    FormulaInfo { name: "re_z", min_params: 0, max_params: 0, rotation_invariant: false, description: "Re z" },
    FormulaInfo { name: "re_zw", min_params: 0, max_params: 0, rotation_invariant: false, description: "Re(zw)" },
    FormulaInfo { name: "norm_sq", min_params: 0, max_params: 0, rotation_invariant: true, description: "|z|^2 + |w|^2" },
    FormulaInfo { name: "neg_norm_sq", min_params: 0, max_params: 0, rotation_invariant: true, description: "-(|z|^2 + |w|^2)" },
    FormulaInfo { name: "poisson_kernel", min_params: 0, max_params: 0, rotation_invariant: false, description: "(1-|z|^2)/|1-z|^2" },
    FormulaInfo { name: "neg_log_abs_z", min_params: 0, max_params: 1, rotation_invariant: true, description: "min(-log|z|, cap)" },
    FormulaInfo { name: "log_abs_z", min_params: 0, max_params: 1, rotation_invariant: true, description: "c*log|z|" },
    FormulaInfo { name: "neg_log_abs_z_pow", min_params: 1, max_params: 2, rotation_invariant: true, description: "min((-log|z|)^a, cap)" },
    FormulaInfo { name: "neg_log_abs_zw_pow", min_params: 1, max_params: 2, rotation_invariant: true, description: "min((-log|zw|)^a, cap)" },
    FormulaInfo { name: "ball_envelope_alpha", min_params: 1, max_params: 1, rotation_invariant: true, description: "(-1/2 log(1-|w|^2))^a" },
    FormulaInfo { name: "ball_zw_envelope_alpha", min_params: 1, max_params: 1, rotation_invariant: true, description: "three-regime envelope of (-log|zw|)^a" },
    FormulaInfo { name: "first_example_family", min_params: 1, max_params: 1, rotation_invariant: true, description: "-1/2 log(1-r|w|^2)" },
    FormulaInfo { name: "nonuniq_u", min_params: 0, max_params: 0, rotation_invariant: false, description: "(1-|z|^2)/|1-z|^2 on the ball" },
    FormulaInfo { name: "nonuniq_v", min_params: 0, max_params: 0, rotation_invariant: false, description: "|w|^2/|1-z|^2" },
    FormulaInfo { name: "nonuniq_v_eps", min_params: 1, max_params: 1, rotation_invariant: false, description: "|w|^2/|1+eps-z|^2" },
    FormulaInfo { name: "u_tilde", min_params: 0, max_params: 0, rotation_invariant: false, description: "u - log|z-1|" },
    FormulaInfo { name: "v_tilde", min_params: 0, max_params: 0, rotation_invariant: false, description: "v - log|z-1|" },
];

pub fn lookup(name: &str) -> Option<&'static FormulaInfo> {
    CATALOGUE.iter().find(|f| f.name == name)
}

fn check_alpha(a: f64, upper: f64) -> Result<()> {
    if a > 0.0 && a <= upper {
        Ok(())
    } else {
        Err(LabError::ParamOutOfRange(format!("exponent {a} not in (0, {upper}]")))
    }
}

fn capped(v: f64, cap: Option<f64>) -> f64 {
    match cap {
        Some(c) if v > c => c,
        _ => v,
    }
}

fn validate(name: &str, params: &[f64]) -> Result<&'static FormulaInfo> {
    let info = lookup(name).ok_or_else(|| LabError::UnknownFormula(name.to_string()))?;
    if params.len() < info.min_params || params.len() > info.max_params {
        return Err(LabError::ParamOutOfRange(format!(
            "`{name}` takes {}..={} parameters, got {}",
            info.min_params,
            info.max_params,
            params.len()
        )));
    }
    match name {
        "neg_log_abs_z_pow" | "neg_log_abs_zw_pow" => check_alpha(params[0], 4.0)?,
        "ball_envelope_alpha" | "ball_zw_envelope_alpha" => check_alpha(params[0], 1.0)?,
        "first_example_family" => check_alpha(params[0], 1.0)?,
        "nonuniq_v_eps" => {
            if !(params[0] > 0.0) {
                return Err(LabError::ParamOutOfRange(format!("eps {} must be positive", params[0])));
            }
        }
        _ => {}
    }
    if let Some(&c) = params.get(if name.ends_with("_pow") { 1 } else { 0 }) {
        if (name == "neg_log_abs_z" || name.ends_with("_pow")) && !(c > 0.0) {
            return Err(LabError::ParamOutOfRange(format!("cap {c} must be positive")));
        }
    }
    Ok(info)
}

/// `-log t` with the pole mapped to the token.
fn neg_log(t: f64) -> f64 {
    if t <= 0.0 {
        INF_TOKEN
    } else {
        -t.ln()
    }
}

/// Pointwise evaluation; `NaN` marks an undefined value.
pub fn eval_point(name: &str, params: &[f64], z: Complex64, w: Complex64) -> f64 {
    let az2 = z.norm_sqr();
    let aw2 = w.norm_sqr();
    let one_minus_z = (Complex64::new(1.0, 0.0) - z).norm_sqr();
    match name {
        "constant" => params[0],
        "re_z" => z.re,
        "re_zw" => (z * w).re,
        "norm_sq" => az2 + aw2,
        "neg_norm_sq" => -(az2 + aw2),
        "poisson_kernel" | "nonuniq_u" => {
            if one_minus_z == 0.0 {
                INF_TOKEN
            } else {
                (1.0 - az2) / one_minus_z
            }
        }
        "neg_log_abs_z" => capped(neg_log(az2.sqrt()), params.first().copied()),
        "log_abs_z" => {
            let c = params.first().copied().unwrap_or(1.0);
            if az2 == 0.0 {
                -INF_TOKEN
            } else {
                c * 0.5 * az2.ln()
            }
        }
        "neg_log_abs_z_pow" => {
            let t = neg_log(az2.sqrt());
            if t < 0.0 {
                return f64::NAN;
            }
            capped(t.powf(params[0]), params.get(1).copied())
        }
        "neg_log_abs_zw_pow" => {
            let t = neg_log((az2 * aw2).sqrt());
            if t < 0.0 {
                return f64::NAN;
            }
            capped(t.powf(params[0]), params.get(1).copied())
        }
        "ball_envelope_alpha" => {
            let s = 1.0 - aw2;
            if s < 0.0 {
                f64::NAN
            } else {
                (0.5 * neg_log(s)).powf(params[0])
            }
        }
        "ball_zw_envelope_alpha" => ball_zw_envelope(az2, aw2, params[0]),
        "first_example_family" => {
            let s = 1.0 - params[0] * aw2;
            if s < -1e-12 {
                f64::NAN
            } else if s <= 1e-12 {
                INF_TOKEN
            } else {
                -0.5 * s.ln()
            }
        }
        "nonuniq_v" => {
            // at the pole, w = 0 included, the limsup is +inf
            if one_minus_z == 0.0 {
                INF_TOKEN
            } else {
                aw2 / one_minus_z
            }
        }
        "nonuniq_v_eps" => {
            let d = (Complex64::new(1.0 + params[0], 0.0) - z).norm_sqr();
            aw2 / d
        }
        "u_tilde" | "v_tilde" => {
            if one_minus_z == 0.0 {
                return INF_TOKEN;
            }
            let base = if name == "u_tilde" { (1.0 - az2) / one_minus_z } else { aw2 / one_minus_z };
            base - 0.5 * one_minus_z.ln()
        }
        _ => f64::NAN,
    }
}

/// Three-regime envelope of `(-log|zw|)^a` on the ball, in terms of `|z|^2, |w|^2`.
pub fn ball_zw_envelope(az2: f64, aw2: f64, alpha: f64) -> f64 {
    let plateau = std::f64::consts::LN_2.powf(alpha);
    let branch = |t: f64| {
        let s = t - t * t;
        if s <= 0.0 {
            INF_TOKEN
        } else {
            (-0.5 * s.ln()).powf(alpha)
        }
    };
    if az2 >= 0.5 {
        branch(az2)
    } else if aw2 >= 0.5 {
        branch(aw2)
    } else {
        plateau
    }
}

/// Toric representative: `(x, y) -> (e^x, e^y)`, computed so that logarithms of
/// the moduli are recovered exactly.
fn eval_toric(name: &str, params: &[f64], x: f64, y: f64) -> f64 {
    match name {
        "neg_log_abs_z" => capped(-x, params.first().copied()),
        "log_abs_z" => params.first().copied().unwrap_or(1.0) * x,
        "neg_log_abs_z_pow" => capped((-x).max(0.0).powf(params[0]), params.get(1).copied()),
        "neg_log_abs_zw_pow" => capped((-x - y).max(0.0).powf(params[0]), params.get(1).copied()),
        _ => eval_point(name, params, Complex64::new(x.exp(), 0.0), Complex64::new(y.exp(), 0.0)),
    }
}

/// Evaluates a registered closed form on every active node. `+inf` limits
/// saturate to the token; a genuinely undefined value at an unmasked node is an error.
pub fn eval_closed_form(name: &str, domain: &Arc<GridDomain>, params: &[f64]) -> Result<GridFunction> {
    let info = validate(name, params)?;
    let toric = domain.kind == DomainKind::ToricLog2D;
    if toric && !info.rotation_invariant {
        return Err(LabError::DomainMismatch(format!("`{name}` is not rotation invariant")));
    }
    let mut values = vec![f64::NAN; domain.len()];
    for node in domain.active_nodes() {
        let v = if toric {
            let c = domain.coords(node);
            eval_toric(name, params, c[0], c[1])
        } else {
            let (z, w) = domain.complex_point(node);
            eval_point(name, params, z, w)
        };
        values[node] = if v.is_nan() {
            if domain.is_masked(node) {
                INF_TOKEN
            } else {
                return Err(LabError::UndefinedAtNode { name: name.to_string(), node });
            }
        } else {
            v
        };
    }
    Ok(GridFunction::new(domain.clone(), values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ext::is_inf;
    use crate::grid::{make_domain, MaskSpec};

    #[test]
    fn poisson_kernel_is_one_at_origin() {
        let d = Arc::new(make_domain(DomainKind::Disc1D, 33, None).unwrap());
        let f = eval_closed_form("poisson_kernel", &d, &[]).unwrap();
        assert_eq!(f.value(d.index_of(&[16, 16])), 1.0);
        // pole on the boundary saturates
        assert!(is_inf(f.value(d.index_of(&[32, 16]))));
    }

    #[test]
    fn ball_envelope_at_three_quarters() {
        let v = eval_point("ball_envelope_alpha", &[0.5], Complex64::new(0.0, 0.0), Complex64::new(0.75f64.sqrt(), 0.0));
        assert!((v - std::f64::consts::LN_2.sqrt()).abs() < 1e-12);
        assert!((v - 0.83255).abs() < 1e-5);
    }

    #[test]
    fn neg_log_saturates_at_masked_origin() {
        let d = Arc::new(make_domain(DomainKind::PuncturedDisc1D, 33, None).unwrap());
        let f = eval_closed_form("neg_log_abs_z", &d, &[]).unwrap();
        let o = *d.singular_mask.iter().next().unwrap();
        assert!(is_inf(f.value(o)));
        for (n, v) in f.active_values() {
            if n != o {
                assert!(v.is_finite());
            }
        }
    }

    #[test]
    fn rejects_unknown_names_and_bad_params() {
        let d = Arc::new(make_domain(DomainKind::Ball2C, 5, None).unwrap());
        assert!(matches!(eval_closed_form("nope", &d, &[]), Err(LabError::UnknownFormula(_))));
        assert!(matches!(eval_closed_form("ball_envelope_alpha", &d, &[1.5]), Err(LabError::ParamOutOfRange(_))));
        assert!(matches!(eval_closed_form("ball_envelope_alpha", &d, &[]), Err(LabError::ParamOutOfRange(_))));
    }

    #[test]
    fn undefined_values_are_errors_unless_masked() {
        // r = 1 is fine, but a family member with r > 1 is undefined near |w| = 1
        let d = Arc::new(make_domain(DomainKind::Ball2C, 5, None).unwrap());
        assert!(eval_closed_form("first_example_family", &d, &[1.0]).is_ok());
        let info = eval_point("first_example_family", &[1.0], Complex64::new(0.0, 0.0), Complex64::new(1.2, 0.0));
        assert!(info.is_nan());
        let t = Arc::new(make_domain(DomainKind::ToricLog2D, 9, Some(&MaskSpec::None)).unwrap());
        assert!(matches!(eval_closed_form("poisson_kernel", &t, &[]), Err(LabError::DomainMismatch(_))));
    }

    #[test]
    fn zw_envelope_regimes_glue_continuously() {
        let p = ball_zw_envelope(0.5, 0.2, 0.5);
        assert!((p - std::f64::consts::LN_2.sqrt()).abs() < 1e-12);
        assert!((ball_zw_envelope(0.3, 0.3, 0.5) - 0.8325546111576977).abs() < 1e-12);
        assert!(ball_zw_envelope(0.8, 0.1, 0.5) > p);
    }

    #[test]
    fn toric_evaluation_matches_lattice_evaluation() {
        let t = Arc::new(make_domain(DomainKind::ToricLog2D, 17, None).unwrap());
        let f = eval_closed_form("neg_log_abs_z_pow", &t, &[0.5]).unwrap();
        for (n, v) in f.active_values() {
            let c = t.coords(n);
            assert!((v - (-c[0]).max(0.0).sqrt()).abs() < 1e-12);
        }
    }
}
