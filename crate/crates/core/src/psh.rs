//! Cone membership checks, Hessian spot checks, and the toric reduction.

use std::sync::Arc;

use num_complex::Complex64;
use serde::Serialize;

use crate::cone::{Cone, StencilFamily};
use crate::error::{LabError, Result};
use crate::ext::{is_inf, INF_TOKEN};
use crate::grid::{DomainKind, GridDomain, GridFunction};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConeMembershipReport {
    pub is_member: bool,
    pub worst_violation: f64,
    pub violating_node: Option<usize>,
    pub violating_direction: Option<usize>,
    pub tolerance: f64,
}

impl ConeMembershipReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

pub fn psh_check(f: &GridFunction, stencil: &StencilFamily, tol: f64) -> Result<ConeMembershipReport> {
    let cone = Cone::build(f.domain.clone(), stencil)?;
    Ok(psh_check_with(f, &cone, tol))
}

/// Worst `f(anchor) - row average` over all rows; ties keep the lowest node
/// index, then the lowest direction index.
pub fn psh_check_with(f: &GridFunction, cone: &Cone, tol: f64) -> ConeMembershipReport {
    psh_check_on(f, cone, tol, |_| true)
}

/// As `psh_check_with`, over the rows anchored at nodes accepted by `keep`.
pub fn psh_check_on(f: &GridFunction, cone: &Cone, tol: f64, keep: impl Fn(usize) -> bool) -> ConeMembershipReport {
    let mut worst = 0.0f64;
    let mut at: Option<(usize, usize)> = None;
    for (k, &node) in cone.anchors().iter().enumerate() {
        if !keep(node) {
            continue;
        }
        let v = f.values[node];
        cone.for_each_average(k, &f.values, |dir, _, avg| {
            let viol = if is_inf(avg) {
                0.0
            } else if is_inf(v) {
                INF_TOKEN
            } else {
                v - avg
            };
            let better = match at {
                None => viol > 0.0,
                Some((n0, d0)) => viol > worst || (viol == worst && (node, dir) < (n0, d0) && viol > 0.0),
            };
            if better {
                worst = viol;
                at = Some((node, dir));
            }
        });
    }
    ConeMembershipReport {
        is_member: worst <= tol,
        worst_violation: worst.max(0.0),
        violating_node: at.map(|a| a.0),
        violating_direction: at.map(|a| a.1),
        tolerance: tol,
    }
}

pub fn toric_psh_check(g: &GridFunction, tol: f64) -> Result<ConeMembershipReport> {
    if g.domain.kind != DomainKind::ToricLog2D {
        return Err(LabError::DomainMismatch("toric check needs a ToricLog2D function".into()));
    }
    psh_check(g, &StencilFamily::toric(), tol)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum HessianCase {
    /// `U = (-1/2 log(1-|w|^2))^a`, derivative in `w`.
    FirstExampleU,
    /// Outer branch `(-1/2 log(|z|^2-|z|^4))^a`, derivative in `z`.
    SecondExamplePphi,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HessianRow {
    pub point: [f64; 4],
    pub analytic: f64,
    pub finite_difference: f64,
    pub rel_error: f64,
    /// The factor whose sign decides positivity of the mixed derivative.
    pub positivity_factor: f64,
}

fn first_u(t: f64, alpha: f64) -> f64 {
    (-0.5 * (1.0 - t).ln()).powf(alpha)
}

fn second_branch(t: f64, alpha: f64) -> f64 {
    (-0.5 * (t - t * t).ln()).powf(alpha)
}

/// Closed-form `d^2/dv dv-bar` at `t = |v|^2`. The displayed expressions are the
/// derivatives of `(-log(..))^a`; the `1/2` inside the logarithm contributes the
/// constant factor `2^{-a}`.
pub fn hessian_analytic(case: HessianCase, t: f64, alpha: f64) -> f64 {
    let norm = 2f64.powf(-alpha);
    match case {
        HessianCase::FirstExampleU => {
            let l = (1.0 - t).ln();
            let printed = alpha * (-l).powf(alpha) * ((alpha - 1.0) * t - l) / ((1.0 - t).powi(2) * l * l);
            norm * printed
        }
        HessianCase::SecondExamplePphi => {
            let s = t - t * t;
            let l = s.ln();
            let printed = alpha * t * (-l).powf(alpha) * ((alpha - 1.0) * (1.0 - 2.0 * t).powi(2) - t * l) / (s * s * l * l);
            norm * printed
        }
    }
}

pub fn positivity_factor(case: HessianCase, t: f64, alpha: f64) -> f64 {
    match case {
        HessianCase::FirstExampleU => (alpha - 1.0) * t - (1.0 - t).ln(),
        HessianCase::SecondExamplePphi => (alpha - 1.0) * (1.0 - 2.0 * t).powi(2) - t * (t - t * t).ln(),
    }
}

/// Compares the closed-form mixed second derivative against centred second
/// differences of step `step` in the relevant complex variable.
pub fn hessian_formula_check(case: HessianCase, alpha: f64, samples: &[[f64; 4]], step: f64) -> Result<Vec<HessianRow>> {
    let margin = 4.0 * step;
    let mut out = Vec::with_capacity(samples.len());
    for p in samples {
        let (v, f): (Complex64, fn(f64, f64) -> f64) = match case {
            HessianCase::FirstExampleU => (Complex64::new(p[2], p[3]), first_u),
            HessianCase::SecondExamplePphi => (Complex64::new(p[0], p[1]), second_branch),
        };
        let r = v.norm();
        let too_close = match case {
            HessianCase::FirstExampleU => r < margin || r > 1.0 - margin,
            HessianCase::SecondExamplePphi => r < std::f64::consts::FRAC_1_SQRT_2 + margin || r > 1.0 - margin,
        };
        if too_close {
            return Err(LabError::SampleTooClose(format!("{p:?}")));
        }
        let at = |dv: Complex64| f((v + dv).norm_sqr(), alpha);
        let c = at(Complex64::new(0.0, 0.0));
        let lap = at(Complex64::new(step, 0.0)) + at(Complex64::new(-step, 0.0)) + at(Complex64::new(0.0, step))
            + at(Complex64::new(0.0, -step))
            - 4.0 * c;
        let fd = lap / (4.0 * step * step);
        let t = r * r;
        let analytic = hessian_analytic(case, t, alpha);
        let rel_error = (analytic - fd).abs() / analytic.abs().max(1e-12);
        out.push(HessianRow { point: *p, analytic, finite_difference: fd, rel_error, positivity_factor: positivity_factor(case, t, alpha) });
    }
    Ok(out)
}

/// Maximum deviation of `f` under the lattice rotations `z -> iz`, `w -> iw`.
pub fn rotation_defect(f: &GridFunction) -> f64 {
    let d = &f.domain;
    let res = d.resolution;
    let mut worst = 0.0f64;
    for node in 0..d.lattice_len {
        if !d.is_active(node) {
            continue;
        }
        let mi = d.multi_index(node);
        for pair in [0usize, 2] {
            if pair + 1 >= d.dim {
                continue;
            }
            let mut r = mi;
            // (a, b) -> (-b, a) about the centre
            r[pair] = res - 1 - mi[pair + 1];
            r[pair + 1] = mi[pair];
            let j = d.index_of(&r[..d.dim]);
            let (a, b) = (f.values[node], f.values[j]);
            if is_inf(a) && is_inf(b) {
                continue;
            }
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

/// Pulls a rotation-invariant function on the ball back to log coordinates,
/// `g(x, y) = f(e^x, e^y)`, by bilinear interpolation in the real `(Re z, Re w)` plane.
pub fn toric_reduce(f: &GridFunction, toric: Arc<GridDomain>, tol: f64) -> Result<GridFunction> {
    let d = &f.domain;
    if d.kind != DomainKind::Ball2C || toric.kind != DomainKind::ToricLog2D {
        return Err(LabError::DomainMismatch("toric_reduce maps Ball2C to ToricLog2D".into()));
    }
    let defect = rotation_defect(f);
    if defect > tol {
        return Err(LabError::NotRotationInvariant(defect));
    }
    let mid = d.resolution / 2;
    let g = GridFunction::from_fn(toric.clone(), |n| {
        let c = toric.coords(n);
        let (a, b) = (c[0].exp(), c[1].exp());
        let ua = (a - d.lower) / d.spacing;
        let ub = (b - d.lower) / d.spacing;
        let (ia, ib) = (ua.floor() as usize, ub.floor() as usize);
        let (fa, fb) = (ua - ia as f64, ub - ib as f64);
        let mut acc = 0.0;
        let mut wsum = 0.0;
        let mut any_inf = false;
        for (da, wa) in [(0usize, 1.0 - fa), (1, fa)] {
            for (db, wb) in [(0usize, 1.0 - fb), (1, fb)] {
                let w = wa * wb;
                if w <= 1e-14 || ia + da >= d.resolution || ib + db >= d.resolution {
                    continue;
                }
                let j = d.index_of(&[ia + da, mid, ib + db, mid]);
                if !d.is_active(j) {
                    continue;
                }
                let v = f.values[j];
                if is_inf(v) {
                    any_inf = true;
                } else {
                    acc += w * v;
                }
                wsum += w;
            }
        }
        if any_inf {
            INF_TOKEN
        } else if wsum > 0.0 {
            acc / wsum
        } else {
            f64::NAN
        }
    });
    if let Some((n, _)) = g.active_values().find(|(_, v)| v.is_nan()) {
        return Err(LabError::UndefinedAtNode { name: "toric_reduce".into(), node: n });
    }
    Ok(g)
}
