//! Upper envelopes over the discrete cone: greatest minorants, Perron–Bremermann
//! solutions, least plurisuperharmonic majorants, the toric convex envelope,
//! maximality residuals, boundary probes and sandwich envelopes.

use std::sync::Arc;

use serde::Serialize;

use crate::cone::{Cone, StencilFamily};
use crate::error::{LabError, Result};
use crate::ext::{ext_neg, is_inf, INF_TOKEN, V_MAX};
use crate::grid::{regularize, DomainKind, GridDomain, GridFunction, NodeClass, RegularizeMode, TORIC_ARC_DIRECTIONS};
use crate::psh::psh_check_on;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum SolverKind {
    /// Double-buffered simultaneous update.
    Jacobi,
    /// In-place sweep in node order with relaxation factor `omega`.
    GaussSeidel { omega: f64 },
    /// Line-wise convex hulls; toric domains only.
    LineHull,
}

#[derive(Debug, Clone)]
pub struct EnvelopeOptions {
    pub solver: SolverKind,
    /// Overrides `1e-9 * (1 + sup|obstacle|)`.
    pub tol: Option<f64>,
    /// Overrides `200 * resolution` (Gauss–Seidel: sweeps).
    pub iter_max: Option<usize>,
    /// Warm start; values above the obstacle are clipped.
    pub initial: Option<Vec<f64>>,
}

impl Default for EnvelopeOptions {
    fn default() -> Self {
        EnvelopeOptions { solver: SolverKind::Jacobi, tol: None, iter_max: None, initial: None }
    }
}

impl EnvelopeOptions {
    /// Line hulls on toric domains, over-relaxed in-place sweeps elsewhere.
    pub fn fast(domain: &GridDomain) -> Self {
        if domain.kind == DomainKind::ToricLog2D {
            return EnvelopeOptions { solver: SolverKind::LineHull, ..Default::default() };
        }
        // over-relaxation stalls on the min-of-averages map, so plain Gauss-Seidel
        EnvelopeOptions { solver: SolverKind::GaussSeidel { omega: 1.0 }, ..Default::default() }
    }

    pub fn with_initial(mut self, initial: Vec<f64>) -> Self {
        self.initial = Some(initial);
        self
    }
}

#[derive(Debug, Clone)]
pub struct EnvelopeReport {
    pub result: GridFunction,
    pub iterations: usize,
    pub final_delta: f64,
    pub residual: Option<f64>,
    pub converged: bool,
    pub tolerance: f64,
}

#[derive(Serialize)]
struct EnvelopeSummary {
    iterations: usize,
    final_delta: f64,
    residual: Option<f64>,
    converged: bool,
    tolerance: f64,
}

impl EnvelopeReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&EnvelopeSummary {
            iterations: self.iterations,
            final_delta: self.final_delta,
            residual: self.residual,
            converged: self.converged,
            tolerance: self.tolerance,
        })
        .expect("summary serializes")
    }
}

pub fn default_fix_tolerance(obstacle: &GridFunction) -> f64 {
    let sup = obstacle.active_values().filter(|(_, v)| !is_inf(*v)).fold(0.0f64, |m, (_, v)| m.max(v.abs()));
    1e-9 * (1.0 + sup)
}

pub fn default_iter_max(domain: &GridDomain) -> usize {
    200 * domain.resolution
}

pub fn greatest_minorant(obstacle: &GridFunction, stencil: &StencilFamily) -> Result<EnvelopeReport> {
    let cone = Cone::build(obstacle.domain.clone(), stencil)?;
    Ok(greatest_minorant_with(obstacle, &cone, &EnvelopeOptions::default()))
}

/// Largest cone member below `obstacle`, as the fixed point of
/// `u <- min(obstacle, min over rows of the row average)` at anchors.
pub fn greatest_minorant_with(obstacle: &GridFunction, cone: &Cone, opts: &EnvelopeOptions) -> EnvelopeReport {
    let dom = &obstacle.domain;
    let tol = opts.tol.unwrap_or_else(|| default_fix_tolerance(obstacle));
    let iter_max = opts.iter_max.unwrap_or_else(|| default_iter_max(dom));
    let obs = &obstacle.values;
    // Unconstrained anchors start at the largest finite obstacle value, which
    // dominates the solution whenever some row avoids the +inf nodes.
    let cap = obstacle.active_values().filter(|(_, v)| !is_inf(*v)).fold(f64::NEG_INFINITY, |m, (_, v)| m.max(v));
    let cap = if cap.is_finite() { cap } else { 0.0 }.min(V_MAX);
    let mut u = obs.clone();
    for &n in cone.anchors() {
        u[n] = match &opts.initial {
            Some(init) => init[n].min(obs[n]).min(V_MAX),
            None => obs[n].min(cap),
        };
    }
    let anchors = cone.anchors();
    let mut iterations = 0;
    let mut delta = f64::INFINITY;
    let solver = match opts.solver {
        SolverKind::LineHull if dom.kind != DomainKind::ToricLog2D => SolverKind::Jacobi,
        s => s,
    };
    match solver {
        SolverKind::LineHull => {
            let start = GridFunction { domain: dom.clone(), values: u.clone(), nonnegative: false };
            let (v, it, _) = toric_hull_minorant(&start, tol, iter_max);
            u = v;
            iterations = it;
            delta = fixed_point_defect(cone, obs, &u);
        }
        SolverKind::Jacobi => {
            let mut next = u.clone();
            while iterations < iter_max {
                iterations += 1;
                delta = 0.0;
                for (k, &n) in anchors.iter().enumerate() {
                    let v = obs[n].min(cone.min_average(k, &u)).min(V_MAX);
                    delta = delta.max((v - u[n]).abs());
                    next[n] = v;
                }
                std::mem::swap(&mut u, &mut next);
                if delta <= tol {
                    break;
                }
            }
        }
        SolverKind::GaussSeidel { omega } => {
            while iterations < iter_max {
                iterations += 1;
                let mut change = 0.0f64;
                for (k, &n) in anchors.iter().enumerate() {
                    let target = obs[n].min(cone.min_average(k, &u)).min(V_MAX);
                    let v = (u[n] + omega * (target - u[n])).min(obs[n]).min(V_MAX);
                    change = change.max((v - u[n]).abs());
                    u[n] = v;
                }
                if change <= tol {
                    delta = fixed_point_defect(cone, obs, &u);
                    if delta <= tol {
                        break;
                    }
                }
            }
            if !(delta <= tol) {
                delta = fixed_point_defect(cone, obs, &u);
            }
        }
    }
    EnvelopeReport {
        result: GridFunction::new(dom.clone(), u),
        iterations,
        final_delta: delta,
        residual: None,
        converged: delta <= tol,
        tolerance: tol,
    }
}

/// Sup-norm of one simultaneous update applied to `u`.
fn fixed_point_defect(cone: &Cone, obs: &[f64], u: &[f64]) -> f64 {
    let mut d = 0.0f64;
    for (k, &n) in cone.anchors().iter().enumerate() {
        let v = obs[n].min(cone.min_average(k, u)).min(V_MAX);
        d = d.max((v - u[n]).abs());
    }
    d
}

/// Obstacle for the Dirichlet problem: the data on Boundary (and masked) nodes,
/// no constraint on interior nodes.
pub fn boundary_obstacle(boundary_data: &GridFunction) -> GridFunction {
    let dom = &boundary_data.domain;
    GridFunction::from_fn(dom.clone(), |n| {
        if dom.class_of(n) == NodeClass::Boundary || dom.is_masked(n) {
            boundary_data.values[n]
        } else {
            INF_TOKEN
        }
    })
}

pub fn perron_bremermann(boundary_data: &GridFunction, stencil: &StencilFamily) -> Result<EnvelopeReport> {
    let cone = Cone::build(boundary_data.domain.clone(), stencil)?;
    Ok(perron_bremermann_with(boundary_data, &cone, &EnvelopeOptions::default()))
}

pub fn perron_bremermann_with(boundary_data: &GridFunction, cone: &Cone, opts: &EnvelopeOptions) -> EnvelopeReport {
    let obstacle = boundary_obstacle(boundary_data);
    let mut opts = opts.clone();
    if opts.tol.is_none() {
        opts.tol = Some(default_fix_tolerance(&obstacle));
    }
    greatest_minorant_with(&obstacle, cone, &opts)
}

pub fn least_psuper_majorant(f: &GridFunction, stencil: &StencilFamily) -> Result<EnvelopeReport> {
    let cone = Cone::build(f.domain.clone(), stencil)?;
    Ok(least_psuper_majorant_with(f, &cone, &EnvelopeOptions::default()))
}

/// `-greatest_minorant(-f)`. Nodes where `f` is `+inf` are treated as a
/// negligible set: they constrain nothing and receive `+inf` afterwards.
pub fn least_psuper_majorant_with(f: &GridFunction, cone: &Cone, opts: &EnvelopeOptions) -> EnvelopeReport {
    let neg = GridFunction::new(
        f.domain.clone(),
        f.values.iter().map(|&v| if v.is_nan() || is_inf(v) { v } else { -v }).collect(),
    );
    let mut rep = greatest_minorant_with(&neg, cone, opts);
    let vals = rep
        .result
        .values
        .iter()
        .zip(&f.values)
        .map(|(&u, &fv)| if u.is_nan() || is_inf(fv) { fv } else { ext_neg(u) })
        .collect();
    rep.result = GridFunction::new(f.domain.clone(), vals);
    rep.result.nonnegative = f.nonnegative;
    rep
}

/// Lattice lines of the toric domain for one direction: node sequence with
/// positions in lattice steps, arc crossings included at the ends.
fn toric_lines(dom: &GridDomain, dx: i8, dy: i8) -> Vec<Vec<(usize, f64)>> {
    let step = |n: usize, s: i8| dom.offset_index(n, &[(s * dx) as i32, (s * dy) as i32]).filter(|&j| dom.is_active(j));
    let mut lines = Vec::new();
    for start in 0..dom.lattice_len {
        if !dom.is_active(start) || step(start, -1).is_some() {
            continue;
        }
        let mut line = Vec::new();
        if let Some(link) = dom.arc_link(start, -dx, -dy) {
            line.push((link.node, -link.t));
        }
        let mut n = start;
        let mut pos = 0.0;
        loop {
            line.push((n, pos));
            match step(n, 1) {
                Some(j) => {
                    n = j;
                    pos += 1.0;
                }
                None => break,
            }
        }
        if let Some(link) = dom.arc_link(n, dx, dy) {
            line.push((link.node, pos + link.t));
        }
        if line.len() >= 2 {
            lines.push(line);
        }
    }
    lines
}

/// Lowers the values on one line to their greatest convex minorant, run by
/// run: `+inf` values and masked nodes split the line, masked nodes are kept.
fn convexify_line(dom: &GridDomain, line: &[(usize, f64)], u: &mut [f64]) {
    let mut start = 0;
    while start < line.len() {
        if is_inf(u[line[start].0]) {
            start += 1;
            continue;
        }
        let mut end = start + 1;
        while end < line.len() && !is_inf(u[line[end].0]) && !dom.is_masked(line[end - 1].0) {
            end += 1;
        }
        // a masked node closes the run but also opens the next one
        if end > start + 2 {
            convexify_run(&line[start..end], u);
        }
        start = if end < line.len() && dom.is_masked(line[end - 1].0) && end - 1 > start { end - 1 } else { end };
    }
}

fn convexify_run(run: &[(usize, f64)], u: &mut [f64]) {
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(run.len());
    for &(n, t) in run {
        let v = u[n];
        while hull.len() >= 2 {
            let (t1, v1) = hull[hull.len() - 2];
            let (t2, v2) = hull[hull.len() - 1];
            // drop the middle point if it lies on or above the chord
            if (v2 - v1) * (t - t1) >= (v - v1) * (t2 - t1) {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push((t, v));
    }
    let mut seg = 0;
    for &(n, t) in &run[1..run.len() - 1] {
        while seg + 2 < hull.len() && t > hull[seg + 1].0 {
            seg += 1;
        }
        let (t1, v1) = hull[seg];
        let (t2, v2) = hull[seg + 1];
        let chord = v1 + (v2 - v1) * (t - t1) / (t2 - t1);
        if chord < u[n] {
            u[n] = chord;
        }
    }
}

/// Greatest minorant on the toric cone by alternating exact one-dimensional
/// convex hulls along every stencil line and running minima along `+x`, `+y`.
/// Reaches the same fixed point as the row iteration, in far fewer passes.
fn toric_hull_minorant(obstacle: &GridFunction, tol: f64, iter_max: usize) -> (Vec<f64>, usize, f64) {
    let dom = &obstacle.domain;
    let mut u = obstacle.values.clone();
    let convex: Vec<Vec<Vec<(usize, f64)>>> = TORIC_ARC_DIRECTIONS.iter().map(|&(dx, dy)| toric_lines(dom, dx, dy)).collect();
    let mut delta = f64::INFINITY;
    let mut iterations = 0;
    while iterations < iter_max {
        iterations += 1;
        let before = u.clone();
        for lines in &convex[..2] {
            for line in lines {
                let mut m = INF_TOKEN;
                for &(n, _) in line.iter().rev() {
                    if n >= dom.lattice_len || dom.is_masked(n) {
                        m = u[n];
                    } else {
                        m = m.min(u[n]);
                        u[n] = m;
                    }
                }
            }
        }
        for lines in &convex {
            for line in lines {
                convexify_line(dom, line, &mut u);
            }
        }
        delta = u
            .iter()
            .zip(&before)
            .filter(|(a, b)| !a.is_nan() && !(is_inf(**a) && is_inf(**b)))
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if delta <= tol {
            break;
        }
    }
    (u, iterations, delta)
}

/// Greatest function below the arc profile that is convex along every stencil
/// line and nondecreasing in both log coordinates.
pub fn toric_convex_envelope(boundary_profile: &GridFunction) -> Result<GridFunction> {
    toric_convex_minorant(&boundary_obstacle(boundary_profile))
}

/// Same hull construction for an obstacle given on every toric node.
pub fn toric_convex_minorant(obstacle: &GridFunction) -> Result<GridFunction> {
    let dom = obstacle.domain.clone();
    if dom.kind != DomainKind::ToricLog2D {
        return Err(LabError::DomainMismatch("toric envelope needs a ToricLog2D profile".into()));
    }
    let tol = default_fix_tolerance(obstacle);
    let iter_max = default_iter_max(&dom);
    let (u, iterations, delta) = toric_hull_minorant(obstacle, tol, iter_max);
    if delta > tol {
        return Err(LabError::NoConvergence { iterations, delta });
    }
    Ok(GridFunction::new(dom, u))
}

fn second_difference(u: &[f64], dom: &GridDomain, node: usize, a: usize, b: usize) -> Option<f64> {
    let h2 = dom.spacing * dom.spacing;
    let at = |off: &[i32]| -> Option<f64> {
        let j = dom.offset_index(node, &off[..dom.dim])?;
        let v = u[j];
        (dom.is_active(j) && !is_inf(v)).then_some(v)
    };
    let mut e = [0i32; 4];
    if a == b {
        e[a] = 1;
        let p = at(&e)?;
        e[a] = -1;
        let m = at(&e)?;
        Some((p + m - 2.0 * u[node]) / h2)
    } else {
        let mut s = 0.0;
        for (sa, sb, sign) in [(1, 1, 1.0), (1, -1, -1.0), (-1, 1, -1.0), (-1, -1, 1.0)] {
            e = [0; 4];
            e[a] = sa;
            e[b] = sb;
            s += sign * at(&e)?;
        }
        Some(s / (4.0 * h2))
    }
}

/// Clamped Monge–Ampère density at a node: `max(det(complex Hessian), 0)` in two
/// variables, `max(u_{z zbar}, 0)` in one. `None` near `+inf` values.
pub fn monge_ampere_density(u: &GridFunction, node: usize) -> Option<f64> {
    let dom = &u.domain;
    if is_inf(u.values[node]) {
        return None;
    }
    let d = |a, b| second_difference(&u.values, dom, node, a, b);
    if dom.dim == 2 {
        return Some(((d(0, 0)? + d(1, 1)?) / 4.0).max(0.0));
    }
    let zz = (d(0, 0)? + d(1, 1)?) / 4.0;
    let ww = (d(2, 2)? + d(3, 3)?) / 4.0;
    let re = (d(0, 2)? + d(1, 3)?) / 4.0;
    let im = (d(0, 3)? - d(1, 2)?) / 4.0;
    Some((zz * ww - re * re - im * im).max(0.0))
}

fn require_member(u: &GridFunction, stencil: &StencilFamily, keep: &impl Fn(usize) -> bool) -> Result<()> {
    if u.domain.kind == DomainKind::ToricLog2D {
        return Err(LabError::DomainMismatch("residuals are computed on lattice kinds".into()));
    }
    let cone = Cone::build(u.domain.clone(), stencil)?;
    let rep = psh_check_on(u, &cone, crate::cone::default_tolerance(&u.domain), keep);
    if !rep.is_member {
        return Err(LabError::NotInCone(rep.worst_violation));
    }
    Ok(())
}

/// Sum of the clamped density over interior unmasked nodes.
pub fn maximality_residual(u: &GridFunction, stencil: &StencilFamily) -> Result<f64> {
    maximality_mass_over(u, stencil, |_| true, false)
}

/// Density integrated against the cell volume `h^{2n}` over the interior
/// unmasked nodes accepted by `keep`; this is the quantity compared across
/// resolutions. Membership is required on those nodes only.
pub fn maximality_mass(u: &GridFunction, stencil: &StencilFamily, keep: impl Fn(usize) -> bool) -> Result<f64> {
    maximality_mass_over(u, stencil, keep, true)
}

fn maximality_mass_over(u: &GridFunction, stencil: &StencilFamily, keep: impl Fn(usize) -> bool, weighted: bool) -> Result<f64> {
    require_member(u, stencil, &keep)?;
    let dom = &u.domain;
    let vol = if weighted { dom.spacing.powi(dom.dim as i32) } else { 1.0 };
    Ok(dom
        .interior_nodes()
        .into_iter()
        .filter(|&n| !dom.is_masked(n) && keep(n))
        .filter_map(|n| monge_ampere_density(u, n))
        .sum::<f64>()
        * vol)
}

/// Multilinear interpolation at a physical point over the active corners of
/// its cell; `+inf` if a weighted corner carries the token.
pub fn interpolate(f: &GridFunction, p: &[f64; 4]) -> Option<f64> {
    let dom = &f.domain;
    if dom.kind == DomainKind::ToricLog2D {
        return None;
    }
    let dim = dom.dim;
    let mut base = [0usize; 4];
    let mut frac = [0.0; 4];
    for k in 0..dim {
        let x = (p[k] - dom.lower) / dom.spacing;
        if x < -1e-9 || x > (dom.resolution - 1) as f64 + 1e-9 {
            return None;
        }
        let i = (x.floor().max(0.0) as usize).min(dom.resolution - 2);
        base[k] = i;
        frac[k] = (x - i as f64).clamp(0.0, 1.0);
    }
    let mut acc = 0.0;
    let mut wsum = 0.0;
    let mut inf = false;
    for corner in 0..(1usize << dim) {
        let mut idx = [0usize; 4];
        let mut w = 1.0;
        for k in 0..dim {
            let bit = (corner >> k) & 1;
            idx[k] = base[k] + bit;
            w *= if bit == 1 { frac[k] } else { 1.0 - frac[k] };
        }
        if w <= 1e-12 {
            continue;
        }
        let j = dom.index_of(&idx[..dim]);
        if !dom.is_active(j) {
            continue;
        }
        let v = f.values[j];
        if is_inf(v) {
            inf = true;
        } else {
            acc += w * v;
        }
        wsum += w;
    }
    if inf {
        Some(INF_TOKEN)
    } else if wsum >= 0.25 {
        Some(acc / wsum)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RayProbe {
    pub ray: [f64; 4],
    /// `(distance from z0, value)` from nearest to farthest.
    pub samples: Vec<(f64, f64)>,
    /// Extrapolated limit; `+inf` for a growth trend.
    pub limit: f64,
    pub diverges: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub z0: [f64; 4],
    pub rays: Vec<RayProbe>,
    pub agree: bool,
    pub tolerance: f64,
}

pub const DEFAULT_TOL_BND: f64 = 0.05;

/// Limits of `u` at `z0` along inward rays, by quadratic extrapolation from
/// samples at two, three and four spacings (the first cell is usually cut by
/// the boundary).
pub fn boundary_limit_probe(u: &GridFunction, z0: [f64; 4], rays: &[[f64; 4]], tol_bnd: f64) -> Result<ProbeReport> {
    let dom = &u.domain;
    let at_z0 = interpolate(u, &z0);
    let mut out = Vec::new();
    for ray in rays {
        let norm = ray[..dom.dim].iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(LabError::RayExitsDomain(format!("zero ray {ray:?}")));
        }
        let mut samples = Vec::new();
        for k in 2..=4 {
            let s = k as f64 * dom.spacing;
            let mut p = z0;
            for i in 0..dom.dim {
                p[i] += s * ray[i] / norm;
            }
            if !dom.point_inside(&p) {
                return Err(LabError::RayExitsDomain(format!("{ray:?} at distance {s}")));
            }
            let v = interpolate(u, &p).ok_or_else(|| LabError::NoSamples(format!("{p:?}")))?;
            samples.push((s, v));
        }
        let (a, b, c) = (samples[0].1, samples[1].1, samples[2].1);
        let growing = a > b && b > c;
        let extrapolated = 6.0 * a - 8.0 * b + 3.0 * c;
        let diverges = is_inf(a) || (growing && (at_z0.is_some_and(is_inf) || extrapolated > V_MAX / 2.0));
        let limit = if diverges { INF_TOKEN } else { extrapolated };
        out.push(RayProbe { ray: *ray, samples, limit, diverges });
    }
    let agree = match out.first() {
        None => true,
        Some(first) => out.iter().all(|r| {
            if first.diverges || r.diverges {
                first.diverges == r.diverges
            } else {
                (r.limit - first.limit).abs() <= tol_bnd * (1.0 + first.limit.abs())
            }
        }),
    };
    Ok(ProbeReport { z0, rays: out, agree, tolerance: tol_bnd })
}

#[derive(Debug, Clone)]
pub struct SandwichReport {
    pub lower: GridFunction,
    pub upper: GridFunction,
    pub lower_steps: Vec<EnvelopeReport>,
    pub upper_report: EnvelopeReport,
    /// `max(lower - upper)` over unmasked nodes; positive values come only from
    /// the final regularization step.
    pub order_gap: f64,
}

pub fn sandwich_envelopes(phi: &GridFunction, cutoffs: &[f64], stencil: &StencilFamily) -> Result<SandwichReport> {
    let cone = Cone::build(phi.domain.clone(), stencil)?;
    sandwich_envelopes_with(phi, cutoffs, &cone, &EnvelopeOptions::default())
}

/// Lower: USC regularization of `P(min(n_k, phi))` at the last cutoff. Upper: `P(phi)`.
pub fn sandwich_envelopes_with(phi: &GridFunction, cutoffs: &[f64], cone: &Cone, opts: &EnvelopeOptions) -> Result<SandwichReport> {
    if cutoffs.is_empty() || cutoffs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LabError::NotIncreasing);
    }
    if cutoffs[cutoffs.len() - 1] >= V_MAX {
        return Err(LabError::ParamOutOfRange("cutoffs must stay below V_MAX".into()));
    }
    let dom = phi.domain.clone();
    let upper_report = perron_bremermann_with(phi, cone, opts);
    let mut steps: Vec<EnvelopeReport> = Vec::new();
    for (k, &n) in cutoffs.iter().enumerate() {
        let data = phi.map(|v| v.min(n));
        let mut o = opts.clone();
        if let Some(prev) = steps.last() {
            o.initial = Some(prev.result.values.clone());
        }
        let rep = perron_bremermann_with(&data, cone, &o);
        if let Some(prev) = steps.last() {
            let slack = 10.0 * rep.tolerance.max(prev.tolerance);
            let drop = rep
                .result
                .active_values()
                .map(|(j, v)| prev.result.values[j] - v)
                .fold(0.0f64, f64::max);
            if drop > slack {
                return Err(LabError::NonMonotoneSandwich(k));
            }
        }
        steps.push(rep);
    }
    let lower = regularize(&steps[steps.len() - 1].result, RegularizeMode::Usc);
    let order_gap = lower
        .active_values()
        .filter(|(j, _)| !dom.is_masked(*j))
        .map(|(j, v)| {
            let w = upper_report.result.values[j];
            if is_inf(w) { 0.0 } else if is_inf(v) { INF_TOKEN } else { v - w }
        })
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(SandwichReport { upper: upper_report.result.clone(), lower, lower_steps: steps, upper_report, order_gap })
}

/// Pull a toric function back to a lattice domain by bilinear interpolation in
/// log coordinates; nodes whose image lacks a full cell are reported as `None`.
pub fn toric_pullback(g: &GridFunction, target: &Arc<GridDomain>, node: usize) -> Option<f64> {
    let t = &g.domain;
    let (z, w) = target.complex_point(node);
    let lx = z.norm().ln().max(-t.truncation);
    let ly = w.norm().ln().max(-t.truncation);
    let fx = (lx + t.truncation) / t.spacing;
    let fy = (ly + t.truncation) / t.spacing;
    if fx < 0.0 || fy < 0.0 {
        return None;
    }
    let (ix, iy) = (fx.floor() as usize, fy.floor() as usize);
    let (ax, ay) = (fx - ix as f64, fy - iy as f64);
    let mut acc = 0.0;
    for (dx, wx) in [(0usize, 1.0 - ax), (1, ax)] {
        for (dy, wy) in [(0usize, 1.0 - ay), (1, ay)] {
            let (i, j) = (ix + dx, iy + dy);
            if i >= t.resolution || j >= t.resolution {
                if wx * wy > 0.0 {
                    return None;
                }
                continue;
            }
            let n = t.index_of(&[i, j]);
            if !t.is_active(n) {
                if wx * wy > 0.0 {
                    return None;
                }
                continue;
            }
            let v = g.values[n];
            if is_inf(v) {
                return Some(INF_TOKEN);
            }
            acc += wx * wy * v;
        }
    }
    Some(acc)
}
