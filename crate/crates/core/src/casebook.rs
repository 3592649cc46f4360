//! Registry of named experiments: each case runs its pipeline at a resolution
//! and compares the outcome against closed forms and expected verdicts.
//! Also the diagnostics the cases share: Lelong estimates, quasibounded
//! witnesses, corner probes, ψ-transforms and the property suite.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cone::{default_tolerance, Cone, StencilFamily};
use crate::envelope::{
    default_fix_tolerance, greatest_minorant_with, maximality_mass, perron_bremermann_with, toric_convex_envelope, toric_convex_minorant,
    toric_pullback, EnvelopeOptions,
};
use crate::error::{LabError, Result};
use crate::ext::{is_inf, V_MAX};
use crate::formulas::{eval_closed_form, eval_point};
use crate::grid::{make_domain, make_domain_with, DomainKind, GridDomain, GridFunction, MaskSpec, NodeClass, DEFAULT_TRUNCATION};
use crate::jensen::{build_cone, envelope_lp, random_capped};
use crate::psh::{hessian_formula_check, psh_check_on, psh_check_with, HessianCase};
use crate::sop::{s_operator_with, tame_absorb_check_with, SOptions, Verdict, DEFAULT_LAMBDAS};

/// Truncation depth for the toric S-verdict runs; deep enough that `-log|z|`
/// outgrows the λ ladder.
pub const VERDICT_TRUNCATION: f64 = 64.0;
/// Radius of the mask around the pole `(1, 0)`, in lattice spacings.
pub const POLE_MASK_SPACINGS: f64 = 4.0;
/// Ratio used by the trend test.
pub const TREND_RATIO: f64 = 1.5;
pub const TOL_PROP: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct CaseSpec {
    pub name: &'static str,
    pub domain: DomainKind,
    /// Formula id and parameters of the data.
    pub data: (&'static str, &'static [f64]),
    pub closed_form: Option<(&'static str, &'static [f64])>,
    pub default_resolution: usize,
    pub max_resolution: usize,
    pub summary: &'static str,
}

pub const CASES: &[CaseSpec] = &[
    CaseSpec {
        name: "ex11_punctured_disc",
        domain: DomainKind::PuncturedDisc1D,
        data: ("neg_log_abs_z", &[]),
        closed_form: None,
        default_resolution: 65,
        max_resolution: 257,
        summary: "bounded subharmonic minorants of -log|z| with zero boundary values stay <= 0",
    },
    CaseSpec {
        name: "ex12_poisson",
        domain: DomainKind::Disc1D,
        data: ("poisson_kernel", &[]),
        closed_form: Some(("poisson_kernel", &[])),
        default_resolution: 129,
        max_resolution: 257,
        summary: "the Poisson kernel with pole at 1 is singular",
    },
    CaseSpec {
        name: "ball_alpha_half",
        domain: DomainKind::Ball2C,
        data: ("neg_log_abs_z_pow", &[0.5]),
        closed_form: Some(("ball_envelope_alpha", &[0.5])),
        default_resolution: 33,
        max_resolution: 65,
        summary: "envelope of (-log|z|)^(1/2) on the ball is (-1/2 log(1-|w|^2))^(1/2)",
    },
    CaseSpec {
        name: "ball_zw_alpha_half",
        domain: DomainKind::Ball2C,
        data: ("neg_log_abs_zw_pow", &[0.5]),
        closed_form: Some(("ball_zw_envelope_alpha", &[0.5])),
        default_resolution: 33,
        max_resolution: 65,
        summary: "envelope of (-log|zw|)^(1/2): two outer branches and the plateau (log 2)^(1/2)",
    },
    CaseSpec {
        name: "nonuniqueness_uv",
        domain: DomainKind::Ball2C,
        data: ("nonuniq_v", &[]),
        closed_form: Some(("nonuniq_u", &[])),
        default_resolution: 33,
        max_resolution: 33,
        summary: "u and v agree on the sphere; the lower envelope finds v, the upper u",
    },
    CaseSpec {
        name: "ball_log_verdicts",
        domain: DomainKind::ToricLog2D,
        data: ("neg_log_abs_z", &[]),
        closed_form: None,
        default_resolution: 129,
        max_resolution: 257,
        summary: "S-verdicts of bounded data, (-log|z|)^(1/2) and -log|z| on the ball, and the Lelong test",
    },
    CaseSpec {
        name: "quasibounded_witnesses",
        domain: DomainKind::Ball2C,
        data: ("nonuniq_v", &[]),
        closed_form: None,
        default_resolution: 17,
        max_resolution: 33,
        summary: "v = sup v_eps and -1/2 log(1-|w|^2) = sup over r < 1 of -1/2 log(1-r|w|^2)",
    },
    CaseSpec {
        name: "lelong_examples",
        domain: DomainKind::Ball2C,
        data: ("log_abs_z", &[]),
        closed_form: None,
        default_resolution: 33,
        max_resolution: 65,
        summary: "Lelong estimates of log|z|, 3 log|z| and -(-log|z|)^2 at the origin",
    },
    CaseSpec {
        name: "hessian_identities",
        domain: DomainKind::Ball2C,
        data: ("ball_envelope_alpha", &[0.5]),
        closed_form: None,
        default_resolution: 33,
        max_resolution: 1025,
        summary: "closed-form complex Hessians of both ball envelopes against centred differences",
    },
    CaseSpec {
        name: "oracle_triangle",
        domain: DomainKind::ToricLog2D,
        data: ("neg_log_abs_z_pow", &[0.5]),
        closed_form: None,
        default_resolution: 9,
        max_resolution: 9,
        summary: "iterative, toric hull and LP envelopes agree on the rotation-invariant cases",
    },
    CaseSpec {
        name: "psi_sqrt_neg_log_z",
        domain: DomainKind::ToricLog2D,
        data: ("neg_log_abs_z", &[]),
        closed_form: Some(("ball_envelope_alpha", &[0.5])),
        default_resolution: 129,
        max_resolution: 257,
        summary: "P(psi o phi) for phi = -log|z|, psi = sqrt",
    },
    CaseSpec {
        name: "psi_log1p_neg_log_zw",
        domain: DomainKind::ToricLog2D,
        data: ("neg_log_abs_zw_pow", &[1.0]),
        closed_form: None,
        default_resolution: 129,
        max_resolution: 257,
        summary: "P(psi o phi) for phi = -log|zw|, psi = log(1 + t)",
    },
    CaseSpec {
        name: "psi_bounded",
        domain: DomainKind::ToricLog2D,
        data: ("norm_sq", &[]),
        closed_form: None,
        default_resolution: 129,
        max_resolution: 257,
        summary: "P(psi o phi) for bounded phi = |z|^2 + |w|^2, psi = sqrt",
    },
];

pub fn lookup_case(name: &str) -> Result<&'static CaseSpec> {
    CASES.iter().find(|c| c.name == name).ok_or_else(|| LabError::UnknownCase(name.to_string()))
}

pub fn case_names() -> Vec<&'static str> {
    CASES.iter().map(|c| c.name).collect()
}

/// Where an expectation comes from: a closed-form statement, a derived
/// numerical oracle, or a trivial identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Tag {
    Exact,
    Derived,
    Trivial,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Expectation {
    pub anchor: String,
    pub tag: Tag,
    pub expected: String,
    pub measured: f64,
    pub pass: bool,
}

impl Expectation {
    pub fn at_most(anchor: &str, tag: Tag, measured: f64, bound: f64) -> Self {
        Expectation { anchor: anchor.into(), tag, expected: format!("<= {bound:.3e}"), measured, pass: measured <= bound }
    }

    pub fn near(anchor: &str, tag: Tag, measured: f64, target: f64, tol: f64) -> Self {
        Expectation {
            anchor: anchor.into(),
            tag,
            expected: format!("{target:.6} +- {tol:.1e}"),
            measured,
            pass: (measured - target).abs() <= tol,
        }
    }

    pub fn check(anchor: &str, tag: Tag, expected: impl Into<String>, measured: f64, pass: bool) -> Self {
        Expectation { anchor: anchor.into(), tag, expected: expected.into(), measured, pass }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CaseReport {
    pub case: String,
    pub resolution: usize,
    pub expectations: Vec<Expectation>,
    /// Scalar diagnostics compared across resolutions by the ladder.
    pub metrics: BTreeMap<String, f64>,
    pub artifacts: Vec<String>,
    #[serde(skip)]
    pub files: Vec<(String, String)>,
}

impl CaseReport {
    fn new(case: &str, resolution: usize) -> Self {
        CaseReport {
            case: case.to_string(),
            resolution,
            expectations: Vec::new(),
            metrics: BTreeMap::new(),
            artifacts: Vec::new(),
            files: Vec::new(),
        }
    }

    fn expect(&mut self, e: Expectation) {
        self.expectations.push(e);
    }

    fn metric(&mut self, key: &str, v: f64) {
        self.metrics.insert(key.to_string(), v);
    }

    fn attach(&mut self, suffix: &str, contents: String) {
        let name = format!("{}_{}_{}", self.case, self.resolution, suffix);
        self.artifacts.push(name.clone());
        self.files.push((name, contents));
    }

    pub fn passed(&self) -> bool {
        self.expectations.iter().all(|e| e.pass)
    }

    pub fn failures(&self) -> Vec<&Expectation> {
        self.expectations.iter().filter(|e| !e.pass).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "trend", content = "value")]
pub enum Trend {
    Converges(f64),
    Diverges,
}

/// Last three entries: `Diverges` when each grows by at least `TREND_RATIO`
/// over the previous one (or the last is `+inf`), else `Converges(last)`.
pub fn classify_trend(seq: &[f64]) -> Trend {
    let n = seq.len();
    if n >= 3 {
        let (a, b, c) = (seq[n - 3], seq[n - 2], seq[n - 1]);
        if is_inf(c) || (a > 0.0 && b >= TREND_RATIO * a && c >= TREND_RATIO * b) {
            return Trend::Diverges;
        }
    }
    Trend::Converges(seq.last().copied().unwrap_or(f64::NAN))
}

fn converges_to(t: Trend, target: f64, tol: f64) -> bool {
    matches!(t, Trend::Converges(v) if (v - target).abs() <= tol)
}

fn trend_value(t: Trend) -> f64 {
    match t {
        Trend::Converges(v) => v,
        Trend::Diverges => f64::INFINITY,
    }
}

fn check_resolution(case: &CaseSpec, resolution: usize) -> Result<()> {
    if resolution > case.max_resolution {
        return Err(LabError::ResolutionCap { resolution, cap: case.max_resolution });
    }
    if resolution < 5 || resolution % 2 == 0 {
        return Err(LabError::InvalidResolution(resolution));
    }
    Ok(())
}

/// Cap for `-log` singularities at a given resolution.
pub fn log_cap(resolution: usize) -> f64 {
    4.0 * (resolution as f64).ln()
}

fn dist_to_pole(c: &[f64; 4]) -> f64 {
    ((c[0] - 1.0).powi(2) + c[1] * c[1] + c[2] * c[2] + c[3] * c[3]).sqrt()
}

/// Ball2C nodes within `POLE_MASK_SPACINGS` spacings of `(1, 0)`.
pub fn pole_mask(resolution: usize) -> Result<MaskSpec> {
    let d = make_domain(DomainKind::Ball2C, resolution, Some(&MaskSpec::None))?;
    let r = POLE_MASK_SPACINGS * d.spacing + 1e-9;
    let nodes = d.active_nodes().into_iter().filter(|&n| dist_to_pole(&d.coords(n)) <= r).collect();
    Ok(MaskSpec::Nodes { nodes })
}

/// Test nodes with `|1 - z| >= 1/2`, away from the pole.
fn far_from_pole(d: &GridDomain, dilation: usize) -> Vec<usize> {
    d.test_region(dilation)
        .into_iter()
        .filter(|&n| {
            let c = d.coords(n);
            ((c[0] - 1.0).powi(2) + c[1] * c[1]).sqrt() >= 0.5
        })
        .collect()
}

fn sup_abs_on(f: &GridFunction, nodes: &[usize]) -> f64 {
    nodes.iter().map(|&n| f.values[n]).filter(|v| !is_inf(*v)).fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Harmonic measure of the boundary node next to `z = 1`, normalised to 1 at
/// the centre: the grid's own Poisson kernel.
pub fn discrete_poisson_kernel(d: &Arc<GridDomain>, cone: &Cone) -> Result<GridFunction> {
    if d.kind != DomainKind::Disc1D {
        return Err(LabError::DomainMismatch("the discrete Poisson kernel lives on Disc1D".into()));
    }
    let res = d.resolution;
    let pole = d.index_of(&[res - 2, res / 2]);
    let centre = d.index_of(&[res / 2, res / 2]);
    let data = GridFunction::from_fn(d.clone(), |n| if n == pole { 1.0 } else { 0.0 });
    let hm = perron_bremermann_with(&data, cone, &EnvelopeOptions::fast(d));
    if !hm.converged {
        return Err(LabError::NoConvergence { iterations: hm.iterations, delta: hm.final_delta });
    }
    let c = hm.result.values[centre];
    Ok(hm.result.map(|v| v / c))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CornerProbe {
    pub radii: Vec<f64>,
    pub sups: Vec<f64>,
    pub infs: Vec<f64>,
    pub limsup: Trend,
    pub liminf: Trend,
}

/// Sup and inf of a closed form over sample points at distance `ρ` from a
/// boundary point `p` of the unit ball, for each `ρ` in `radii`. Directions
/// that leave the ball are pulled back radially to `1 - ρ^3`, so tangential
/// approaches are sampled as well.
pub fn corner_probe(name: &str, params: &[f64], p: [f64; 4], radii: &[f64], density: usize) -> Result<CornerProbe> {
    if radii.len() < 3 || radii.windows(2).any(|w| w[1] >= w[0]) {
        return Err(LabError::ParamOutOfRange("radii must be decreasing, at least three".into()));
    }
    let k = density.max(2);
    let mut sups = Vec::new();
    let mut infs = Vec::new();
    for &rho in radii {
        let (mut hi, mut lo) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in 0..=k {
            let eta = i as f64 / k as f64 * std::f64::consts::FRAC_PI_2;
            for j in 0..2 * k {
                let t1 = j as f64 / (2 * k) as f64 * std::f64::consts::TAU;
                for l in 0..2 * k {
                    let t2 = l as f64 / (2 * k) as f64 * std::f64::consts::TAU;
                    let dir = [eta.cos() * t1.cos(), eta.cos() * t1.sin(), eta.sin() * t2.cos(), eta.sin() * t2.sin()];
                    let mut x = [0.0; 4];
                    for a in 0..4 {
                        x[a] = p[a] + rho * dir[a];
                    }
                    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if r >= 1.0 {
                        let s = (1.0 - rho.powi(3)) / r;
                        x.iter_mut().for_each(|v| *v *= s);
                    }
                    let v = eval_point(name, params, Complex64::new(x[0], x[1]), Complex64::new(x[2], x[3]));
                    if v.is_nan() {
                        continue;
                    }
                    hi = hi.max(v);
                    lo = lo.min(v);
                }
            }
        }
        if hi == f64::NEG_INFINITY {
            return Err(LabError::NoSamples(format!("radius {rho}")));
        }
        sups.push(hi);
        infs.push(lo);
    }
    let limsup = classify_trend(&sups);
    let liminf = classify_trend(&infs);
    Ok(CornerProbe { radii: radii.to_vec(), sups, infs, limsup, liminf })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LelongReport {
    pub radii: Vec<f64>,
    pub estimates: Vec<f64>,
    pub trend: Trend,
}

/// Per radius `r`, the minimum of `2u / log(|z|^2 + |w|^2)` over unmasked nodes
/// within half a spacing of the sphere `|(z, w)| = r`.
pub fn lelong_estimate(u: &GridFunction, radii: &[f64]) -> Result<LelongReport> {
    let d = &u.domain;
    if d.kind != DomainKind::Ball2C {
        return Err(LabError::DomainMismatch("Lelong estimates are taken on Ball2C".into()));
    }
    if radii.windows(2).any(|w| w[1] >= w[0]) {
        return Err(LabError::ParamOutOfRange("radii must be decreasing".into()));
    }
    let h = d.spacing;
    let mut estimates = Vec::new();
    for &r in radii {
        if r < h || r >= 1.0 {
            return Err(LabError::ParamOutOfRange(format!("radius {r} outside [h, 1)")));
        }
        let mut est = f64::INFINITY;
        let mut any = false;
        for n in d.active_nodes() {
            if d.is_masked(n) {
                continue;
            }
            let c = d.coords(n);
            let rr = c.iter().map(|x| x * x).sum::<f64>();
            if (rr.sqrt() - r).abs() > 0.5 * h {
                continue;
            }
            any = true;
            let v = u.values[n];
            if v.is_nan() || is_inf(v) {
                continue;
            }
            est = est.min(2.0 * v / rr.ln());
        }
        if !any {
            return Err(LabError::NoSamples(format!("sphere of radius {r}")));
        }
        estimates.push(est);
    }
    let trend = classify_trend(&estimates);
    Ok(LelongReport { radii: radii.to_vec(), estimates, trend })
}

#[derive(Debug, Clone)]
pub struct WitnessReport {
    pub sup_of_family: GridFunction,
    /// Sup over the test region of `target - sup(first k members)`, per k.
    pub gaps: Vec<f64>,
    pub sup_gap: f64,
    /// Largest drop between consecutive members on the test region.
    pub monotone_defect: f64,
}

/// Pointwise supremum of a family of bounded cone members and its distance
/// below the target on the test region.
pub fn quasibounded_witness(target: &GridFunction, family: &[GridFunction], cone: &Cone) -> Result<WitnessReport> {
    if family.is_empty() {
        return Err(LabError::NoSamples("empty family".into()));
    }
    let d = target.domain.clone();
    let tol = default_tolerance(&d);
    for (k, m) in family.iter().enumerate() {
        let bounded = m.active_values().all(|(_, v)| !is_inf(v) && v < V_MAX / 2.0);
        if !bounded {
            return Err(LabError::ParamOutOfRange(format!("family member {k} is not bounded")));
        }
        let rep = psh_check_with(m, cone, tol);
        if !rep.is_member {
            return Err(LabError::NotInCone(rep.worst_violation));
        }
    }
    let test = d.test_region(0);
    let mut sup = family[0].clone();
    let mut gaps = Vec::new();
    let mut monotone_defect = 0.0f64;
    for (k, m) in family.iter().enumerate() {
        if k > 0 {
            let prev = &family[k - 1];
            monotone_defect = test.iter().map(|&n| prev.values[n] - m.values[n]).fold(monotone_defect, f64::max);
            sup = sup.zip_with(m, f64::max);
        }
        gaps.push(test.iter().filter(|&&n| !is_inf(target.values[n])).map(|&n| target.values[n] - sup.values[n]).fold(f64::NEG_INFINITY, f64::max));
    }
    let sup_gap = *gaps.last().expect("nonempty family");
    Ok(WitnessReport { sup_of_family: sup, gaps, sup_gap, monotone_defect })
}

/// Concave, nondecreasing, sublinear transforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Psi {
    Sqrt,
    Log1p,
    /// Linear growth; fails the sublinearity precondition.
    Identity,
}

impl Psi {
    pub fn eval(self, t: f64) -> f64 {
        if is_inf(t) {
            return t;
        }
        match self {
            Psi::Sqrt => t.max(0.0).sqrt(),
            Psi::Log1p => t.max(0.0).ln_1p(),
            Psi::Identity => t,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sqrt" => Ok(Psi::Sqrt),
            "log1p" => Ok(Psi::Log1p),
            "identity" => Ok(Psi::Identity),
            _ => Err(LabError::InvalidConfig(format!("unknown psi `{s}`"))),
        }
    }
}

/// `ψ(t)/t` must strictly decrease along `t = 2^k` and end below `1e-3`.
pub fn check_psi_growth(psi: Psi) -> Result<()> {
    let ratios: Vec<f64> = (0..=40).map(|k| 2f64.powi(k)).map(|t| psi.eval(t) / t).collect();
    let decreasing = ratios.windows(2).all(|w| w[1] < w[0]);
    let last = ratios[ratios.len() - 1];
    if !decreasing || last > 1e-3 {
        return Err(LabError::GrowthPrecondition(format!("{psi:?}: psi(t)/t reaches {last:.3e} at t = 2^40")));
    }
    Ok(())
}

/// Registered φ for ψ-transforms: formula id on the toric domain.
pub const PHI_CASES: &[(&str, &str)] = &[("neg_log_abs_z", "neg_log_abs_z"), ("neg_log_abs_zw", "neg_log_abs_zw_pow"), ("bounded", "norm_sq")];

fn phi_on_toric(phi_case: &str, t: &Arc<GridDomain>) -> Result<GridFunction> {
    let (_, formula) = PHI_CASES.iter().find(|(n, _)| *n == phi_case).ok_or_else(|| LabError::UnknownCase(phi_case.to_string()))?;
    match *formula {
        "neg_log_abs_zw_pow" => eval_closed_form(formula, t, &[1.0]),
        f => eval_closed_form(f, t, &[]),
    }
}

fn toric_domain(resolution: usize, truncation: f64) -> Result<Arc<GridDomain>> {
    Ok(Arc::new(make_domain_with(DomainKind::ToricLog2D, resolution, &MaskSpec::None, truncation)?))
}

/// `f` on the boundary nodes (the arc, plus lattice nodes that sit on it
/// numerically), `+inf` elsewhere.
fn arc_profile(f: &GridFunction) -> GridFunction {
    let t = f.domain.clone();
    GridFunction::from_fn(t.clone(), |n| if n >= t.lattice_len || t.class_of(n) == NodeClass::Boundary { f.values[n] } else { f64::INFINITY })
}

/// Toric nodes in the box `x, y <= -1/2`, clear of the sphere where the
/// envelope may be singular. Its edges are nodes at every resolution used, so
/// fine and coarse oscillations cover the same set.
fn inside_compact(t: &GridDomain, n: usize) -> bool {
    let c = t.coords(n);
    c[0] <= -0.5 + 1e-12 && c[1] <= -0.5 + 1e-12
}

/// Largest jump of `g` between lattice neighbours inside the compact set.
fn lattice_oscillation(g: &GridFunction) -> f64 {
    let d = &g.domain;
    let mut osc = 0.0f64;
    for n in 0..d.lattice_len {
        if !d.is_active(n) || !inside_compact(d, n) || is_inf(g.values[n]) {
            continue;
        }
        for off in [[1, 0], [0, 1]] {
            if let Some(m) = d.offset_index(n, &off) {
                if d.is_active(m) && inside_compact(d, m) && !is_inf(g.values[m]) {
                    osc = osc.max((g.values[n] - g.values[m]).abs());
                }
            }
        }
    }
    osc
}

/// `P(ψ∘φ)` on the toric strip of depth `VERDICT_TRUNCATION`, with the
/// tameness verdict of `ψ∘φ`, a continuity exponent from two resolutions, and
/// the bounded approximants `u_ε = max(P(ψ∘φ) - εφ, 0)`.
pub fn psi_transform_case(phi_case: &str, psi: Psi, resolution: usize) -> Result<CaseReport> {
    check_psi_growth(psi)?;
    let name = format!("psi_{phi_case}_{psi:?}").to_lowercase();
    let mut rep = CaseReport::new(&name, resolution);
    let t = toric_domain(resolution, VERDICT_TRUNCATION)?;
    let phi = phi_on_toric(phi_case, &t)?;
    let composed = phi.map(|v| psi.eval(v));
    let p = toric_convex_envelope(&arc_profile(&composed))?;
    let nodes = t.active_nodes();
    let sup_p = sup_abs_on(&p, &nodes);
    rep.expect(Expectation::at_most("P(psi o phi) is finite off the mask", Tag::Derived, sup_p, V_MAX / 2.0));

    let cone = Cone::build(t.clone(), &StencilFamily::toric())?;
    let opts = SOptions { envelope: EnvelopeOptions::fast(&t), ..Default::default() };
    let s = s_operator_with(&composed, &DEFAULT_LAMBDAS, &cone, &opts)?;
    rep.expect(Expectation::check("psi o phi is tame", Tag::Derived, "Tame", s.tail_estimate, s.verdict == Verdict::Tame));

    // continuity is local: measure it on the shallow strip, where the
    // spacing resolves the envelope near the sphere
    let tf = toric_domain(resolution, DEFAULT_TRUNCATION)?;
    let tc = toric_domain((resolution - 1) / 2 + 1, DEFAULT_TRUNCATION)?;
    let shallow = |d: &Arc<GridDomain>| -> Result<GridFunction> { toric_convex_envelope(&arc_profile(&phi_on_toric(phi_case, d)?.map(|v| psi.eval(v)))) };
    let (p_fine, p_coarse) = (shallow(&tf)?, shallow(&tc)?);
    let (osc_f, osc_c) = (lattice_oscillation(&p_fine), lattice_oscillation(&p_coarse));
    rep.metric("oscillation", osc_f);
    // a flat envelope has nothing to measure
    let flat = osc_f <= 1e-10;
    let gamma = if flat { 0.0 } else { (osc_c / osc_f).log2() };
    if !flat {
        rep.metric("continuity_gamma", gamma);
        rep.metric("continuity_c", osc_f / tf.spacing.powf(gamma));
    }
    rep.expect(Expectation::check(
        "oscillation over adjacent nodes <= C h^gamma with gamma > 0",
        Tag::Derived,
        "gamma > 0 or flat",
        gamma,
        flat || gamma > 0.0,
    ));

    // u_eps = max(P - eps phi, 0) increases to P
    let test = t.test_region(0);
    let mut gaps = Vec::new();
    for eps in [1e-1, 1e-2, 1e-3, 1e-4] {
        let gap = test
            .iter()
            .filter(|&&n| !is_inf(phi.values[n]))
            .map(|&n| (p.values[n] - (p.values[n] - eps * phi.values[n]).max(0.0)).abs())
            .fold(0.0f64, f64::max);
        gaps.push(gap);
    }
    let last = gaps[gaps.len() - 1];
    rep.metric("u_eps_gap", last);
    let shrinking = gaps.windows(2).all(|w| w[1] <= w[0]);
    rep.expect(Expectation::check(
        "u_eps = max(P(psi o phi) - eps phi, 0) converges to P(psi o phi)",
        Tag::Exact,
        format!("nonincreasing, last <= {:.3e}", 1e-2 * (1.0 + sup_p)),
        last,
        shrinking && last <= 1e-2 * (1.0 + sup_p),
    ));
    if phi_case == "neg_log_abs_z" && psi == Psi::Sqrt {
        let exact = eval_closed_form("ball_envelope_alpha", &tf, &[0.5])?;
        let finite: Vec<usize> = tf.active_nodes().into_iter().filter(|&n| !is_inf(exact.values[n])).collect();
        rep.expect(Expectation::at_most(
            "sqrt(-log|z|) reduces to the first ball envelope",
            Tag::Exact,
            p_fine.sup_abs_diff(&exact, &finite),
            1e-8,
        ));
    }
    rep.attach("ladder.csv", s.ladder_csv());
    Ok(rep)
}

pub fn run_case(name: &str, resolution: usize) -> Result<CaseReport> {
    let case = lookup_case(name)?;
    check_resolution(case, resolution)?;
    match case.name {
        "ex11_punctured_disc" => ex11(resolution),
        "ex12_poisson" => ex12(resolution),
        "ball_alpha_half" => ball_alpha_half(resolution),
        "ball_zw_alpha_half" => ball_zw_alpha_half(resolution),
        "nonuniqueness_uv" => nonuniqueness(resolution),
        "ball_log_verdicts" => ball_log_verdicts(resolution),
        "quasibounded_witnesses" => witnesses(resolution),
        "lelong_examples" => lelong_examples(resolution),
        "hessian_identities" => hessian_identities(resolution),
        "oracle_triangle" => oracle_triangle(resolution),
        "psi_sqrt_neg_log_z" => psi_transform_case("neg_log_abs_z", Psi::Sqrt, resolution),
        "psi_log1p_neg_log_zw" => psi_transform_case("neg_log_abs_zw", Psi::Log1p, resolution),
        "psi_bounded" => psi_transform_case("bounded", Psi::Sqrt, resolution),
        other => Err(LabError::UnknownCase(other.to_string())),
    }
}

fn arc(kind: DomainKind, resolution: usize, mask: &MaskSpec) -> Result<Arc<GridDomain>> {
    Ok(Arc::new(make_domain(kind, resolution, Some(mask))?))
}

fn ex11(res: usize) -> Result<CaseReport> {
    let mut rep = CaseReport::new("ex11_punctured_disc", res);
    // the origin keeps its row: bounded functions extend across the puncture
    let d = arc(DomainKind::PuncturedDisc1D, res, &MaskSpec::None)?;
    let f = eval_closed_form("neg_log_abs_z", &d, &[log_cap(res)])?;
    let g = GridFunction::from_fn(d.clone(), |n| if d.class_of(n) == NodeClass::Boundary { 0.0 } else { f.values[n] });
    let cone = Cone::build(d.clone(), &StencilFamily::one_variable())?;
    let opts = EnvelopeOptions { tol: Some(1e-13), iter_max: Some(2000 * res), ..EnvelopeOptions::fast(&d) };
    let r = greatest_minorant_with(&g, &cone, &opts);
    if !r.converged {
        return Err(LabError::NoConvergence { iterations: r.iterations, delta: r.final_delta });
    }
    let tol = default_tolerance(&d);
    let top = r.result.sup_over(&d.active_nodes());
    let centre = r.result.values[d.index_of(&[res / 2, res / 2])];
    rep.metric("sup_minorant", top);
    rep.expect(Expectation::at_most(
        "bounded subharmonic minorant of -log|z| with zero boundary values is <= 0",
        Tag::Exact,
        top,
        tol,
    ));
    rep.expect(Expectation::near("minorant at the puncture", Tag::Derived, centre, 0.0, tol));
    rep.attach("minorant.csv", r.result.to_csv());
    Ok(rep)
}

fn ex12(res: usize) -> Result<CaseReport> {
    let mut rep = CaseReport::new("ex12_poisson", res);
    let d = arc(DomainKind::Disc1D, res, &MaskSpec::None)?;
    let cone = Cone::build(d.clone(), &StencilFamily::one_variable())?;
    let k = discrete_poisson_kernel(&d, &cone)?;
    let p = eval_closed_form("poisson_kernel", &d, &[])?;
    let reference = far_from_pole(&d, 2);
    let kernel_err = k.sup_abs_diff(&p, &reference) / sup_abs_on(&p, &reference);
    rep.metric("kernel_rel_error", kernel_err);
    rep.expect(Expectation::at_most("grid kernel against (1-|z|^2)/|1-z|^2 away from the pole", Tag::Derived, kernel_err, 0.05));
    let opts = SOptions { envelope: EnvelopeOptions::fast(&d), reference: Some(reference), ..Default::default() };
    let s = s_operator_with(&k, &[1.0, 2.0, 4.0, 8.0], &cone, &opts)?;
    rep.metric("singular_gap", s.singular_gap);
    rep.metric("tail_estimate", s.tail_estimate);
    rep.expect(Expectation::check("the Poisson kernel is singular", Tag::Exact, "Singular", s.singular_gap, s.verdict == Verdict::Singular));
    rep.attach("ladder.csv", s.ladder_csv());
    rep.attach("kernel.csv", k.to_csv());
    Ok(rep)
}

/// Toric spacing that keeps the pullback error below the lattice error: the
/// bilinear error in log coordinates scales with the square of the spacing.
fn toric_resolution_for(res: usize) -> usize {
    (res - 1) * (res - 1) / 2 + 1
}

struct ToricRun {
    ball: Arc<GridDomain>,
    toric: Arc<GridDomain>,
    envelope: GridFunction,
    pulled: Vec<(usize, f64)>,
    missed: usize,
}

fn toric_run(data: &str, alpha: f64, res: usize) -> Result<ToricRun> {
    let ball = arc(DomainKind::Ball2C, res, &MaskSpec::None)?;
    let toric = toric_domain(toric_resolution_for(res), DEFAULT_TRUNCATION)?;
    let phi = eval_closed_form(data, &toric, &[alpha])?;
    let envelope = toric_convex_envelope(&arc_profile(&phi))?;
    let mut pulled = Vec::new();
    let mut missed = 0;
    for n in ball.test_region(0) {
        match toric_pullback(&envelope, &ball, n) {
            Some(v) => pulled.push((n, v)),
            None => missed += 1,
        }
    }
    Ok(ToricRun { ball, toric, envelope, pulled, missed })
}

/// Sum of the positive part of `det D^2 g h^2` over toric interior nodes whose
/// centred stencil is finite.
fn toric_ma_mass(g: &GridFunction) -> f64 {
    let t = &g.domain;
    let h = t.spacing;
    let mut mass = 0.0;
    for n in t.interior_nodes() {
        let at = |dx: i32, dy: i32| t.offset_index(n, &[dx, dy]).filter(|&m| t.is_active(m)).map(|m| g.values[m]);
        let vals = [at(0, 0), at(1, 0), at(-1, 0), at(0, 1), at(0, -1), at(1, 1), at(-1, -1), at(1, -1), at(-1, 1)];
        if vals.iter().any(|v| v.is_none_or(is_inf)) {
            continue;
        }
        let v: Vec<f64> = vals.iter().map(|x| x.unwrap()).collect();
        let gxx = (v[1] + v[2] - 2.0 * v[0]) / (h * h);
        let gyy = (v[3] + v[4] - 2.0 * v[0]) / (h * h);
        let gxy = (v[5] + v[6] - v[7] - v[8]) / (4.0 * h * h);
        mass += (gxx * gyy - gxy * gxy).max(0.0) * h * h;
    }
    mass
}

fn real_slice_csv(run: &ToricRun, exact: &GridFunction) -> String {
    let mut out = String::from("re_z,re_w,envelope,closed_form\n");
    for &(n, v) in &run.pulled {
        let c = run.ball.coords(n);
        if c[1] == 0.0 && c[3] == 0.0 {
            out.push_str(&format!("{},{},{},{}\n", c[0], c[2], v, exact.values[n]));
        }
    }
    out
}

fn ball_alpha_half(res: usize) -> Result<CaseReport> {
    let mut rep = CaseReport::new("ball_alpha_half", res);
    let run = toric_run("neg_log_abs_z_pow", 0.5, res)?;
    let exact = eval_closed_form("ball_envelope_alpha", &run.ball, &[0.5])?;
    let (mut err, mut top) = (0.0f64, 0.0f64);
    for &(n, v) in &run.pulled {
        err = err.max((v - exact.values[n]).abs());
        top = top.max(exact.values[n].abs());
    }
    let rel = err / top;
    rep.metric("sup_error", rel);
    rep.metric("residual", toric_ma_mass(&run.envelope));
    rep.expect(Expectation::at_most("P phi = (-1/2 log(1-|w|^2))^(1/2) on the test region", Tag::Exact, rel, 0.02));
    rep.expect(Expectation::check("every test node pulls back to a toric cell", Tag::Trivial, "0 missed", run.missed as f64, run.missed == 0));
    let exact_t = eval_closed_form("ball_envelope_alpha", &run.toric, &[0.5])?;
    let toric_err = run.envelope.sup_abs_diff(&exact_t, &run.toric.active_nodes());
    rep.expect(Expectation::at_most("toric hull equals the closed form at toric nodes", Tag::Exact, toric_err, 1e-8));
    // envelope depends on |w| alone
    let t = &run.toric;
    let mut spread = 0.0f64;
    for j in 0..t.resolution {
        let col: Vec<f64> = (0..t.resolution)
            .map(|i| t.index_of(&[i, j]))
            .filter(|&n| t.is_active(n) && !is_inf(run.envelope.values[n]))
            .map(|n| run.envelope.values[n])
            .collect();
        let (lo, hi) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if !col.is_empty() {
            spread = spread.max(hi - lo);
        }
    }
    rep.metric("z_variation", spread);
    rep.expect(Expectation::at_most("envelope is constant in z at fixed |w|", Tag::Exact, spread, default_tolerance(t)));
    rep.attach("surface.csv", real_slice_csv(&run, &exact));
    Ok(rep)
}

fn ball_zw_alpha_half(res: usize) -> Result<CaseReport> {
    let mut rep = CaseReport::new("ball_zw_alpha_half", res);
    let run = toric_run("neg_log_abs_zw_pow", 0.5, res)?;
    let exact = eval_closed_form("ball_zw_envelope_alpha", &run.ball, &[0.5])?;
    let top = run.pulled.iter().map(|&(n, _)| exact.values[n].abs()).fold(0.0f64, f64::max);
    let mut regime_err = [0.0f64; 3];
    let mut regime_count = [0usize; 3];
    for &(n, v) in &run.pulled {
        let (z, w) = run.ball.complex_point(n);
        let k = if z.norm_sqr() >= 0.5 {
            0
        } else if w.norm_sqr() >= 0.5 {
            1
        } else {
            2
        };
        regime_err[k] = regime_err[k].max((v - exact.values[n]).abs() / top);
        regime_count[k] += 1;
    }
    let labels = ["branch |z|^2 >= 1/2", "branch |w|^2 >= 1/2", "plateau |z|^2, |w|^2 < 1/2"];
    for k in 0..3 {
        rep.expect(Expectation::check(
            labels[k],
            Tag::Exact,
            "<= 3.000e-2 with samples",
            regime_err[k],
            regime_count[k] > 0 && regime_err[k] <= 0.03,
        ));
    }
    let err = regime_err.iter().copied().fold(0.0, f64::max);
    rep.metric("sup_error", err);
    rep.metric("residual", toric_ma_mass(&run.envelope));
    let corner = run.envelope.values[run.toric.index_of(&[0, 0])];
    rep.expect(Expectation::near("plateau value (log 2)^(1/2)", Tag::Exact, corner, 2f64.ln().sqrt(), 1e-6));
    rep.expect(Expectation::check("every test node pulls back to a toric cell", Tag::Trivial, "0 missed", run.missed as f64, run.missed == 0));
    rep.attach("surface.csv", real_slice_csv(&run, &exact));
    Ok(rep)
}

fn nonuniqueness(res: usize) -> Result<CaseReport> {
    let mut rep = CaseReport::new("nonuniqueness_uv", res);
    let d = arc(DomainKind::Ball2C, res, &pole_mask(res)?)?;
    let u = eval_closed_form("nonuniq_u", &d, &[])?;
    let v = eval_closed_form("nonuniq_v", &d, &[])?;
    let reference = far_from_pole(&d, 1);
    let opts = EnvelopeOptions::fast(&d);
    let centre = d.index_of(&[res / 2; 4]);

    let unmasked: Vec<usize> = d.active_nodes().into_iter().filter(|&n| !d.is_masked(n)).collect();
    let order = unmasked.iter().map(|&n| v.values[n] - u.values[n]).fold(f64::NEG_INFINITY, f64::max);
    rep.expect(Expectation::at_most("v <= u", Tag::Exact, order, 1e-12));

    let wide = StencilFamily::two_variable_wide();
    let cone_v = Cone::build(d.clone(), &wide)?;
    let mut lower: Option<GridFunction> = None;
    for cut in [2.0, 8.0, 32.0] {
        let mut o = opts.clone();
        o.initial = lower.as_ref().map(|l| l.values.clone());
        let r = perron_bremermann_with(&v.map(|x| x.min(cut)), &cone_v, &o);
        if !r.converged {
            return Err(LabError::NoConvergence { iterations: r.iterations, delta: r.final_delta });
        }
        lower = Some(r.result);
    }
    let lower = lower.expect("three cutoffs");
    let narrow = StencilFamily::two_variable();
    let cone_u = Cone::build(d.clone(), &narrow)?;
    let up = greatest_minorant_with(&u, &cone_u, &opts);
    if !up.converged {
        return Err(LabError::NoConvergence { iterations: up.iterations, delta: up.final_delta });
    }
    let upper = up.result;

    let err_v = lower.sup_abs_diff(&v, &reference) / v.sup_over(&reference);
    let err_u = upper.sup_abs_diff(&u, &reference) / u.sup_over(&reference);
    rep.metric("sup_error_v", err_v);
    rep.metric("sup_error_u", err_u);
    rep.expect(Expectation::at_most("lower sandwich envelope P(min(n, v)) recovers v", Tag::Exact, err_v, 0.03));
    rep.expect(Expectation::at_most("upper envelope recovers u", Tag::Exact, err_u, 0.03));
    rep.expect(Expectation::near("lower envelope at the centre", Tag::Exact, lower.values[centre], 0.0, 0.05));
    rep.expect(Expectation::near("upper envelope at the centre", Tag::Exact, upper.values[centre], 1.0, 0.05));
    let gap = reference.iter().map(|&n| lower.values[n] - upper.values[n]).fold(f64::NEG_INFINITY, f64::max);
    rep.expect(Expectation::at_most("lower envelope <= upper envelope", Tag::Derived, gap, default_tolerance(&d)));

    let tol = default_tolerance(&d);
    let keep = |n: usize| reference.binary_search(&n).is_ok();
    for (name, f) in [("u", &u), ("v", &v)] {
        let m = psh_check_on(f, &cone_u, tol, keep);
        rep.expect(Expectation::check(&format!("{name} is plurisubharmonic away from the pole"), Tag::Exact, "member", m.worst_violation, m.is_member));
    }
    // u is pluriharmonic and v = |w/(1-z)|^2 has a rank-one Hessian
    rep.metric("residual_u", maximality_mass(&u, &narrow, keep)?);
    rep.metric("residual_v", maximality_mass(&v, &narrow, keep)?);
    rep.metric("ma_mass_upper", maximality_mass(&upper, &narrow, keep)?);
    rep.metric("ma_mass_lower", maximality_mass(&lower, &wide, keep)?);

    let radii = [0.1, 0.01, 0.001];
    for (name, f) in [("u", "nonuniq_u"), ("v", "nonuniq_v")] {
        let probe = corner_probe(f, &[], [1.0, 0.0, 0.0, 0.0], &radii, 6)?;
        rep.expect(Expectation::check(
            &format!("limsup of {name} at (1, 0) is +inf"),
            Tag::Exact,
            "Diverges",
            *probe.sups.last().expect("three radii"),
            probe.limsup == Trend::Diverges,
        ));
        rep.expect(Expectation::check(
            &format!("liminf of {name} at (1, 0) is 0"),
            Tag::Exact,
            "Converges to 0 within 1e-2",
            trend_value(probe.liminf),
            converges_to(probe.liminf, 0.0, 1e-2),
        ));
    }
    let mut csv = String::from("node,lower,upper,v,u\n");
    for &n in &reference {
        csv.push_str(&format!("{n},{},{},{},{}\n", lower.values[n], upper.values[n], v.values[n], u.values[n]));
    }
    rep.attach("sandwich.csv", csv);
    Ok(rep)
}

fn ball_log_verdicts(res: usize) -> Result<CaseReport> {
    let mut rep = CaseReport::new("ball_log_verdicts", res);
    let t = toric_domain(res, VERDICT_TRUNCATION)?;
    let cone = Cone::build(t.clone(), &StencilFamily::toric())?;
    let opts = SOptions { envelope: EnvelopeOptions::fast(&t), ..Default::default() };
    let constant = s_operator_with(&eval_closed_form("constant", &t, &[7.0])?, &DEFAULT_LAMBDAS, &cone, &opts)?;
    rep.expect(Expectation::check("bounded data is tame", Tag::Exact, "Tame", constant.tail_estimate, constant.verdict == Verdict::Tame));
    rep.expect(Expectation::at_most("bounded data has tail 0", Tag::Exact, constant.tail_estimate, 0.0));
    let root = s_operator_with(&eval_closed_form("neg_log_abs_z_pow", &t, &[0.5])?, &DEFAULT_LAMBDAS, &cone, &opts)?;
    rep.expect(Expectation::check("(-log|z|)^(1/2) is tame", Tag::Exact, "Tame", root.tail_estimate, root.verdict == Verdict::Tame));
    let log = s_operator_with(&eval_closed_form("neg_log_abs_z", &t, &[])?, &DEFAULT_LAMBDAS, &cone, &opts)?;
    rep.expect(Expectation::check("-log|z| is not tame", Tag::Exact, "not Tame", log.tail_estimate, log.verdict != Verdict::Tame));
    rep.metric("tail_sqrt", root.tail_estimate);
    rep.metric("tail_log", log.tail_estimate);

    let b = arc(DomainKind::Ball2C, 33, &MaskSpec::None)?;
    let sq = eval_closed_form("neg_log_abs_z", &b, &[log_cap(33)])?.map(|x| -x * x);
    let lel = lelong_estimate(&sq, &lelong_radii())?;
    rep.expect(Expectation::check(
        "Lelong number of -(-log|z|)^2 is infinite",
        Tag::Exact,
        "Diverges",
        *lel.estimates.last().expect("radii"),
        lel.trend == Trend::Diverges,
    ));
    rep.attach("ladder_log.csv", log.ladder_csv());
    Ok(rep)
}

pub fn lelong_radii() -> Vec<f64> {
    vec![0.5, 0.25, 1.0 / 16.0]
}

fn lelong_examples(res: usize) -> Result<CaseReport> {
    let mut rep = CaseReport::new("lelong_examples", res);
    let b = arc(DomainKind::Ball2C, res, &MaskSpec::None)?;
    if b.spacing > 1.0 / 16.0 {
        return Err(LabError::ParamOutOfRange("Lelong shells need spacing <= 1/16".into()));
    }
    let cap = log_cap(res);
    for (c, anchor) in [(1.0, "Lelong number of log|z| is 1"), (3.0, "Lelong number of 3 log|z| is 3")] {
        let f = eval_closed_form("log_abs_z", &b, &[c])?.map(|x| x.max(-c * cap));
        let lel = lelong_estimate(&f, &lelong_radii())?;
        rep.expect(Expectation::check(anchor, Tag::Trivial, format!("Converges to {c}"), trend_value(lel.trend), converges_to(lel.trend, c, 1e-6)));
    }
    let sq = eval_closed_form("neg_log_abs_z", &b, &[cap])?.map(|x| -x * x);
    let lel = lelong_estimate(&sq, &lelong_radii())?;
    rep.expect(Expectation::check(
        "Lelong number of -(-log|z|)^2 is infinite",
        Tag::Exact,
        "Diverges",
        *lel.estimates.last().expect("radii"),
        lel.trend == Trend::Diverges,
    ));
    Ok(rep)
}

fn witnesses(res: usize) -> Result<CaseReport> {
    let mut rep = CaseReport::new("quasibounded_witnesses", res);
    let d = arc(DomainKind::Ball2C, res, &pole_mask(res)?)?;
    let cone = Cone::build(d.clone(), &StencilFamily::two_variable())?;
    let v = eval_closed_form("nonuniq_v", &d, &[])?;
    let mut family = Vec::new();
    for eps in [0.2, 0.1, 0.05, 0.01, 1e-3, 1e-4] {
        family.push(eval_closed_form("nonuniq_v_eps", &d, &[eps])?);
    }
    let w = quasibounded_witness(&v, &family, &cone)?;
    record_witness(&mut rep, "v = sup over eps of v_eps", "v_eps", &w);

    let b = arc(DomainKind::Ball2C, res, &MaskSpec::None)?;
    let cone_b = Cone::build(b.clone(), &StencilFamily::two_variable())?;
    let target = eval_closed_form("ball_envelope_alpha", &b, &[1.0])?;
    let mut family = Vec::new();
    for r in [0.9, 0.99, 0.999, 0.9999] {
        family.push(eval_closed_form("first_example_family", &b, &[r])?);
    }
    let w = quasibounded_witness(&target, &family, &cone_b)?;
    record_witness(&mut rep, "-1/2 log(1-|w|^2) = sup over r < 1 of -1/2 log(1-r|w|^2)", "r_family", &w);

    let bounded = eval_closed_form("norm_sq", &b, &[])?;
    let w = quasibounded_witness(&bounded, std::slice::from_ref(&bounded), &cone_b)?;
    rep.expect(Expectation::at_most("a bounded function witnesses itself", Tag::Trivial, w.sup_gap.abs(), 0.0));
    Ok(rep)
}

fn record_witness(rep: &mut CaseReport, anchor: &str, key: &str, w: &WitnessReport) {
    let decreasing = w.gaps.windows(2).all(|p| p[1] <= p[0]);
    rep.metric(&format!("{key}_gap"), w.sup_gap);
    rep.expect(Expectation::check(anchor, Tag::Exact, "gaps nonincreasing, last <= 1e-2", w.sup_gap, decreasing && w.sup_gap <= 1e-2));
    rep.expect(Expectation::at_most(&format!("{key} family is nondecreasing"), Tag::Derived, w.monotone_defect, 0.0));
    let mut csv = String::from("member,gap\n");
    for (k, g) in w.gaps.iter().enumerate() {
        csv.push_str(&format!("{k},{g}\n"));
    }
    rep.attach(&format!("{key}_gaps.csv"), csv);
}

pub const HESSIAN_STEP: f64 = 2.5e-4;

/// Deterministic interior sample points for the Hessian checks.
pub fn hessian_samples(case: HessianCase, count: usize) -> Vec<[f64; 4]> {
    let (lo, hi) = match case {
        HessianCase::FirstExampleU => (0.1, 0.9),
        HessianCase::SecondExamplePphi => (0.75, 0.95),
    };
    (0..count)
        .map(|k| {
            let r = lo + (hi - lo) * (k as f64 + 0.5) / count as f64;
            let a = 2.399963 * k as f64;
            let other = 0.5 * (1.0 - r * r).sqrt();
            let (p, q) = (Complex64::from_polar(r, a), Complex64::from_polar(other, 1.7 * a));
            match case {
                HessianCase::FirstExampleU => [q.re, q.im, p.re, p.im],
                HessianCase::SecondExamplePphi => [p.re, p.im, q.re, q.im],
            }
        })
        .collect()
}

fn hessian_identities(res: usize) -> Result<CaseReport> {
    let mut rep = CaseReport::new("hessian_identities", res);
    let mut csv = String::from("case,alpha,x0,x1,x2,x3,analytic,finite_difference,rel_error,positivity_factor\n");
    for (case, label) in [(HessianCase::FirstExampleU, "first"), (HessianCase::SecondExamplePphi, "second")] {
        let samples = hessian_samples(case, 20);
        let (mut worst, mut min_factor) = (0.0f64, f64::INFINITY);
        for alpha in [0.25, 0.5, 0.75] {
            for row in hessian_formula_check(case, alpha, &samples, HESSIAN_STEP)? {
                worst = worst.max(row.rel_error);
                min_factor = min_factor.min(row.positivity_factor);
                let p = row.point;
                csv.push_str(&format!(
                    "{label},{alpha},{},{},{},{},{},{},{},{}\n",
                    p[0], p[1], p[2], p[3], row.analytic, row.finite_difference, row.rel_error, row.positivity_factor
                ));
            }
        }
        rep.expect(Expectation::at_most(&format!("{label} ball example: complex Hessian formula"), Tag::Exact, worst, 1e-4));
        rep.expect(Expectation::check(&format!("{label} ball example: positivity factor > 0"), Tag::Exact, "> 0", min_factor, min_factor > 0.0));
    }
    rep.attach("hessian.csv", csv);
    Ok(rep)
}

fn oracle_triangle(res: usize) -> Result<CaseReport> {
    let mut rep = CaseReport::new("oracle_triangle", res);
    let t = toric_domain(res, DEFAULT_TRUNCATION)?;
    let cone = Cone::build(t.clone(), &StencilFamily::toric())?;
    let lp = build_cone(t.clone(), &StencilFamily::toric())?;
    for (name, params) in [("neg_log_abs_z_pow", [0.5]), ("neg_log_abs_zw_pow", [0.5]), ("norm_sq", [0.0])] {
        let params: &[f64] = if name == "norm_sq" { &[] } else { &params };
        let g = eval_closed_form(name, &t, params)?;
        let opts = EnvelopeOptions { tol: Some(1e-13), iter_max: Some(1_000_000), ..EnvelopeOptions::default() };
        let it = greatest_minorant_with(&g, &cone, &opts);
        if !it.converged {
            return Err(LabError::NoConvergence { iterations: it.iterations, delta: it.final_delta });
        }
        let hull = toric_convex_minorant(&g)?;
        // tighter than the cone tolerance, which is O(1) at this spacing
        let bound = default_fix_tolerance(&g) + 1e-8;
        let (mut a, mut b, mut c) = (0.0f64, 0.0f64, 0.0f64);
        for n in t.active_nodes() {
            let l = envelope_lp(&g, &lp, n)?;
            a = a.max((it.result.values[n] - hull.values[n]).abs());
            b = b.max((it.result.values[n] - l).abs());
            c = c.max((hull.values[n] - l).abs());
        }
        rep.expect(Expectation::at_most(&format!("{name}: iterative against toric hull"), Tag::Derived, a, bound));
        rep.expect(Expectation::at_most(&format!("{name}: iterative against LP"), Tag::Derived, b, bound));
        rep.expect(Expectation::at_most(&format!("{name}: toric hull against LP"), Tag::Derived, c, bound));
    }
    Ok(rep)
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub seed: u64,
    pub expectations: Vec<Expectation>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.expectations.iter().all(|e| e.pass)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub const SUITES: &[&str] = &["prop-basic"];

/// `S` on the default ladder times `scale`. The discrete operator is
/// positively homogeneous only when the ladder scales with the input.
fn s_limit_scaled(f: &GridFunction, scale: f64, cone: &Cone, opts: &SOptions) -> Result<GridFunction> {
    if scale <= 0.0 {
        return Ok(GridFunction::constant(f.domain.clone(), 0.0));
    }
    let ladder: Vec<f64> = DEFAULT_LAMBDAS.iter().map(|l| l * scale).collect();
    Ok(s_operator_with(f, &ladder, cone, opts)?.s_limit)
}

fn excess(a: &GridFunction, b: &GridFunction, nodes: &[usize]) -> f64 {
    nodes.iter().filter(|&&n| !is_inf(a.values[n]) && !is_inf(b.values[n])).map(|&n| a.values[n] - b.values[n]).fold(0.0f64, f64::max)
}

fn check_properties(out: &mut Vec<Expectation>, label: &str, f: &GridFunction, g: &GridFunction, cone: &Cone, opts: &SOptions) -> Result<()> {
    let d = &f.domain;
    let test = d.test_region(opts.dilation);
    let tol = TOL_PROP * (1.0 + sup_abs_on(f, &test).max(sup_abs_on(g, &test)));
    let sf = s_limit_scaled(f, 1.0, cone, opts)?;
    for alpha in [0.0, 0.5, 2.0] {
        let af = f.map(|x| alpha * x);
        let saf = s_limit_scaled(&af, alpha, cone, opts)?;
        let diff = saf.sup_abs_diff(&sf.map(|x| alpha * x), &test);
        out.push(Expectation::at_most(&format!("{label}: S(a f) = a S(f), a = {alpha}"), Tag::Exact, diff, tol));
    }
    let sum = f.zip_with(g, crate::ext::ext_add);
    let (sg, ssum) = (s_limit_scaled(g, 1.0, cone, opts)?, s_limit_scaled(&sum, 1.0, cone, opts)?);
    let both = sf.zip_with(&sg, crate::ext::ext_add);
    out.push(Expectation::at_most(&format!("{label}: S(f + g) <= S f + S g"), Tag::Exact, excess(&ssum, &both, &test), tol));
    let lo = f.zip_with(g, f64::min);
    let slo = s_limit_scaled(&lo, 1.0, cone, opts)?;
    out.push(Expectation::at_most(&format!("{label}: min(f, g) <= f implies S min(f, g) <= S f"), Tag::Exact, excess(&slo, &sf, &test), tol));
    out.push(Expectation::at_most(&format!("{label}: S min(f, g) <= min(S f, S g)"), Tag::Exact, excess(&slo, &sf.zip_with(&sg, f64::min), &test), tol));
    // record how much of f survives, so a vacuous run is visible
    out.push(Expectation::check(&format!("{label}: sup S f on the test region"), Tag::Trivial, "reported", sup_abs_on(&sf, &test), true));
    Ok(())
}

/// Properties of `S` on random bounded inputs and on the Poisson kernel, plus
/// absorption of tame summands.
pub fn property_suite(name: &str, seed: u64) -> Result<SuiteReport> {
    if !SUITES.contains(&name) {
        return Err(LabError::UnknownCase(name.to_string()));
    }
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let d = arc(DomainKind::Disc1D, 17, &MaskSpec::None)?;
    let cone = Cone::build(d.clone(), &StencilFamily::one_variable())?;
    let opts = SOptions { envelope: EnvelopeOptions::fast(&d), ..Default::default() };
    for k in 0..10 {
        let f = random_capped(&d, &mut rng, 2.0);
        let g = random_capped(&d, &mut rng, 2.0);
        check_properties(&mut out, &format!("bounded input {k}"), &f, &g, &cone, &opts)?;
        let s = s_operator_with(&f, &DEFAULT_LAMBDAS, &cone, &opts)?;
        out.push(Expectation::check(&format!("bounded input {k} is tame"), Tag::Exact, "Tame", s.tail_estimate, s.verdict == Verdict::Tame));
    }

    let pd = arc(DomainKind::Disc1D, 65, &MaskSpec::None)?;
    let pcone = Cone::build(pd.clone(), &StencilFamily::one_variable())?;
    let popts = SOptions { envelope: EnvelopeOptions::fast(&pd), ..Default::default() };
    let k = discrete_poisson_kernel(&pd, &pcone)?;
    let r = random_capped(&pd, &mut rng, 2.0);
    check_properties(&mut out, "Poisson kernel", &k, &r, &pcone, &popts)?;

    let ad = arc(DomainKind::Disc1D, 129, &MaskSpec::None)?;
    let acone = Cone::build(ad.clone(), &StencilFamily::one_variable())?;
    let ak = discrete_poisson_kernel(&ad, &acone)?;
    let aopts = SOptions { envelope: EnvelopeOptions::fast(&ad), reference: Some(far_from_pole(&ad, 2)), ..Default::default() };
    let lambdas = [1.0, 2.0, 4.0, 8.0];
    let cap = log_cap(129);
    for (label, q) in [
        ("S(f + 5) = S f", GridFunction::constant(ad.clone(), 5.0)),
        ("S(f + (-log|z|)^(1/2)) = S f", eval_closed_form("neg_log_abs_z_pow", &ad, &[0.5, cap.sqrt()])?),
    ] {
        let ab = tame_absorb_check_with(&ak, &q, &acone, &lambdas, &aopts)?;
        out.push(Expectation::at_most(label, Tag::Exact, ab.sup_gap, ab.eps_tame));
        out.push(Expectation::check(&format!("{label}: summand is tame"), Tag::Derived, "Tame", 0.0, ab.q_verdict == Verdict::Tame));
    }

    let pm = arc(DomainKind::PuncturedDisc1D, 17, &MaskSpec::Origin)?;
    let pcone_m = Cone::build(pm.clone(), &StencilFamily::one_variable())?;
    let base = random_capped(&pm, &mut rng, 2.0);
    let origin = pm.index_of(&[8, 8]);
    let bumped = GridFunction::from_fn(pm.clone(), |n| if n == origin { base.values[n] + 1.0 } else { base.values[n] });
    let mopts = SOptions { envelope: EnvelopeOptions::fast(&pm), ..Default::default() };
    let (s1, s2) = (s_operator_with(&base, &DEFAULT_LAMBDAS, &pcone_m, &mopts)?, s_operator_with(&bumped, &DEFAULT_LAMBDAS, &pcone_m, &mopts)?);
    let diff = s1.s_limit.sup_abs_diff(&s2.s_limit, &pm.test_region(2));
    out.push(Expectation::at_most("values on the singular mask do not enter S", Tag::Trivial, diff, 0.0));
    Ok(SuiteReport { suite: name.to_string(), seed, expectations: out })
}

#[derive(Debug, Clone, Serialize)]
pub struct LadderRow {
    pub resolution: usize,
    pub metrics: BTreeMap<String, f64>,
    pub runtime_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LadderReport {
    pub case: String,
    pub rows: Vec<LadderRow>,
    /// Metric columns and whether each strictly decreases down the ladder.
    pub decreasing: BTreeMap<String, bool>,
    /// Whether each column never increases; a column already at 0 passes.
    pub nonincreasing: BTreeMap<String, bool>,
    #[serde(skip)]
    pub reports: Vec<CaseReport>,
}

impl LadderReport {
    /// Metric columns only; runtimes go to `timing_csv` so this stays
    /// reproducible.
    pub fn to_csv(&self) -> String {
        let cols: Vec<&String> = self.decreasing.keys().collect();
        let mut out = String::from("resolution");
        for c in &cols {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.resolution.to_string());
            for c in &cols {
                out.push_str(&format!(",{}", r.metrics.get(*c).copied().unwrap_or(f64::NAN)));
            }
            out.push('\n');
        }
        for (label, flags) in [("strictly_decreasing", &self.decreasing), ("nonincreasing", &self.nonincreasing)] {
            out.push_str(label);
            for c in &cols {
                out.push_str(&format!(",{}", flags[*c]));
            }
            out.push('\n');
        }
        out
    }

    pub fn timing_csv(&self) -> String {
        let mut out = String::from("resolution,runtime_s\n");
        for r in &self.rows {
            out.push_str(&format!("{},{:.3}\n", r.resolution, r.runtime_s));
        }
        out
    }

    pub fn is_decreasing(&self, column: &str) -> bool {
        self.decreasing.get(column).copied().unwrap_or(false)
    }

    pub fn is_nonincreasing(&self, column: &str) -> bool {
        self.nonincreasing.get(column).copied().unwrap_or(false)
    }

    pub fn column(&self, column: &str) -> Vec<f64> {
        self.rows.iter().map(|r| r.metrics.get(column).copied().unwrap_or(f64::NAN)).collect()
    }
}

/// Metric prefixes carried into ladder columns.
pub const LADDER_COLUMNS: &[&str] = &["sup_error", "residual", "ma_mass"];

/// Runs a case at increasing resolutions and flags which error and residual
/// columns strictly decrease.
pub fn ladder(name: &str, resolutions: &[usize]) -> Result<LadderReport> {
    let case = lookup_case(name)?;
    if resolutions.len() < 3 {
        return Err(LabError::InvalidConfig("a ladder needs at least three resolutions".into()));
    }
    if resolutions.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LabError::InvalidConfig("ladder resolutions must increase".into()));
    }
    for &r in resolutions {
        check_resolution(case, r)?;
    }
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for &r in resolutions {
        let start = std::time::Instant::now();
        let rep = run_case(name, r)?;
        let runtime_s = start.elapsed().as_secs_f64();
        let metrics: BTreeMap<String, f64> =
            rep.metrics.iter().filter(|(k, _)| LADDER_COLUMNS.iter().any(|p| k.starts_with(p))).map(|(k, v)| (k.clone(), *v)).collect();
        rows.push(LadderRow { resolution: r, metrics, runtime_s });
        reports.push(rep);
    }
    let mut decreasing = BTreeMap::new();
    let mut nonincreasing = BTreeMap::new();
    for key in rows[0].metrics.keys() {
        let col: Vec<f64> = rows.iter().map(|r| r.metrics.get(key).copied().unwrap_or(f64::NAN)).collect();
        decreasing.insert(key.clone(), col.windows(2).all(|w| w[1] < w[0]));
        nonincreasing.insert(key.clone(), col.windows(2).all(|w| w[1] <= w[0]));
    }
    Ok(LadderReport { case: name.to_string(), rows, decreasing, nonincreasing, reports })
}
