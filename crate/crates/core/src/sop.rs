//! The reduction operator: `R_λ f` (least plurisuperharmonic majorant of
//! `(f - λ)^+`), `S_λ f = (R_λ f)_*`, the limit `S f`, tame/singular verdicts,
//! and the piecewise-linear gauges `φ(t) = Σ (t - n_k)^+`.

use serde::Serialize;

use crate::cone::{Cone, StencilFamily};
use crate::envelope::{least_psuper_majorant_with, EnvelopeOptions};
use crate::error::{LabError, Result};
use crate::ext::{is_inf, positive_part_shift, V_MAX};
use crate::grid::{regularize, GridFunction, RegularizeMode};

pub const DEFAULT_LAMBDAS: [f64; 6] = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Tame,
    Singular,
    Mixed,
    Inconclusive,
}

#[derive(Debug, Clone)]
pub struct SOptions {
    pub envelope: EnvelopeOptions,
    /// Lattice dilation of the singular mask removed from the test region.
    pub dilation: usize,
    /// Nodes for the tail statistics; defaults to the test region.
    pub reference: Option<Vec<usize>>,
    pub tol_mono: Option<f64>,
}

impl Default for SOptions {
    fn default() -> Self {
        SOptions { envelope: EnvelopeOptions::default(), dilation: 2, reference: None, tol_mono: None }
    }
}

#[derive(Debug, Clone)]
pub struct SReport {
    pub lambdas: Vec<f64>,
    pub s_lambda_values: Vec<GridFunction>,
    pub s_limit: GridFunction,
    /// Sup over the reference nodes of each `S_λ`.
    pub tail_sequence: Vec<f64>,
    /// Last-rung tail, extrapolated in `1/λ` from the last two rungs.
    pub tail_estimate: f64,
    /// Sup over the reference nodes of `|S_λmax - f_*|`.
    pub singular_gap: f64,
    pub eps_tame: f64,
    pub monotone_defect: f64,
    pub verdict: Verdict,
    pub test_region: Vec<usize>,
    pub reference: Vec<usize>,
}

#[derive(Serialize)]
struct SSummary<'a> {
    lambdas: &'a [f64],
    tail_sequence: &'a [f64],
    tail_estimate: f64,
    singular_gap: f64,
    eps_tame: f64,
    monotone_defect: f64,
    verdict: Verdict,
    test_region_size: usize,
}

impl SReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&SSummary {
            lambdas: &self.lambdas,
            tail_sequence: &self.tail_sequence,
            tail_estimate: self.tail_estimate,
            singular_gap: self.singular_gap,
            eps_tame: self.eps_tame,
            monotone_defect: self.monotone_defect,
            verdict: self.verdict,
            test_region_size: self.test_region.len(),
        })
        .expect("summary serializes")
    }

    /// `λ, sup S_λ` rows.
    pub fn ladder_csv(&self) -> String {
        let mut out = String::from("lambda,sup_s_lambda\n");
        for (l, s) in self.lambdas.iter().zip(&self.tail_sequence) {
            out.push_str(&format!("{l},{s}\n"));
        }
        out
    }
}

/// Operational membership in the majorizable class: the majorant of the
/// half-saturated function must settle below the saturation level.
pub fn check_majorizable(f: &GridFunction, cone: &Cone, opts: &EnvelopeOptions) -> Result<()> {
    let capped = f.map(|v| if is_inf(v) { v } else { v.min(V_MAX / 2.0) });
    let rep = least_psuper_majorant_with(&capped, cone, opts);
    let test = f.domain.test_region(0);
    let blown = test.iter().any(|&n| rep.result.values[n] >= V_MAX / 2.0 && f.values[n] < V_MAX / 2.0);
    if !rep.converged || blown {
        return Err(LabError::NotMajorizable);
    }
    Ok(())
}

pub fn reduced(f: &GridFunction, lambda: f64, stencil: &StencilFamily) -> Result<GridFunction> {
    let cone = Cone::build(f.domain.clone(), stencil)?;
    reduced_with(f, lambda, &cone, &EnvelopeOptions::default())
}

/// `R_λ f`: least plurisuperharmonic majorant of `(f - λ)^+`.
pub fn reduced_with(f: &GridFunction, lambda: f64, cone: &Cone, opts: &EnvelopeOptions) -> Result<GridFunction> {
    let shifted = f.map(|v| positive_part_shift(v, lambda)).with_nonnegative();
    let rep = least_psuper_majorant_with(&shifted, cone, opts);
    if !rep.converged {
        return Err(LabError::NotMajorizable);
    }
    // the majorant of a nonnegative function is nonnegative up to solver noise
    Ok(rep.result.map(|v| v.max(0.0)).with_nonnegative())
}

pub fn s_lambda(f: &GridFunction, lambda: f64, stencil: &StencilFamily) -> Result<GridFunction> {
    let cone = Cone::build(f.domain.clone(), stencil)?;
    s_lambda_with(f, lambda, &cone, &EnvelopeOptions::default())
}

pub fn s_lambda_with(f: &GridFunction, lambda: f64, cone: &Cone, opts: &EnvelopeOptions) -> Result<GridFunction> {
    Ok(regularize(&reduced_with(f, lambda, cone, opts)?, RegularizeMode::Lsc))
}

pub fn s_operator(f: &GridFunction, lambdas: &[f64], stencil: &StencilFamily) -> Result<SReport> {
    let cone = Cone::build(f.domain.clone(), stencil)?;
    s_operator_with(f, lambdas, &cone, &SOptions::default())
}

fn sup_on(f: &GridFunction, nodes: &[usize]) -> f64 {
    nodes.iter().map(|&n| f.values[n]).fold(0.0f64, f64::max)
}

pub fn s_operator_with(f: &GridFunction, lambdas: &[f64], cone: &Cone, opts: &SOptions) -> Result<SReport> {
    if lambdas.len() < 3 || lambdas.windows(2).any(|w| w[1] <= w[0]) || lambdas[0] < 0.0 {
        return Err(LabError::NotIncreasing);
    }
    if lambdas[lambdas.len() - 1] > V_MAX / 4.0 {
        return Err(LabError::ParamOutOfRange("largest lambda exceeds V_MAX/4".into()));
    }
    let dom = &f.domain;
    let test_region = dom.test_region(opts.dilation);
    let reference = opts.reference.clone().unwrap_or_else(|| test_region.clone());
    let sup_f = sup_on(f, &test_region);
    let eps_tame = 1e-3 * (1.0 + sup_f);
    let tol_mono = opts.tol_mono.unwrap_or(eps_tame);
    let mut values: Vec<GridFunction> = Vec::with_capacity(lambdas.len());
    let mut monotone_defect = 0.0f64;
    for &lam in lambdas {
        let s = s_lambda_with(f, lam, cone, &opts.envelope)?;
        if let Some(prev) = values.last() {
            for &n in &test_region {
                let (a, b) = (prev.values[n], s.values[n]);
                if !is_inf(b) {
                    monotone_defect = monotone_defect.max(b - a);
                }
            }
        }
        values.push(s);
    }
    if monotone_defect > 100.0 * tol_mono {
        return Err(LabError::MonotonicityViolation(monotone_defect));
    }
    let tail_sequence: Vec<f64> = values.iter().map(|s| sup_on(s, &reference)).collect();
    let m = lambdas.len();
    let (l1, l2) = (lambdas[m - 2], lambdas[m - 1]);
    let (s1, s2) = (tail_sequence[m - 2], tail_sequence[m - 1]);
    // S_λ ≈ A + B/λ  =>  A = (λ2 s2 - λ1 s1) / (λ2 - λ1)
    let extrapolated = ((l2 * s2 - l1 * s1) / (l2 - l1)).max(0.0);
    let tail_estimate = if s2 == 0.0 { 0.0 } else { extrapolated.min(s2) };
    let last = &values[m - 1];
    // S_λ carries an LSC step, so a singular f is reproduced as f_*
    let f_low = regularize(f, RegularizeMode::Lsc);
    let singular_gap = reference
        .iter()
        .filter(|&&n| !is_inf(f_low.values[n]))
        .map(|&n| (last.values[n] - f_low.values[n]).abs())
        .fold(0.0f64, f64::max);
    let verdict = if monotone_defect > tol_mono {
        Verdict::Inconclusive
    } else if tail_estimate <= eps_tame {
        Verdict::Tame
    } else if singular_gap <= eps_tame {
        Verdict::Singular
    } else {
        Verdict::Mixed
    };
    let inf = GridFunction::new(
        dom.clone(),
        (0..dom.len()).map(|n| values.iter().map(|s| s.values[n]).fold(f64::INFINITY, f64::min)).collect(),
    );
    let s_limit = regularize(&inf, RegularizeMode::Lsc).with_nonnegative();
    Ok(SReport {
        lambdas: lambdas.to_vec(),
        s_lambda_values: values,
        s_limit,
        tail_sequence,
        tail_estimate,
        singular_gap,
        eps_tame,
        monotone_defect,
        verdict,
        test_region,
        reference,
    })
}

#[derive(Debug, Clone)]
pub struct AbsorbReport {
    pub lhs: GridFunction,
    pub rhs: GridFunction,
    pub sup_gap: f64,
    pub eps_tame: f64,
    pub q_verdict: Verdict,
}

/// `S(f + q)` against `S f` for a tame `q`, compared on the reference nodes.
pub fn tame_absorb_check(f: &GridFunction, q: &GridFunction, stencil: &StencilFamily, lambdas: &[f64]) -> Result<AbsorbReport> {
    let cone = Cone::build(f.domain.clone(), stencil)?;
    tame_absorb_check_with(f, q, &cone, lambdas, &SOptions::default())
}

pub fn tame_absorb_check_with(f: &GridFunction, q: &GridFunction, cone: &Cone, lambdas: &[f64], opts: &SOptions) -> Result<AbsorbReport> {
    let qrep = s_operator_with(q, lambdas, cone, opts)?;
    let sum = f.zip_with(q, crate::ext::ext_add);
    let lhs = s_operator_with(&sum, lambdas, cone, opts)?;
    let rhs = s_operator_with(f, lambdas, cone, opts)?;
    let sup_gap = rhs
        .reference
        .iter()
        .map(|&n| (lhs.s_limit.values[n], rhs.s_limit.values[n]))
        .filter(|(a, b)| !(is_inf(*a) && is_inf(*b)))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    Ok(AbsorbReport { lhs: lhs.s_limit, rhs: rhs.s_limit, sup_gap, eps_tame: rhs.eps_tame, q_verdict: qrep.verdict })
}

/// Finite truncation of `φ(t) = Σ_k (t - n_k)^+`. The omitted terms vanish for
/// `t` below the next (unlisted) breakpoint, so the evaluator is exact on
/// `[0, n_m]` and its slope past `n_m` is a lower bound `m`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Gauge {
    pub breakpoints: Vec<f64>,
}

pub fn gauge_from_sequence(n: &[f64]) -> Result<Gauge> {
    if n.is_empty() || n[0] <= 0.0 || n.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LabError::NotIncreasing);
    }
    Ok(Gauge { breakpoints: n.to_vec() })
}

impl Gauge {
    pub fn eval(&self, t: f64) -> f64 {
        if is_inf(t) {
            return t;
        }
        self.breakpoints.iter().map(|&n| (t - n).max(0.0)).sum()
    }

    /// Right derivative.
    pub fn slope(&self, t: f64) -> f64 {
        self.breakpoints.iter().filter(|&&n| n <= t).count() as f64
    }
}

#[derive(Debug, Clone)]
pub struct GaugeTest {
    pub majorant_found: bool,
    pub witness: Option<GridFunction>,
    pub sup_majorant: f64,
    /// Verdict for `u^+` when a majorant was found.
    pub cross_check: Option<Verdict>,
}

/// Looks for a plurisuperharmonic majorant of `ψ∘u`; divergence (values past
/// `V_MAX/2` on the test region) is a negative answer, not an error.
pub fn gauge_tameness_test(u: &GridFunction, psi: impl Fn(f64) -> f64, stencil: &StencilFamily) -> Result<GaugeTest> {
    let cone = Cone::build(u.domain.clone(), stencil)?;
    let opts = SOptions::default();
    let composed = u.map(|v| if is_inf(v) { v } else { psi(v) });
    let rep = least_psuper_majorant_with(&composed, &cone, &opts.envelope);
    let test = u.domain.test_region(opts.dilation);
    let sup_majorant = test.iter().map(|&n| rep.result.values[n]).fold(f64::NEG_INFINITY, f64::max);
    let majorant_found = rep.converged && sup_majorant <= V_MAX / 2.0;
    let cross_check = if majorant_found {
        let plus = u.map(|v| v.max(0.0));
        Some(s_operator_with(&plus, &DEFAULT_LAMBDAS, &cone, &opts)?.verdict)
    } else {
        None
    };
    Ok(GaugeTest { majorant_found, witness: majorant_found.then_some(rep.result), sup_majorant, cross_check })
}

/// `u_n = u - S_n u` for each `n` in the ladder.
pub fn bounded_approximants(u: &GridFunction, ns: &[f64], cone: &Cone, opts: &EnvelopeOptions) -> Result<Vec<GridFunction>> {
    ns.iter()
        .map(|&n| {
            let s = s_lambda_with(u, n, cone, opts)?;
            Ok(u.zip_with(&s, |a, b| if is_inf(a) { a } else { a - b }))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formulas::eval_closed_form;
    use crate::grid::{make_domain, DomainKind, GridDomain, MaskSpec};
    use std::sync::Arc;

    fn dom(kind: DomainKind, res: usize) -> Arc<GridDomain> {
        Arc::new(make_domain(kind, res, None).unwrap())
    }

    #[test]
    fn reduced_of_constants() {
        let d = dom(DomainKind::Disc1D, 17);
        let st = StencilFamily::one_variable();
        let three = GridFunction::constant(d.clone(), 3.0);
        let r = reduced(&three, 5.0, &st).unwrap();
        assert!(d.active_nodes().iter().all(|&n| r.values[n] == 0.0));
        let r = reduced(&three, 0.0, &st).unwrap();
        assert!(r.sup_abs_diff(&three, &d.active_nodes()) < 1e-8);
    }

    #[test]
    fn poisson_reduction_is_a_strict_majorant() {
        let mask = MaskSpec::Points { points: vec![vec![1.0, 0.0]] };
        let d = Arc::new(make_domain(DomainKind::Disc1D, 33, Some(&mask)).unwrap());
        let f = eval_closed_form("poisson_kernel", &d, &[]).unwrap();
        let r = reduced(&f, 2.0, &StencilFamily::one_variable()).unwrap();
        let shifted = f.map(|v| positive_part_shift(v, 2.0));
        let test = d.test_region(2);
        assert!(test.iter().all(|&n| r.values[n] >= shifted.values[n] - 1e-8));
        // strict on the whole region where (f - 2)^+ vanishes near the centre
        let centre = d.index_of(&[16, 16]);
        assert_eq!(shifted.values[centre], 0.0);
        let strict = test.iter().filter(|&&n| r.values[n] > shifted.values[n] + 1e-2).count();
        assert!(r.values[centre] > 0.1 && strict > test.len() / 2, "{} {strict}", r.values[centre]);
    }

    #[test]
    fn s_lambda_trivial_cases() {
        let d = dom(DomainKind::Disc1D, 17);
        let st = StencilFamily::one_variable();
        let f = eval_closed_form("re_z", &d, &[]).unwrap();
        let s = s_lambda(&f, 1.0, &st).unwrap();
        assert!(d.active_nodes().iter().all(|&n| s.values[n] == 0.0));
        let spike = GridFunction::from_fn(d.clone(), |n| if n == d.index_of(&[8, 8]) { f64::INFINITY } else { 0.0 });
        let s = s_lambda(&spike, 3.0, &st).unwrap();
        assert!(d.active_nodes().iter().all(|&n| s.values[n] == 0.0));
    }

    #[test]
    fn log_pole_reduction_follows_the_radial_concave_hull() {
        // radial superharmonic functions are concave in t = -log|z|; the least
        // concave majorant of (t - 1)^+ on [0, T] is t (T - 1) / T
        let mut prev = (f64::INFINITY, f64::INFINITY);
        for res in [33, 65, 129] {
            let d = dom(DomainKind::PuncturedDisc1D, res);
            let f = eval_closed_form("neg_log_abs_z", &d, &[]).unwrap();
            let st = StencilFamily::one_variable();
            let r = reduced(&f, 1.0, &st).unwrap();
            let s = s_lambda(&f, 1.0, &st).unwrap();
            let t_max = d.test_region(0).iter().map(|&n| f.values[n]).fold(0.0, f64::max);
            let annulus: Vec<usize> = d.test_region(2).into_iter().filter(|&n| f.values[n] <= 4f64.ln()).collect();
            let err = |g: &GridFunction| annulus.iter().map(|&n| {
                let t = f.values[n];
                (g.values[n] - t * (t_max - 1.0) / t_max).abs()
            }).fold(0.0f64, f64::max);
            let e = (err(&r), err(&s));
            assert!(e.0 < prev.0 && e.1 < prev.1, "res {res}: {e:?} after {prev:?}");
            prev = e;
        }
        // (f - 1)^+ itself is subharmonic, so it is not the answer
        assert!(prev.0 < 0.03 && prev.1 < 0.08, "{prev:?}");
    }

    fn toric(l: f64) -> Arc<GridDomain> {
        Arc::new(crate::grid::make_domain_with(DomainKind::ToricLog2D, 129, &MaskSpec::None, l).unwrap())
    }

    fn toric_verdict(name: &str, params: &[f64]) -> SReport {
        let d = toric(64.0);
        let cone = Cone::build(d.clone(), &StencilFamily::toric()).unwrap();
        let f = eval_closed_form(name, &d, params).unwrap();
        let opts = SOptions { envelope: EnvelopeOptions::fast(&d), ..Default::default() };
        s_operator_with(&f, &DEFAULT_LAMBDAS, &cone, &opts).unwrap()
    }

    #[test]
    fn bounded_input_is_tame() {
        let rep = toric_verdict("constant", &[7.0]);
        assert_eq!(rep.verdict, Verdict::Tame);
        assert_eq!(rep.tail_estimate, 0.0);
        let d = dom(DomainKind::Disc1D, 17);
        let rep = s_operator(&GridFunction::constant(d, 7.0), &DEFAULT_LAMBDAS, &StencilFamily::one_variable()).unwrap();
        assert_eq!(rep.verdict, Verdict::Tame);
        assert_eq!(rep.tail_sequence.last(), Some(&0.0));
    }

    #[test]
    fn log_powers_on_the_toric_domain() {
        let half = toric_verdict("neg_log_abs_z_pow", &[0.5]);
        assert_eq!(half.verdict, Verdict::Tame, "{}", half.to_json());
        let one = toric_verdict("neg_log_abs_z", &[]);
        assert_ne!(one.verdict, Verdict::Tame);
        assert_eq!(one.verdict, Verdict::Mixed, "{}", one.to_json());
        assert!(one.tail_estimate > one.eps_tame && one.singular_gap > one.eps_tame);
    }

    #[test]
    fn ladder_must_increase() {
        let d = dom(DomainKind::Disc1D, 9);
        let f = GridFunction::constant(d, 1.0);
        let st = StencilFamily::one_variable();
        assert!(matches!(s_operator(&f, &[1.0, 2.0], &st), Err(LabError::NotIncreasing)));
        assert!(matches!(s_operator(&f, &[1.0, 3.0, 2.0], &st), Err(LabError::NotIncreasing)));
        assert!(matches!(s_operator(&f, &[1.0, 2.0, 1e6], &st), Err(LabError::ParamOutOfRange(_))));
    }

    #[test]
    fn gauge_evaluation() {
        let g = gauge_from_sequence(&[1.0, 2.0]).unwrap();
        assert_eq!(g.eval(2.5), 2.0);
        assert_eq!(g.eval(0.7), 0.0);
        let g = gauge_from_sequence(&[1.0, 2.0, 4.0, 8.0]).unwrap();
        let slopes: Vec<f64> = [1.5, 3.0, 6.0, 9.0].iter().map(|&t| g.slope(t)).collect();
        assert_eq!(slopes, vec![1.0, 2.0, 3.0, 4.0]);
        assert!(gauge_from_sequence(&[2.0, 1.0]).is_err());
        assert!(gauge_from_sequence(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn gauge_test_on_bounded_and_one_variable_inputs() {
        let d = dom(DomainKind::Disc1D, 17);
        let u = eval_closed_form("re_z", &d, &[]).unwrap();
        let g = gauge_tameness_test(&u, |t| t * t, &StencilFamily::one_variable()).unwrap();
        assert!(g.majorant_found);
        assert_eq!(g.cross_check, Some(Verdict::Tame));
        let p = dom(DomainKind::PuncturedDisc1D, 33);
        let u = eval_closed_form("neg_log_abs_z", &p, &[]).unwrap();
        let g = gauge_tameness_test(&u, |t| t * t, &StencilFamily::one_variable()).unwrap();
        assert!(g.majorant_found);
        let w = g.witness.unwrap();
        // the pole keeps its token so it stays negligible in the rows
        let neg = w.map(|v| if is_inf(v) { v } else { -v });
        let rep = crate::psh::psh_check(&neg, &StencilFamily::one_variable(), crate::cone::default_tolerance(&p)).unwrap();
        assert!(rep.is_member, "{} {:?}", rep.to_json(), rep.violating_node.map(|n| (p.coords(n), w.values[n])));
    }
}
