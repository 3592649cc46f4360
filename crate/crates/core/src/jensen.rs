//! Finite Jensen-measure duality. The discrete cone is polyhedral, so the
//! envelope `S g(z) = sup{u(z) : u in cone, u <= g}` and the Jensen value
//! `I g(z) = inf{∫ g dμ : μ Jensen at z}` are a primal/dual LP pair. Both are
//! solved independently and compared.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cone::{Cone, Row, StencilFamily};
use crate::error::{LabError, Result};
use crate::ext::is_inf;
use crate::grid::{make_domain, DomainKind, GridDomain, GridFunction};
use crate::lp::LinearProgram;

pub const LP_NODE_CAP: usize = 600;
pub const TOL_LP: f64 = 1e-8;

/// Rows `u(anchor) <= Σ w_j u(j)` over the active nodes of a domain.
#[derive(Debug, Clone)]
pub struct ConeLP {
    pub domain: Arc<GridDomain>,
    /// Active nodes; position in this list is the LP column.
    pub nodes: Vec<usize>,
    column: Vec<Option<usize>>,
    pub inequalities: Vec<Row>,
    /// Constants satisfy every row with zero slack (row weights sum to one).
    pub includes_constants: bool,
}

impl ConeLP {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn column_of(&self, node: usize) -> Option<usize> {
        self.column.get(node).copied().flatten()
    }

    /// `average - value` for one row; negative means the row is violated.
    pub fn slack(&self, u: &[f64], row: &Row) -> f64 {
        row.entries.iter().map(|&(j, w)| w * u[j]).sum::<f64>() - u[row.anchor]
    }

    /// Largest row violation of `u` (indexed by node), zero for members.
    pub fn max_violation(&self, u: &[f64]) -> f64 {
        self.inequalities.iter().map(|r| -self.slack(u, r)).fold(0.0, f64::max)
    }
}

pub fn build_cone(domain: Arc<GridDomain>, stencil: &StencilFamily) -> Result<ConeLP> {
    build_cone_capped(domain, stencil, LP_NODE_CAP)
}

pub fn build_cone_capped(domain: Arc<GridDomain>, stencil: &StencilFamily, cap: usize) -> Result<ConeLP> {
    let nodes = domain.active_nodes();
    if nodes.len() > cap {
        return Err(LabError::LpCapExceeded { count: nodes.len(), cap });
    }
    let cone = Cone::build(domain.clone(), stencil)?;
    let mut column = vec![None; domain.len()];
    for (k, &n) in nodes.iter().enumerate() {
        column[n] = Some(k);
    }
    let inequalities = cone.rows();
    let includes_constants = inequalities.iter().all(|r| (r.entries.iter().map(|e| e.1).sum::<f64>() - 1.0).abs() < 1e-12);
    Ok(ConeLP { domain, nodes, column, inequalities, includes_constants })
}

fn check_input(g: &GridFunction, cone: &ConeLP, z: usize) -> Result<()> {
    if !Arc::ptr_eq(&g.domain, &cone.domain) && g.domain.len() != cone.domain.len() {
        return Err(LabError::DomainMismatch("data and cone live on different domains".into()));
    }
    if cone.column_of(z).is_none() {
        return Err(LabError::ParamOutOfRange(format!("node {z} is not active")));
    }
    if let Some(&n) = cone.nodes.iter().find(|&&n| is_inf(g.values[n]) || !g.values[n].is_finite()) {
        return Err(LabError::ParamOutOfRange(format!("data must be finite (node {n}); cap it first")));
    }
    Ok(())
}

/// `max u(z)` over cone members `u <= g`, with `u = g - s`, `s >= 0`.
pub fn envelope_lp(g: &GridFunction, cone: &ConeLP, z: usize) -> Result<f64> {
    check_input(g, cone, z)?;
    let n = cone.node_count();
    let mut a = Vec::with_capacity(cone.inequalities.len());
    let mut b = Vec::with_capacity(cone.inequalities.len());
    for row in &cone.inequalities {
        let mut coeffs = vec![0.0; n];
        coeffs[cone.column_of(row.anchor).expect("anchor is active")] -= 1.0;
        for &(j, w) in &row.entries {
            coeffs[cone.column_of(j).expect("row entry is active")] += w;
        }
        a.push(coeffs);
        b.push(cone.slack(&g.values, row));
    }
    let mut c = vec![0.0; n];
    c[cone.column_of(z).unwrap()] = -1.0;
    let sol = LinearProgram::new(a, b, c).solve()?;
    Ok(g.values[z] + sol.objective)
}

#[derive(Debug, Clone, Serialize)]
pub struct JensenCertificate {
    pub barycenter: usize,
    /// Nonzero weights `(node, μ_node)`.
    pub weights: Vec<(usize, f64)>,
    pub objective: f64,
    /// Nonzero row multipliers `(row index, y_r)` with `μ = δ_z + Σ y_r (avg_r - δ_anchor)`.
    pub multipliers: Vec<(usize, f64)>,
}

impl JensenCertificate {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }

    pub fn weight(&self, node: usize) -> f64 {
        self.weights.iter().find(|w| w.0 == node).map_or(0.0, |w| w.1)
    }

    /// Largest defect among: negative weights, total mass off one, and the
    /// balayage identity rebuilt from the multipliers.
    pub fn verify(&self, cone: &ConeLP) -> f64 {
        let mut mu = vec![0.0; cone.domain.len()];
        mu[self.barycenter] = 1.0;
        for &(r, y) in &self.multipliers {
            let row = &cone.inequalities[r];
            mu[row.anchor] -= y;
            for &(j, w) in &row.entries {
                mu[j] += y * w;
            }
        }
        let mut defect = self.multipliers.iter().map(|m| (-m.1).max(0.0)).fold(0.0, f64::max);
        let mut stated = vec![0.0; cone.domain.len()];
        for &(n, w) in &self.weights {
            stated[n] = w;
            defect = defect.max((-w).max(0.0));
        }
        defect = defect.max((self.weights.iter().map(|w| w.1).sum::<f64>() - 1.0).abs());
        for (a, b) in mu.iter().zip(&stated) {
            defect = defect.max((a - b).abs());
        }
        defect
    }

    /// `∫ u dμ - u(z)`; nonnegative for every cone member.
    pub fn jensen_margin(&self, u: &[f64]) -> f64 {
        self.weights.iter().map(|&(n, w)| w * u[n]).sum::<f64>() - u[self.barycenter]
    }
}

/// `min ∫ g dμ` over Jensen measures at `z`, as `g(z) - max Σ y_r (g_anchor - avg_r g)`
/// subject to `μ = δ_z - Rᵀy >= 0`, `y >= 0`.
pub fn jensen_lp(g: &GridFunction, cone: &ConeLP, z: usize) -> Result<JensenCertificate> {
    check_input(g, cone, z)?;
    let n = cone.node_count();
    let m = cone.inequalities.len();
    let mut a = vec![vec![0.0; m]; n];
    for (r, row) in cone.inequalities.iter().enumerate() {
        a[cone.column_of(row.anchor).unwrap()][r] += 1.0;
        for &(j, w) in &row.entries {
            a[cone.column_of(j).unwrap()][r] -= w;
        }
    }
    let mut b = vec![0.0; n];
    b[cone.column_of(z).unwrap()] = 1.0;
    let c: Vec<f64> = cone.inequalities.iter().map(|row| -cone.slack(&g.values, row)).collect();
    let sol = LinearProgram::new(a, b, c).solve()?;
    let mut mu = vec![0.0; cone.domain.len()];
    mu[z] = 1.0;
    let mut multipliers = Vec::new();
    for (r, &y) in sol.x.iter().enumerate() {
        if y > 0.0 {
            multipliers.push((r, y));
            let row = &cone.inequalities[r];
            mu[row.anchor] -= y;
            for &(j, w) in &row.entries {
                mu[j] += y * w;
            }
        }
    }
    let weights: Vec<(usize, f64)> =
        cone.nodes.iter().filter(|&&k| mu[k].abs() > 1e-15).map(|&k| (k, mu[k].max(0.0))).collect();
    Ok(JensenCertificate { barycenter: z, weights, objective: g.values[z] - sol.objective, multipliers })
}

pub fn duality_gap(g: &GridFunction, cone: &ConeLP, z: usize) -> Result<f64> {
    let s = envelope_lp(g, cone, z)?;
    let i = jensen_lp(g, cone, z)?.objective;
    Ok((s - i).abs())
}

#[derive(Debug, Clone, Serialize)]
pub struct DualityRow {
    pub case: String,
    pub z: usize,
    pub s_value: f64,
    pub i_value: f64,
    pub gap: f64,
}

pub fn duality_csv(rows: &[DualityRow]) -> String {
    let mut out = String::from("case,z,S_value,I_value,gap\n");
    for r in rows {
        out.push_str(&format!("{},{},{:.15e},{:.15e},{:.3e}\n", r.case, r.z, r.s_value, r.i_value, r.gap));
    }
    out
}

/// Random data on active nodes: uniform on `[-1, 1]` with occasional spikes
/// capped at `cap`.
pub fn random_capped(domain: &Arc<GridDomain>, rng: &mut ChaCha8Rng, cap: f64) -> GridFunction {
    GridFunction::from_fn(domain.clone(), |n| {
        if !domain.is_active(n) {
            return 0.0;
        }
        let base: f64 = rng.gen_range(-1.0..1.0);
        if rng.gen_bool(0.1) {
            cap
        } else {
            base
        }
    })
}

/// `count` seeded random capped inputs on Disc1D at `resolution`, centre node.
pub fn duality_sweep(resolution: usize, count: usize, seed: u64) -> Result<Vec<DualityRow>> {
    duality_sweep_on(DomainKind::Disc1D, resolution, count, seed)
}

/// As `duality_sweep` on any domain kind, with its default stencil; the
/// barycentre is the centre lattice node.
pub fn duality_sweep_on(kind: DomainKind, resolution: usize, count: usize, seed: u64) -> Result<Vec<DualityRow>> {
    let dom = Arc::new(make_domain(kind, resolution, None)?);
    let cone = build_cone(dom.clone(), &StencilFamily::default_for(kind))?;
    let z = dom.index_of(&vec![resolution / 2; dom.dim]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|k| {
            let g = random_capped(&dom, &mut rng, 5.0);
            let s_value = envelope_lp(&g, &cone, z)?;
            let i_value = jensen_lp(&g, &cone, z)?.objective;
            Ok(DualityRow { case: format!("random_{k:02}"), z, s_value, i_value, gap: (s_value - i_value).abs() })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envelope::{greatest_minorant_with, EnvelopeOptions};
    use crate::formulas::eval_closed_form;
    use crate::grid::{make_domain_with, MaskSpec, NodeClass};

    fn disc(res: usize) -> Arc<GridDomain> {
        Arc::new(make_domain(DomainKind::Disc1D, res, None).unwrap())
    }

    #[test]
    fn row_count_and_constants() {
        let d = disc(9);
        let cone = build_cone(d.clone(), &StencilFamily::one_variable()).unwrap();
        // one direction, one radius
        assert_eq!(cone.inequalities.len(), d.interior_nodes().len());
        assert!(cone.includes_constants);
        for c in [1.0, -1.0] {
            let u = vec![c; d.len()];
            for r in &cone.inequalities {
                assert!(cone.slack(&u, r).abs() < 1e-14);
            }
        }
        let q = eval_closed_form("neg_norm_sq", &d, &[]).unwrap();
        assert!(cone.max_violation(&q.values) > 0.0);
    }

    #[test]
    fn cap_is_enforced() {
        let d = Arc::new(make_domain(DomainKind::Disc1D, 33, None).unwrap());
        assert!(matches!(build_cone(d, &StencilFamily::one_variable()), Err(LabError::LpCapExceeded { .. })));
    }

    #[test]
    fn constant_data() {
        let d = disc(7);
        let cone = build_cone(d.clone(), &StencilFamily::one_variable()).unwrap();
        let z = d.index_of(&[3, 3]);
        let g = GridFunction::constant(d.clone(), 2.5);
        assert!((envelope_lp(&g, &cone, z).unwrap() - 2.5).abs() < 1e-12);
        let cert = jensen_lp(&g, &cone, z).unwrap();
        assert!((cert.objective - 2.5).abs() < 1e-12);
        assert!(cert.verify(&cone) < 1e-12);
        assert!(duality_gap(&g, &cone, z).unwrap() < 1e-12);
    }

    /// Maximum of `u(z)` over all vertices of `{cone rows, u <= g}`, by
    /// solving every square subsystem of tight constraints.
    fn brute_force(g: &GridFunction, cone: &ConeLP, z: usize) -> f64 {
        let n = cone.node_count();
        let mut cons: Vec<(Vec<f64>, f64)> = Vec::new();
        for row in &cone.inequalities {
            let mut a = vec![0.0; n];
            a[cone.column_of(row.anchor).unwrap()] += 1.0;
            for &(j, w) in &row.entries {
                a[cone.column_of(j).unwrap()] -= w;
            }
            cons.push((a, 0.0));
        }
        for (k, &node) in cone.nodes.iter().enumerate() {
            let mut a = vec![0.0; n];
            a[k] = 1.0;
            cons.push((a, g.values[node]));
        }
        let total = cons.len();
        let mut best = f64::NEG_INFINITY;
        // choose which constraints stay slack (total - n of them)
        let mut pick: Vec<usize> = (0..n).collect();
        loop {
            let mut m: Vec<Vec<f64>> = pick.iter().map(|&i| {
                let mut r = cons[i].0.clone();
                r.push(cons[i].1);
                r
            }).collect();
            if let Some(u) = gauss(&mut m) {
                if cons.iter().all(|(a, b)| a.iter().zip(&u).map(|(x, y)| x * y).sum::<f64>() <= b + 1e-9) {
                    best = best.max(u[cone.column_of(z).unwrap()]);
                }
            }
            // next combination
            let mut i = n;
            loop {
                if i == 0 {
                    return best;
                }
                i -= 1;
                if pick[i] < total - n + i {
                    pick[i] += 1;
                    for j in i + 1..n {
                        pick[j] = pick[j - 1] + 1;
                    }
                    break;
                }
            }
        }
    }

    fn gauss(m: &mut [Vec<f64>]) -> Option<Vec<f64>> {
        let n = m.len();
        for c in 0..n {
            let p = (c..n).max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs()))?;
            if m[p][c].abs() < 1e-12 {
                return None;
            }
            m.swap(c, p);
            for r in 0..n {
                if r != c {
                    let f = m[r][c] / m[c][c];
                    for k in c..=n {
                        m[r][k] -= f * m[c][k];
                    }
                }
            }
        }
        Some((0..n).map(|r| m[r][n] / m[r][r]).collect())
    }

    #[test]
    fn single_spike_is_averaged_down() {
        let d = disc(5);
        let cone = build_cone(d.clone(), &StencilFamily::one_variable()).unwrap();
        let z = d.index_of(&[2, 2]);
        assert_eq!(d.class_of(z), NodeClass::Interior);
        let g = GridFunction::from_fn(d.clone(), |n| if n == z { 1.0 } else { 0.0 });
        let lp = envelope_lp(&g, &cone, z).unwrap();
        let bf = brute_force(&g, &cone, z);
        assert!(lp < 1.0);
        assert!((lp - bf).abs() < 1e-10, "{lp} vs {bf}");
    }

    #[test]
    fn brute_force_agrees_on_random_data() {
        let d = disc(5);
        let cone = build_cone(d.clone(), &StencilFamily::one_variable()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let g = random_capped(&d, &mut rng, 3.0);
            for &z in &cone.nodes {
                let lp = envelope_lp(&g, &cone, z).unwrap();
                assert!((lp - brute_force(&g, &cone, z)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn harmonic_measure_matches_random_walks() {
        // g = indicator of the boundary arc Re z > 0.5, capped at 1 inside,
        // so the envelope is the Perron solution of the indicator
        let d = disc(9);
        let cone = build_cone(d.clone(), &StencilFamily::one_variable()).unwrap();
        let z = d.index_of(&[4, 4]);
        let anchor_rows: std::collections::HashMap<usize, &Row> = cone.inequalities.iter().map(|r| (r.anchor, r)).collect();
        let on_arc = |n: usize| d.coords(n)[0] > 0.5;
        let g = GridFunction::from_fn(d.clone(), |n| if anchor_rows.contains_key(&n) || on_arc(n) { 1.0 } else { 0.0 });
        let cert = jensen_lp(&g, &cone, z).unwrap();
        assert!(cert.verify(&cone) < 1e-10);
        // walk with the row weights as transition probabilities
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let walks = 200_000;
        let mut hits = 0usize;
        for _ in 0..walks {
            let mut n = z;
            while let Some(row) = anchor_rows.get(&n) {
                let mut u: f64 = rng.gen();
                let mut next = row.entries[row.entries.len() - 1].0;
                for &(j, w) in &row.entries {
                    if u < w {
                        next = j;
                        break;
                    }
                    u -= w;
                }
                n = next;
            }
            if on_arc(n) {
                hits += 1;
            }
        }
        let p = hits as f64 / walks as f64;
        let sigma = (p * (1.0 - p) / walks as f64).sqrt();
        assert!((cert.objective - p).abs() < 4.0 * sigma, "{} vs {p} ± {sigma}", cert.objective);
        assert!(duality_gap(&g, &cone, z).unwrap() < TOL_LP);
    }

    #[test]
    fn sweep_has_no_gap() {
        let rows = duality_sweep(7, 20, 2024).unwrap();
        assert_eq!(rows.len(), 20);
        for r in &rows {
            assert!(r.gap <= TOL_LP, "{:?}", r);
            assert!(r.s_value <= r.i_value + TOL_LP);
        }
        assert_eq!(duality_csv(&rows), duality_csv(&duality_sweep(7, 20, 2024).unwrap()));
    }

    #[test]
    fn lp_matches_the_iterative_minorant() {
        let d = disc(9);
        let st = StencilFamily::one_variable();
        let cone = build_cone(d.clone(), &st).unwrap();
        let iter_cone = Cone::build(d.clone(), &st).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = random_capped(&d, &mut rng, 2.0);
        let opts = EnvelopeOptions { tol: Some(1e-13), ..EnvelopeOptions::fast(&d) };
        let it = greatest_minorant_with(&g, &iter_cone, &opts);
        assert!(it.converged);
        for &z in &cone.nodes {
            let lp = envelope_lp(&g, &cone, z).unwrap();
            assert!((lp - it.result.values[z]).abs() < 1e-9, "node {z}: {lp} vs {}", it.result.values[z]);
        }
    }

    #[test]
    fn toric_slice_matches_the_hull_envelope() {
        let d = Arc::new(make_domain_with(DomainKind::ToricLog2D, 5, &MaskSpec::None, 8.0).unwrap());
        let st = StencilFamily::toric();
        let cone = build_cone(d.clone(), &st).unwrap();
        let g = eval_closed_form("neg_log_abs_z_pow", &d, &[0.5]).unwrap();
        let hull = greatest_minorant_with(&g, &Cone::build(d.clone(), &st).unwrap(), &EnvelopeOptions::fast(&d));
        for &z in &cone.nodes {
            let lp = envelope_lp(&g, &cone, z).unwrap();
            assert!((lp - hull.result.values[z]).abs() < 1e-8, "node {z}: {lp} vs {}", hull.result.values[z]);
        }
    }

    #[test]
    fn monotone_in_the_data() {
        let d = disc(7);
        let cone = build_cone(d.clone(), &StencilFamily::one_variable()).unwrap();
        let z = d.index_of(&[3, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let g = random_capped(&d, &mut rng, 4.0);
            let bump = random_capped(&d, &mut rng, 1.0).map(|v| v.abs());
            let h = g.zip_with(&bump, |a, b| a + b);
            assert!(envelope_lp(&g, &cone, z).unwrap() <= envelope_lp(&h, &cone, z).unwrap() + TOL_LP);
        }
    }
}
