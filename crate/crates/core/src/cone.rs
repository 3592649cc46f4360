//! Stencil families and the discrete plurisubharmonic cone they define.
//!
//! Every cone constraint ("row") reads `u(anchor) <= sum_k w_k u(node_k)` with
//! nonnegative weights summing to one. On lattice kinds a row is a circle
//! average along a complex direction, stored once as a translation-invariant
//! template. On the toric domain rows encode midpoint convexity along lattice
//! directions (with unequal arms at the arc) and monotonicity toward the arc.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::grid::{DomainKind, GridDomain, NodeClass};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StencilFamily {
    /// Gaussian-integer generators of the complex directions (second entry is
    /// ignored for one-variable kinds). The unit direction is `a / |a|`.
    pub directions: Vec<[(i32, i32); 2]>,
    pub circle_points: usize,
    /// Radii as multiples of `|a| * h`.
    pub radius_steps: Vec<usize>,
    /// Lattice directions for the toric convexity rows.
    pub toric_directions: Vec<(i8, i8)>,
}

impl StencilFamily {
    pub fn one_variable() -> Self {
        StencilFamily {
            directions: vec![[(1, 0), (0, 0)]],
            circle_points: 8,
            radius_steps: vec![1],
            toric_directions: Vec::new(),
        }
    }

    /// Axis directions plus eight mixed lines `(1, b)` with `b` a unit or
    /// diagonal Gaussian integer; four circle points keep every sample on the lattice.
    pub fn two_variable() -> Self {
        let mut directions = vec![[(1, 0), (0, 0)], [(0, 0), (1, 0)]];
        for b in [(1, 0), (0, 1), (-1, 0), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)] {
            directions.push([(1, 0), b]);
        }
        StencilFamily { directions, circle_points: 4, radius_steps: vec![1], toric_directions: Vec::new() }
    }

    /// Wider family: lines `(p, q)` with `p` in {1, 2} and `q` a Gaussian
    /// integer in the box `|Re q|, |Im q| <= 2`, plus the `w` axis. Resolves
    /// complex slopes to steps of one half. Wide rows are dropped near the boundary.
    pub fn two_variable_wide() -> Self {
        let mut directions = vec![[(0, 0), (1, 0)]];
        for p in 1..=2i32 {
            for qr in -2..=2i32 {
                for qi in -2..=2i32 {
                    if gcd(gcd(p, qr.abs()), qi.abs()) == 1 {
                        directions.push([(p, 0), (qr, qi)]);
                    }
                }
            }
        }
        StencilFamily { directions, circle_points: 4, radius_steps: vec![1], toric_directions: Vec::new() }
    }

    pub fn toric() -> Self {
        StencilFamily {
            directions: Vec::new(),
            circle_points: 0,
            radius_steps: Vec::new(),
            toric_directions: crate::grid::TORIC_ARC_DIRECTIONS.to_vec(),
        }
    }

    pub fn default_for(kind: DomainKind) -> Self {
        match kind {
            DomainKind::Disc1D | DomainKind::PuncturedDisc1D => Self::one_variable(),
            DomainKind::Ball2C | DomainKind::Bidisc2C => Self::two_variable(),
            DomainKind::ToricLog2D => Self::toric(),
        }
    }

    /// Unit complex direction of generator `i`.
    pub fn unit_direction(&self, i: usize) -> [Complex64; 2] {
        let [a, b] = self.directions[i];
        let a = Complex64::new(a.0 as f64, a.1 as f64);
        let b = Complex64::new(b.0 as f64, b.1 as f64);
        let n = (a.norm_sqr() + b.norm_sqr()).sqrt();
        [a / n, b / n]
    }

    pub fn to_config(&self) -> String {
        toml::to_string(self).expect("stencil serializes")
    }

    pub fn from_config(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| LabError::InvalidConfig(e.to_string()))
    }
}

/// Default membership tolerance `c * h^2` with `c = 10`.
pub fn default_tolerance(domain: &GridDomain) -> f64 {
    10.0 * domain.spacing * domain.spacing
}

#[derive(Debug, Clone)]
struct Template {
    /// (integer offset, linear lattice offset, weight)
    entries: Vec<([i32; 4], i64, f64)>,
    direction: usize,
    radius: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub anchor: usize,
    pub entries: Vec<(usize, f64)>,
    /// Direction index (toric: convexity directions, then `+x`, `+y` monotone rows).
    pub direction: usize,
    pub radius: usize,
}

#[derive(Debug, Clone)]
enum AnchorRows {
    Templates(u128),
    Explicit(std::ops::Range<usize>),
}

/// The polyhedral cone `{u : every row holds}` on a fixed domain.
#[derive(Debug, Clone)]
pub struct Cone {
    pub domain: Arc<GridDomain>,
    pub stencil: StencilFamily,
    templates: Vec<Template>,
    anchors: Vec<usize>,
    rows: Vec<AnchorRows>,
    explicit: Vec<Row>,
}

impl Cone {
    pub fn build(domain: Arc<GridDomain>, stencil: &StencilFamily) -> Result<Self> {
        if domain.kind == DomainKind::ToricLog2D {
            Self::build_toric(domain, stencil)
        } else {
            Self::build_lattice(domain, stencil)
        }
    }

    fn build_lattice(domain: Arc<GridDomain>, stencil: &StencilFamily) -> Result<Self> {
        let dim = domain.dim;
        let two_var = dim == 4;
        let m = stencil.circle_points.max(1);
        let mut templates = Vec::new();
        for (di, dir) in stencil.directions.iter().enumerate() {
            let a = Complex64::new(dir[0].0 as f64, dir[0].1 as f64);
            let b = Complex64::new(dir[1].0 as f64, dir[1].1 as f64);
            if !two_var && b.norm_sqr() > 0.0 {
                continue;
            }
            for (ri, &k) in stencil.radius_steps.iter().enumerate() {
                let mut acc: BTreeMap<[i32; 4], f64> = BTreeMap::new();
                for j in 0..m {
                    let lam = Complex64::from_polar(k as f64, 2.0 * std::f64::consts::PI * j as f64 / m as f64);
                    let p = [lam * a, lam * b];
                    let real = [p[0].re, p[0].im, p[1].re, p[1].im];
                    for (off, w) in multilinear(&real[..dim]) {
                        *acc.entry(off).or_insert(0.0) += w / m as f64;
                    }
                }
                // a self weight only rescales the row, so fold it away
                if let Some(w0) = acc.remove(&[0i32; 4]) {
                    for w in acc.values_mut() {
                        *w /= 1.0 - w0;
                    }
                }
                let strides = domain.strides();
                let entries = acc
                    .into_iter()
                    .filter(|(_, w)| *w > 1e-15)
                    .map(|(off, w)| {
                        let lin: i64 = (0..dim).map(|k| off[k] as i64 * strides[k] as i64).sum();
                        (off, lin, w)
                    })
                    .collect();
                templates.push(Template { entries, direction: di, radius: ri });
            }
        }
        assert!(templates.len() <= 128, "at most 128 templates per family");

        let mut anchors = Vec::new();
        let mut rows = Vec::new();
        for node in 0..domain.lattice_len {
            if domain.class_of(node) != NodeClass::Interior || domain.is_masked(node) {
                continue;
            }
            let mut mask = 0u128;
            for (t, tpl) in templates.iter().enumerate() {
                let ok = tpl.entries.iter().all(|(off, _, _)| match domain.offset_index(node, &off[..dim]) {
                    Some(j) => domain.is_active(j),
                    None => false,
                });
                if ok {
                    mask |= 1 << t;
                } else if tpl.entries.iter().all(|(off, _, _)| off.iter().all(|o| o.abs() <= 1)) {
                    // only wide templates may be dropped near the boundary
                    return Err(LabError::StencilLeavesDomain(node));
                }
            }
            anchors.push(node);
            rows.push(AnchorRows::Templates(mask));
        }
        Ok(Cone { domain, stencil: stencil.clone(), templates, anchors, rows, explicit: Vec::new() })
    }

    fn build_toric(domain: Arc<GridDomain>, stencil: &StencilFamily) -> Result<Self> {
        let mut anchors = Vec::new();
        let mut rows = Vec::new();
        let mut explicit = Vec::new();
        let ndir = stencil.toric_directions.len();
        // arm: node reached from `node` by (sx, sy), as (node, distance in steps)
        let arm = |node: usize, sx: i8, sy: i8| -> Result<Option<(usize, f64)>> {
            if let Some(j) = domain.offset_index(node, &[sx as i32, sy as i32]) {
                if domain.is_active(j) {
                    return Ok(Some((j, 1.0)));
                }
            }
            if let Some(link) = domain.arc_link(node, sx, sy) {
                return Ok(Some((link.node, link.t)));
            }
            // leaving through the truncation edge or not materialized
            let c = domain.coords(node);
            let h = domain.spacing;
            let (px, py) = (c[0] + sx as f64 * h, c[1] + sy as f64 * h);
            if px < -domain.truncation - 1e-12 || py < -domain.truncation - 1e-12 {
                Ok(None)
            } else {
                Err(LabError::StencilLeavesDomain(node))
            }
        };
        for node in 0..domain.lattice_len {
            if domain.class_of(node) != NodeClass::Interior || domain.is_masked(node) {
                continue;
            }
            let start = explicit.len();
            for (di, &(dx, dy)) in stencil.toric_directions.iter().enumerate() {
                let fwd = arm(node, dx, dy)?;
                let bwd = arm(node, -dx, -dy)?;
                if let (Some((f, tf)), Some((b, tb))) = (fwd, bwd) {
                    let s = tf + tb;
                    explicit.push(Row { anchor: node, entries: vec![(f, tb / s), (b, tf / s)], direction: di, radius: 0 });
                }
            }
            for (k, (sx, sy)) in [(1i8, 0i8), (0, 1)].into_iter().enumerate() {
                if let Some((j, _)) = arm(node, sx, sy)? {
                    explicit.push(Row { anchor: node, entries: vec![(j, 1.0)], direction: ndir + k, radius: 0 });
                }
            }
            anchors.push(node);
            rows.push(AnchorRows::Explicit(start..explicit.len()));
        }
        Ok(Cone { domain, stencil: stencil.clone(), templates: Vec::new(), anchors, rows, explicit })
    }

    /// Interior, unmasked nodes carrying constraints.
    pub fn anchors(&self) -> &[usize] {
        &self.anchors
    }

    pub fn row_count(&self) -> usize {
        self.rows
            .iter()
            .map(|r| match r {
                AnchorRows::Templates(m) => m.count_ones() as usize,
                AnchorRows::Explicit(range) => range.len(),
            })
            .sum()
    }

    /// Calls `f(direction, radius, average)` for every row of anchor `k`.
    #[inline]
    pub fn for_each_average(&self, k: usize, values: &[f64], mut f: impl FnMut(usize, usize, f64)) {
        let node = self.anchors[k];
        match &self.rows[k] {
            AnchorRows::Templates(mask) => {
                let mut m = *mask;
                while m != 0 {
                    let t = m.trailing_zeros() as usize;
                    m &= m - 1;
                    let tpl = &self.templates[t];
                    let mut s = 0.0;
                    for &(_, lin, w) in &tpl.entries {
                        s += w * values[(node as i64 + lin) as usize];
                    }
                    f(tpl.direction, tpl.radius, s);
                }
            }
            AnchorRows::Explicit(range) => {
                for row in &self.explicit[range.clone()] {
                    let mut s = 0.0;
                    for &(j, w) in &row.entries {
                        s += w * values[j];
                    }
                    f(row.direction, row.radius, s);
                }
            }
        }
    }

    /// Minimum over the rows of anchor `k` of the row average (`+inf` if none).
    #[inline]
    pub fn min_average(&self, k: usize, values: &[f64]) -> f64 {
        let mut best = f64::INFINITY;
        self.for_each_average(k, values, |_, _, a| {
            if a < best {
                best = a;
            }
        });
        best
    }

    /// Materialized rows (used by the LP layer and reports).
    pub fn rows(&self) -> Vec<Row> {
        let mut out = Vec::new();
        for (k, &node) in self.anchors.iter().enumerate() {
            match &self.rows[k] {
                AnchorRows::Templates(mask) => {
                    for (t, tpl) in self.templates.iter().enumerate() {
                        if mask & (1 << t) == 0 {
                            continue;
                        }
                        let entries = tpl.entries.iter().map(|&(_, lin, w)| ((node as i64 + lin) as usize, w)).collect();
                        out.push(Row { anchor: node, entries, direction: tpl.direction, radius: tpl.radius });
                    }
                }
                AnchorRows::Explicit(range) => out.extend(self.explicit[range.clone()].iter().cloned()),
            }
        }
        out
    }
}

/// Multilinear interpolation weights of a real offset over the enclosing cell.
fn multilinear(x: &[f64]) -> Vec<([i32; 4], f64)> {
    let mut out = vec![([0i32; 4], 1.0)];
    for (k, &v) in x.iter().enumerate() {
        let r = v.round();
        if (v - r).abs() < 1e-9 {
            for e in out.iter_mut() {
                e.0[k] = r as i32;
            }
            continue;
        }
        let fl = v.floor();
        let fr = v - fl;
        let mut next = Vec::with_capacity(out.len() * 2);
        for (off, w) in out {
            let mut lo = off;
            lo[k] = fl as i32;
            let mut hi = off;
            hi[k] = fl as i32 + 1;
            next.push((lo, w * (1.0 - fr)));
            next.push((hi, w * fr));
        }
        out = next;
    }
    out
}

fn gcd(a: i32, b: i32) -> i32 {
    if b == 0 { a } else { gcd(b, a % b) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_domain;

    #[test]
    fn row_weights_are_probability_vectors() {
        for kind in [DomainKind::Disc1D, DomainKind::Ball2C, DomainKind::ToricLog2D] {
            let d = Arc::new(make_domain(kind, 9, None).unwrap());
            let cone = Cone::build(d.clone(), &StencilFamily::default_for(kind)).unwrap();
            let rows = cone.rows();
            assert!(!rows.is_empty());
            for r in rows {
                let s: f64 = r.entries.iter().map(|e| e.1).sum();
                assert!((s - 1.0).abs() < 1e-12, "{kind:?}");
                assert!(r.entries.iter().all(|e| e.1 > 0.0 && d.is_active(e.0) && e.0 != r.anchor), "{kind:?} {r:?}");
            }
        }
    }

    #[test]
    fn circle_average_of_linear_function_is_exact() {
        let d = Arc::new(make_domain(DomainKind::Ball2C, 9, None).unwrap());
        let cone = Cone::build(d.clone(), &StencilFamily::two_variable()).unwrap();
        let vals: Vec<f64> = (0..d.len()).map(|i| {
            let c = d.coords(i);
            0.3 * c[0] - 1.2 * c[1] + 0.7 * c[2] + 2.0 * c[3]
        }).collect();
        for (k, &n) in cone.anchors().iter().enumerate() {
            cone.for_each_average(k, &vals, |_, _, a| assert!((a - vals[n]).abs() < 1e-12));
        }
    }

    #[test]
    fn two_variable_family_has_ten_directions() {
        let s = StencilFamily::two_variable();
        assert_eq!(s.directions.len(), 10);
        for i in 0..10 {
            let u = s.unit_direction(i);
            assert!((u[0].norm_sqr() + u[1].norm_sqr() - 1.0).abs() < 1e-12);
        }
        let text = s.to_config();
        assert_eq!(StencilFamily::from_config(&text).unwrap(), s);
    }

    #[test]
    fn multilinear_weights_sum_to_one() {
        let w = multilinear(&[0.5, -0.25, 1.0, 0.0]);
        assert_eq!(w.len(), 4);
        assert!((w.iter().map(|e| e.1).sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
