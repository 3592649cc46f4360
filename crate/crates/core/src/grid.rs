//! Model domains on uniform lattices and extended-real grid functions.
//!
//! Lattice kinds index nodes as `i_0 + res * i_1 + res^2 * i_2 + ...`, so a
//! `GridFunction` is a flat vector over every lattice point. Points outside the
//! domain are `Excluded` and carry `NaN`. The log-coordinate toric domain also
//! appends off-lattice boundary nodes where lattice lines cross the arc
//! `e^{2x} + e^{2y} = 1`; those follow the lattice block in the index space.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::ext::{is_inf, saturate, INF_TOKEN};

pub const DEFAULT_TRUNCATION: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DomainKind {
    Disc1D,
    PuncturedDisc1D,
    Ball2C,
    Bidisc2C,
    ToricLog2D,
}

impl DomainKind {
    /// Real dimension of the lattice.
    pub fn real_dim(self) -> usize {
        match self {
            DomainKind::Disc1D | DomainKind::PuncturedDisc1D | DomainKind::ToricLog2D => 2,
            DomainKind::Ball2C | DomainKind::Bidisc2C => 4,
        }
    }

    /// Number of complex variables of the model (the toric domain stands for the ball in C^2).
    pub fn complex_dim(self) -> usize {
        match self {
            DomainKind::Disc1D | DomainKind::PuncturedDisc1D => 1,
            _ => 2,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "disc1d" | "disc" => Ok(DomainKind::Disc1D),
            "punctureddisc1d" | "punctured" => Ok(DomainKind::PuncturedDisc1D),
            "ball2c" | "ball" => Ok(DomainKind::Ball2C),
            "bidisc2c" | "bidisc" => Ok(DomainKind::Bidisc2C),
            "toriclog2d" | "toric" => Ok(DomainKind::ToricLog2D),
            other => Err(LabError::InvalidConfig(format!("unknown domain kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeClass {
    Interior,
    Boundary,
    Excluded,
}

impl NodeClass {
    pub fn label(self) -> &'static str {
        match self {
            NodeClass::Interior => "interior",
            NodeClass::Boundary => "boundary",
            NodeClass::Excluded => "excluded",
        }
    }
}

/// Descriptor for the node set standing in for a pluripolar set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MaskSpec {
    None,
    /// The node at the origin (lattice kinds only).
    Origin,
    /// The slice `{z = 0}` of a two-variable lattice.
    SliceZ0,
    /// The slice `{w = 0}` of a two-variable lattice.
    SliceW0,
    /// Nearest node to each listed point (real coordinates).
    Points { points: Vec<Vec<f64>> },
    /// Explicit node indices.
    Nodes { nodes: Vec<usize> },
    /// Toric truncation column `x = -L` (image of `{z = 0}`).
    ToricEdgeX,
    /// Toric truncation row `y = -L` (image of `{w = 0}`).
    ToricEdgeY,
    /// Both truncation edges.
    ToricEdges,
}

/// Serializable description of a domain, used in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub kind: DomainKind,
    pub resolution: usize,
    #[serde(default = "default_mask")]
    pub mask: MaskSpec,
    #[serde(default = "default_truncation")]
    pub truncation: f64,
}

fn default_mask() -> MaskSpec {
    MaskSpec::None
}

fn default_truncation() -> f64 {
    DEFAULT_TRUNCATION
}

impl DomainSpec {
    pub fn build(&self) -> Result<GridDomain> {
        make_domain_with(self.kind, self.resolution, &self.mask, self.truncation)
    }

    pub fn to_config(&self) -> String {
        toml::to_string(self).expect("domain spec serializes")
    }

    pub fn from_config(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| LabError::InvalidConfig(e.to_string()))
    }
}

/// Crossing of a lattice line with the toric arc, seen from its last inside node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArcLink {
    pub node: usize,
    /// Fraction of the lattice step at which the arc is met, in `(0, 1)`.
    pub t: f64,
}

#[derive(Debug, Clone)]
pub struct GridDomain {
    pub kind: DomainKind,
    pub resolution: usize,
    pub spacing: f64,
    /// Coordinate of lattice index 0 on every axis.
    pub lower: f64,
    /// Toric truncation depth `L` (unused for other kinds).
    pub truncation: f64,
    pub dim: usize,
    pub lattice_len: usize,
    pub class: Vec<NodeClass>,
    pub singular_mask: BTreeSet<usize>,
    mask_flags: Vec<bool>,
    extra_coords: Vec<[f64; 2]>,
    arc_links: HashMap<(usize, i8, i8), ArcLink>,
    strides: [usize; 4],
}

/// Lattice directions along which toric arc crossings are materialized.
pub const TORIC_ARC_DIRECTIONS: [(i8, i8); 4] = [(1, 0), (0, 1), (1, 1), (1, -1)];

pub fn make_domain(kind: DomainKind, resolution: usize, mask: Option<&MaskSpec>) -> Result<GridDomain> {
    let default = match kind {
        DomainKind::PuncturedDisc1D => MaskSpec::Origin,
        _ => MaskSpec::None,
    };
    make_domain_with(kind, resolution, mask.unwrap_or(&default), DEFAULT_TRUNCATION)
}

pub fn make_domain_with(
    kind: DomainKind,
    resolution: usize,
    mask: &MaskSpec,
    truncation: f64,
) -> Result<GridDomain> {
    if resolution < 5 || resolution % 2 == 0 {
        return Err(LabError::InvalidResolution(resolution));
    }
    if kind == DomainKind::ToricLog2D && !(truncation > 0.0 && truncation.is_finite()) {
        return Err(LabError::ParamOutOfRange(format!("truncation depth {truncation}")));
    }
    let dim = kind.real_dim();
    let lattice_len = resolution.pow(dim as u32);
    let mut strides = [0usize; 4];
    for (k, s) in strides.iter_mut().enumerate().take(dim) {
        *s = resolution.pow(k as u32);
    }
    let (lower, spacing) = match kind {
        DomainKind::ToricLog2D => (-truncation, truncation / (resolution - 1) as f64),
        _ => (-1.0, 2.0 / (resolution - 1) as f64),
    };
    let mut dom = GridDomain {
        kind,
        resolution,
        spacing,
        lower,
        truncation,
        dim,
        lattice_len,
        class: vec![NodeClass::Excluded; lattice_len],
        singular_mask: BTreeSet::new(),
        mask_flags: Vec::new(),
        extra_coords: Vec::new(),
        arc_links: HashMap::new(),
        strides,
    };

    let inside: Vec<bool> = (0..lattice_len).map(|i| dom.point_inside(&dom.lattice_coords(i))).collect();
    if kind == DomainKind::ToricLog2D {
        for i in 0..lattice_len {
            if inside[i] {
                dom.class[i] = NodeClass::Interior;
            }
        }
        dom.build_arc_nodes(&inside);
    } else {
        let offsets = unit_neighborhood(dim);
        for i in 0..lattice_len {
            if !inside[i] {
                continue;
            }
            let full = offsets.iter().all(|off| match dom.offset_index(i, off) {
                Some(j) => inside[j],
                None => false,
            });
            dom.class[i] = if full { NodeClass::Interior } else { NodeClass::Boundary };
        }
    }

    let nodes = dom.resolve_mask(mask)?;
    dom.mask_flags = vec![false; dom.len()];
    for &n in &nodes {
        dom.mask_flags[n] = true;
    }
    dom.singular_mask = nodes;
    Ok(dom)
}

/// All offsets in `{-1, 0, 1}^dim` except zero.
fn unit_neighborhood(dim: usize) -> Vec<[i32; 4]> {
    let mut out = Vec::new();
    let total = 3usize.pow(dim as u32);
    for code in 0..total {
        let mut off = [0i32; 4];
        let mut c = code;
        for o in off.iter_mut().take(dim) {
            *o = (c % 3) as i32 - 1;
            c /= 3;
        }
        if off.iter().any(|&o| o != 0) {
            out.push(off);
        }
    }
    out
}

impl GridDomain {
    /// Total number of indexable nodes (lattice plus off-lattice extras).
    pub fn len(&self) -> usize {
        self.lattice_len + self.extra_coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn class_of(&self, node: usize) -> NodeClass {
        if node < self.lattice_len {
            self.class[node]
        } else if node < self.len() {
            NodeClass::Boundary
        } else {
            NodeClass::Excluded
        }
    }

    pub fn is_active(&self, node: usize) -> bool {
        self.class_of(node) != NodeClass::Excluded
    }

    pub fn is_masked(&self, node: usize) -> bool {
        self.mask_flags.get(node).copied().unwrap_or(false)
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides[..self.dim]
    }

    /// Active node indices in increasing order.
    pub fn active_nodes(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_active(i)).collect()
    }

    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.class_of(i) == NodeClass::Interior).collect()
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.class_of(i) == NodeClass::Boundary).collect()
    }

    pub fn node_count(&self) -> usize {
        (0..self.len()).filter(|&i| self.is_active(i)).count()
    }

    pub fn multi_index(&self, node: usize) -> [usize; 4] {
        let mut out = [0usize; 4];
        let mut rem = node;
        for o in out.iter_mut().take(self.dim) {
            *o = rem % self.resolution;
            rem /= self.resolution;
        }
        out
    }

    pub fn index_of(&self, multi: &[usize]) -> usize {
        multi.iter().zip(self.strides()).map(|(m, s)| m * s).sum()
    }

    /// Lattice index displaced by an integer offset, if it stays on the lattice.
    pub fn offset_index(&self, node: usize, off: &[i32]) -> Option<usize> {
        if node >= self.lattice_len {
            return None;
        }
        let mi = self.multi_index(node);
        let mut idx = 0usize;
        for k in 0..self.dim {
            let v = mi[k] as i64 + off[k] as i64;
            if v < 0 || v >= self.resolution as i64 {
                return None;
            }
            idx += v as usize * self.strides[k];
        }
        Some(idx)
    }

    fn lattice_coords(&self, node: usize) -> [f64; 4] {
        let mi = self.multi_index(node);
        let mut c = [0.0; 4];
        for k in 0..self.dim {
            c[k] = self.lower + mi[k] as f64 * self.spacing;
        }
        // Snap the centre exactly onto zero.
        for v in c.iter_mut() {
            if v.abs() < 1e-12 {
                *v = 0.0;
            }
        }
        c
    }

    /// Real coordinates of a node (trailing entries are zero beyond `dim`).
    pub fn coords(&self, node: usize) -> [f64; 4] {
        if node < self.lattice_len {
            self.lattice_coords(node)
        } else {
            let e = self.extra_coords[node - self.lattice_len];
            [e[0], e[1], 0.0, 0.0]
        }
    }

    /// `(z, w)` of a lattice node; `w = 0` for one-variable kinds. For the toric
    /// domain this returns the positive real representative `(e^x, e^y)`.
    pub fn complex_point(&self, node: usize) -> (Complex64, Complex64) {
        let c = self.coords(node);
        match self.kind {
            DomainKind::ToricLog2D => (Complex64::new(c[0].exp(), 0.0), Complex64::new(c[1].exp(), 0.0)),
            DomainKind::Disc1D | DomainKind::PuncturedDisc1D => (Complex64::new(c[0], c[1]), Complex64::new(0.0, 0.0)),
            _ => (Complex64::new(c[0], c[1]), Complex64::new(c[2], c[3])),
        }
    }

    pub fn point_inside(&self, c: &[f64; 4]) -> bool {
        const EPS: f64 = 1e-12;
        match self.kind {
            DomainKind::Disc1D | DomainKind::PuncturedDisc1D => c[0] * c[0] + c[1] * c[1] <= 1.0 + EPS,
            DomainKind::Ball2C => c.iter().map(|v| v * v).sum::<f64>() <= 1.0 + EPS,
            DomainKind::Bidisc2C => {
                c[0] * c[0] + c[1] * c[1] <= 1.0 + EPS && c[2] * c[2] + c[3] * c[3] <= 1.0 + EPS
            }
            DomainKind::ToricLog2D => {
                c[0] >= -self.truncation - EPS
                    && c[1] >= -self.truncation - EPS
                    && (2.0 * c[0]).exp() + (2.0 * c[1]).exp() <= 1.0 + EPS
            }
        }
    }

    /// Euclidean distance from a lattice point to the model boundary.
    pub fn distance_to_boundary(&self, node: usize) -> f64 {
        let c = self.coords(node);
        match self.kind {
            DomainKind::Disc1D | DomainKind::PuncturedDisc1D => (1.0 - (c[0] * c[0] + c[1] * c[1]).sqrt()).abs(),
            DomainKind::Ball2C => (1.0 - c.iter().map(|v| v * v).sum::<f64>().sqrt()).abs(),
            DomainKind::Bidisc2C => {
                let a = 1.0 - (c[0] * c[0] + c[1] * c[1]).sqrt();
                let b = 1.0 - (c[2] * c[2] + c[3] * c[3]).sqrt();
                a.min(b).abs()
            }
            DomainKind::ToricLog2D => {
                // distance along the row to the arc
                let s = 1.0 - (2.0 * c[1]).exp();
                if s <= 0.0 {
                    0.0
                } else {
                    (0.5 * s.ln() - c[0]).abs()
                }
            }
        }
    }

    pub fn arc_link(&self, node: usize, dx: i8, dy: i8) -> Option<ArcLink> {
        self.arc_links.get(&(node, dx, dy)).copied()
    }

    /// Number of off-lattice arc nodes (toric only).
    pub fn arc_node_count(&self) -> usize {
        self.extra_coords.len()
    }

    fn build_arc_nodes(&mut self, inside: &[bool]) {
        let res = self.resolution as i64;
        for i in 0..self.lattice_len {
            if !inside[i] {
                continue;
            }
            let mi = self.multi_index(i);
            for &(dx, dy) in TORIC_ARC_DIRECTIONS.iter() {
                for sign in [1i8, -1i8] {
                    let (sx, sy) = (dx * sign, dy * sign);
                    let nx = mi[0] as i64 + sx as i64;
                    let ny = mi[1] as i64 + sy as i64;
                    let neighbor_inside = nx >= 0
                        && ny >= 0
                        && nx < res
                        && ny < res
                        && inside[nx as usize + ny as usize * self.resolution];
                    if neighbor_inside {
                        continue;
                    }
                    let c = self.lattice_coords(i);
                    let (x0, y0) = (c[0], c[1]);
                    let h = self.spacing;
                    let arc = |t: f64| (2.0 * (x0 + t * sx as f64 * h)).exp() + (2.0 * (y0 + t * sy as f64 * h)).exp() - 1.0;
                    if arc(1.0) <= 0.0 {
                        // left through the truncation edge, not the arc
                        continue;
                    }
                    let (mut lo, mut hi) = (0.0f64, 1.0f64);
                    for _ in 0..80 {
                        let mid = 0.5 * (lo + hi);
                        if arc(mid) <= 0.0 {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    let t = 0.5 * (lo + hi);
                    let px = x0 + t * sx as f64 * h;
                    let py = y0 + t * sy as f64 * h;
                    if px < -self.truncation - 1e-12 || py < -self.truncation - 1e-12 {
                        continue;
                    }
                    if t < 1e-9 {
                        // the node itself sits on the arc (e.g. x = 0 with e^{2y} below
                        // rounding); it carries boundary data
                        self.class[i] = NodeClass::Boundary;
                        continue;
                    }
                    let idx = self.lattice_len + self.extra_coords.len();
                    self.extra_coords.push([px, py]);
                    self.arc_links.insert((i, sx, sy), ArcLink { node: idx, t });
                }
            }
        }
    }

    fn nearest_lattice_node(&self, p: &[f64]) -> Option<usize> {
        if p.len() != self.dim {
            return None;
        }
        let mut multi = [0usize; 4];
        for k in 0..self.dim {
            let r = ((p[k] - self.lower) / self.spacing).round();
            if r < 0.0 || r >= self.resolution as f64 {
                return None;
            }
            multi[k] = r as usize;
        }
        Some(self.index_of(&multi[..self.dim]))
    }

    fn origin_node(&self) -> Option<usize> {
        let zero = vec![0.0; self.dim];
        self.nearest_lattice_node(&zero)
    }

    fn resolve_mask(&self, mask: &MaskSpec) -> Result<BTreeSet<usize>> {
        let mut out = BTreeSet::new();
        let is_toric = self.kind == DomainKind::ToricLog2D;
        let two_var = self.dim == 4;
        match mask {
            MaskSpec::None => {}
            MaskSpec::Origin => {
                if is_toric {
                    return Err(LabError::DomainMismatch("origin mask on the toric domain".into()));
                }
                out.insert(self.origin_node().expect("odd lattice has an origin"));
            }
            MaskSpec::SliceZ0 | MaskSpec::SliceW0 => {
                if !two_var {
                    return Err(LabError::DomainMismatch("slice mask needs a two-variable lattice".into()));
                }
                let axis = if matches!(mask, MaskSpec::SliceZ0) { 0 } else { 2 };
                let mid = self.resolution / 2;
                for i in 0..self.lattice_len {
                    let mi = self.multi_index(i);
                    if mi[axis] == mid && mi[axis + 1] == mid && self.class[i] != NodeClass::Excluded {
                        out.insert(i);
                    }
                }
            }
            MaskSpec::Points { points } => {
                for p in points {
                    let n = self.nearest_lattice_node(p).ok_or(LabError::MaskOutOfLattice(usize::MAX))?;
                    out.insert(n);
                }
            }
            MaskSpec::Nodes { nodes } => {
                for &n in nodes {
                    if n >= self.len() {
                        return Err(LabError::MaskOutOfLattice(n));
                    }
                    out.insert(n);
                }
            }
            MaskSpec::ToricEdgeX | MaskSpec::ToricEdgeY | MaskSpec::ToricEdges => {
                if !is_toric {
                    return Err(LabError::DomainMismatch("toric edge mask on a lattice kind".into()));
                }
                for i in 0..self.lattice_len {
                    if self.class[i] == NodeClass::Excluded {
                        continue;
                    }
                    let mi = self.multi_index(i);
                    let on_x = mi[0] == 0;
                    let on_y = mi[1] == 0;
                    let hit = match mask {
                        MaskSpec::ToricEdgeX => on_x,
                        MaskSpec::ToricEdgeY => on_y,
                        _ => on_x || on_y,
                    };
                    if hit {
                        out.insert(i);
                    }
                }
            }
        }
        for &n in &out {
            if !self.is_active(n) {
                return Err(LabError::MaskOutOfLattice(n));
            }
        }
        Ok(out)
    }

    /// Nodes of the test region: interior nodes at lattice distance more than
    /// `dilation` from every masked node.
    pub fn test_region(&self, dilation: usize) -> Vec<usize> {
        let mask_multi: Vec<[usize; 4]> = self
            .singular_mask
            .iter()
            .filter(|&&m| m < self.lattice_len)
            .map(|&m| self.multi_index(m))
            .collect();
        self.interior_nodes()
            .into_iter()
            .filter(|&n| {
                if self.is_masked(n) {
                    return false;
                }
                if n >= self.lattice_len {
                    return true;
                }
                let mi = self.multi_index(n);
                !mask_multi.iter().any(|m| {
                    (0..self.dim).all(|k| (mi[k] as i64 - m[k] as i64).unsigned_abs() as usize <= dilation)
                })
            })
            .collect()
    }
}

/// Extended-real table over the nodes of a domain.
#[derive(Debug, Clone)]
pub struct GridFunction {
    pub domain: Arc<GridDomain>,
    pub values: Vec<f64>,
    pub nonnegative: bool,
}

impl GridFunction {
    /// Saturates every value and sets excluded nodes to `NaN`.
    pub fn new(domain: Arc<GridDomain>, mut values: Vec<f64>) -> Self {
        assert_eq!(values.len(), domain.len(), "value table does not match the domain");
        for (i, v) in values.iter_mut().enumerate() {
            *v = if domain.is_active(i) { saturate(*v) } else { f64::NAN };
        }
        GridFunction { domain, values, nonnegative: false }
    }

    pub fn from_fn(domain: Arc<GridDomain>, mut f: impl FnMut(usize) -> f64) -> Self {
        let values = (0..domain.len()).map(|i| if domain.is_active(i) { f(i) } else { f64::NAN }).collect();
        Self::new(domain, values)
    }

    pub fn constant(domain: Arc<GridDomain>, c: f64) -> Self {
        Self::from_fn(domain, |_| c)
    }

    pub fn with_nonnegative(mut self) -> Self {
        assert!(
            self.active_values().all(|(_, v)| v >= 0.0),
            "nonnegative flag on a function with negative values"
        );
        self.nonnegative = true;
        self
    }

    pub fn value(&self, node: usize) -> f64 {
        self.values[node]
    }

    pub fn active_values(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values.iter().enumerate().filter(|(i, _)| self.domain.is_active(*i)).map(|(i, v)| (i, *v))
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        GridFunction::from_fn(self.domain.clone(), |i| f(self.values[i]))
    }

    pub fn zip_with(&self, other: &GridFunction, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        assert!(Arc::ptr_eq(&self.domain, &other.domain) || self.domain.len() == other.domain.len());
        GridFunction::from_fn(self.domain.clone(), |i| f(self.values[i], other.values[i]))
    }

    /// Supremum of finite values over the given nodes (`-inf` if none).
    pub fn sup_over(&self, nodes: &[usize]) -> f64 {
        nodes.iter().map(|&n| self.values[n]).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sup_abs_diff(&self, other: &GridFunction, nodes: &[usize]) -> f64 {
        nodes
            .iter()
            .map(|&n| {
                let (a, b) = (self.values[n], other.values[n]);
                if is_inf(a) && is_inf(b) {
                    0.0
                } else {
                    (a - b).abs()
                }
            })
            .fold(0.0, f64::max)
    }

    /// CSV dump: `node_index,x0,..,value,class`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("node_index");
        for k in 0..self.domain.dim {
            let _ = write!(out, ",x{k}");
        }
        out.push_str(",value,class\n");
        for (i, v) in self.active_values() {
            let c = self.domain.coords(i);
            let _ = write!(out, "{i}");
            for x in c.iter().take(self.domain.dim) {
                let _ = write!(out, ",{x}");
            }
            let val = if is_inf(v) { "inf".to_string() } else { format!("{v}") };
            let class = if self.domain.is_masked(i) { "masked" } else { self.domain.class_of(i).label() };
            let _ = writeln!(out, ",{val},{class}");
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegularizeMode {
    Lsc,
    Usc,
}

/// Discrete lower/upper semicontinuous regularization: min/max over the node and
/// its active axis neighbours. Exact only in the resolution limit.
pub fn regularize(f: &GridFunction, mode: RegularizeMode) -> GridFunction {
    let dom = &f.domain;
    let mut out = f.values.clone();
    let mut off = [0i32; 4];
    for i in 0..dom.lattice_len {
        if !dom.is_active(i) {
            continue;
        }
        let mut acc = f.values[i];
        for k in 0..dom.dim {
            for s in [-1i32, 1] {
                off = [0; 4];
                off[k] = s;
                if let Some(j) = dom.offset_index(i, &off[..dom.dim]) {
                    if dom.is_active(j) {
                        let v = f.values[j];
                        acc = match mode {
                            RegularizeMode::Lsc => acc.min(v),
                            RegularizeMode::Usc => acc.max(v),
                        };
                    }
                }
            }
        }
        out[i] = acc;
    }
    let _ = off;
    GridFunction { domain: f.domain.clone(), values: out, nonnegative: f.nonnegative }
}

/// Value of the token for callers that want to spell it out.
pub fn inf_token() -> f64 {
    INF_TOKEN
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disc(res: usize) -> Arc<GridDomain> {
        Arc::new(make_domain(DomainKind::Disc1D, res, None).unwrap())
    }

    #[test]
    fn rejects_bad_resolutions() {
        assert_eq!(make_domain(DomainKind::Disc1D, 3, None).unwrap_err(), LabError::InvalidResolution(3));
        assert_eq!(make_domain(DomainKind::Disc1D, 8, None).unwrap_err(), LabError::InvalidResolution(8));
        let bad = MaskSpec::Nodes { nodes: vec![10_000] };
        assert!(matches!(
            make_domain(DomainKind::Disc1D, 5, Some(&bad)),
            Err(LabError::MaskOutOfLattice(10_000))
        ));
    }

    #[test]
    fn disc_lattice_has_interior_origin() {
        let d = disc(33);
        assert_eq!(d.lattice_len, 33 * 33);
        let o = d.index_of(&[16, 16]);
        assert_eq!(d.class_of(o), NodeClass::Interior);
        assert_eq!(d.coords(o)[..2], [0.0, 0.0]);
        for n in d.active_nodes() {
            let c = d.coords(n);
            assert!(c[0] * c[0] + c[1] * c[1] <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn punctured_disc_masks_origin() {
        let p = make_domain(DomainKind::PuncturedDisc1D, 33, None).unwrap();
        let d = disc(33);
        assert_eq!(p.class, d.class);
        let o = d.index_of(&[16, 16]);
        assert_eq!(p.singular_mask.iter().copied().collect::<Vec<_>>(), vec![o]);
    }

    #[test]
    fn interior_nodes_have_full_neighbourhoods() {
        for kind in [DomainKind::Disc1D, DomainKind::Ball2C, DomainKind::Bidisc2C] {
            let d = make_domain(kind, 9, None).unwrap();
            let offs = unit_neighborhood(d.dim);
            for n in d.interior_nodes() {
                for off in &offs {
                    let j = d.offset_index(n, &off[..d.dim]).unwrap();
                    assert!(d.is_active(j));
                }
            }
            // boundary nodes lie within one neighbourhood diagonal of the boundary
            let reach = d.spacing * (d.dim as f64).sqrt();
            for n in d.boundary_nodes() {
                assert!(d.distance_to_boundary(n) <= reach + 1e-12, "{kind:?} node {n}");
            }
        }
    }

    #[test]
    fn toric_nodes_respect_the_arc() {
        let d = make_domain(DomainKind::ToricLog2D, 65, None).unwrap();
        for n in d.active_nodes() {
            let c = d.coords(n);
            assert!((2.0 * c[0]).exp() + (2.0 * c[1]).exp() <= 1.0 + 1e-9);
            assert!(c[0] >= -8.0 - 1e-12 && c[1] >= -8.0 - 1e-12 && c[0] <= 0.0 && c[1] <= 0.0);
        }
        assert!(d.arc_node_count() > 0);
        for n in d.boundary_nodes() {
            let c = d.coords(n);
            assert!(((2.0 * c[0]).exp() + (2.0 * c[1]).exp() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn slice_mask_is_small() {
        let d = make_domain(DomainKind::Ball2C, 9, Some(&MaskSpec::SliceW0)).unwrap();
        assert!(d.singular_mask.len() <= 9 * 9);
        for &m in &d.singular_mask {
            let c = d.coords(m);
            assert_eq!((c[2], c[3]), (0.0, 0.0));
        }
    }

    #[test]
    fn domain_construction_is_deterministic() {
        let a = make_domain(DomainKind::ToricLog2D, 17, Some(&MaskSpec::ToricEdgeX)).unwrap();
        let b = make_domain(DomainKind::ToricLog2D, 17, Some(&MaskSpec::ToricEdgeX)).unwrap();
        assert_eq!(a.class, b.class);
        assert_eq!(a.extra_coords, b.extra_coords);
        assert_eq!(a.singular_mask, b.singular_mask);
    }

    #[test]
    fn regularize_examples() {
        let d = disc(9);
        let c = GridFunction::constant(d.clone(), 2.5);
        for mode in [RegularizeMode::Lsc, RegularizeMode::Usc] {
            assert_eq!(regularize(&c, mode).active_values().collect::<Vec<_>>(), c.active_values().collect::<Vec<_>>());
        }
        let o = d.index_of(&[4, 4]);
        let spike = GridFunction::from_fn(d.clone(), |i| if i == o { INF_TOKEN } else { 0.0 });
        assert!(regularize(&spike, RegularizeMode::Lsc).active_values().all(|(_, v)| v == 0.0));
        let dip = GridFunction::from_fn(d.clone(), |i| if i == o { 0.0 } else { 1.0 });
        assert!(regularize(&dip, RegularizeMode::Usc).active_values().all(|(_, v)| v == 1.0));
    }

    #[test]
    fn domain_spec_round_trips_through_config() {
        let spec = DomainSpec { kind: DomainKind::Ball2C, resolution: 17, mask: MaskSpec::SliceZ0, truncation: 8.0 };
        let text = spec.to_config();
        assert!(text.contains("kind = \"Ball2C\""));
        assert_eq!(DomainSpec::from_config(&text).unwrap(), spec);
    }

    #[test]
    fn csv_has_header_and_one_row_per_active_node() {
        let d = disc(5);
        let f = GridFunction::constant(d.clone(), 1.0);
        let csv = f.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "node_index,x0,x1,value,class");
        assert_eq!(lines.count(), d.node_count());
    }
}
