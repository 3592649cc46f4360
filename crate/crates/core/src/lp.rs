//! Dense two-phase simplex with Bland's rule, sized for the oracle LPs
//! (a few hundred variables and rows).

use crate::error::{LabError, Result};

/// `maximize c·x  subject to  A x <= b, x >= 0`.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

/// Reduced-cost and pivot-element threshold.
const EPS: f64 = 1e-9;
/// Entries below this are flushed to zero after each pivot.
const FLUSH: f64 = 1e-14;
/// A ray with reduced cost above `-RAY_NOISE` is treated as rounding noise.
const RAY_NOISE: f64 = 1e-6;
/// Smallest column entry accepted as a pivot.
const PIVOT_TOL: f64 = 1e-7;
/// Primal feasibility slack allowed by the ratio test.
const HARRIS: f64 = 1e-9;
/// Pivots between reinversions.
const REINVERT: usize = 32;
const MAX_PIVOTS: usize = 200_000;

struct Tableau {
    /// rows `0..m` are constraints, row `m` the objective (reduced costs);
    /// last column is the right-hand side
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    cols: usize,
    /// constraint rows as first written, for reinversion
    original: Vec<Vec<f64>>,
    /// objective row before elimination of the basic columns
    raw_objective: Vec<f64>,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.t[i][self.cols]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.t[r][c];
        for v in self.t[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.t[r].clone();
        for (i, row) in self.t.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, &pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                    if v.abs() < FLUSH {
                        *v = 0.0;
                    }
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    /// Rebuilds the tableau as `B^-1` times the original rows, dropping
    /// accumulated round-off. Keeps the old tableau if the basis is singular.
    fn reinvert(&mut self) {
        let m = self.basis.len();
        let w = self.cols + 1;
        let mut mat: Vec<Vec<f64>> = (0..m).map(|i| {
            let mut row: Vec<f64> = self.basis.iter().map(|&j| self.original[i][j]).collect();
            row.extend_from_slice(&self.original[i]);
            row
        }).collect();
        for c in 0..m {
            let p = (c..m).max_by(|&a, &b| mat[a][c].abs().total_cmp(&mat[b][c].abs())).unwrap();
            if mat[p][c].abs() < 1e-12 {
                return;
            }
            mat.swap(c, p);
            let d = mat[c][c];
            for v in mat[c].iter_mut() {
                *v /= d;
            }
            let pivot = mat[c].clone();
            for (r, row) in mat.iter_mut().enumerate() {
                let f = row[c];
                if r != c && f != 0.0 {
                    for (v, pv) in row.iter_mut().zip(&pivot) {
                        *v -= f * pv;
                    }
                }
            }
        }
        for (i, row) in mat.into_iter().enumerate() {
            self.t[i] = row[m..m + w].to_vec();
            self.t[i][self.basis[i]] = 1.0;
        }
        let mut obj = self.raw_objective.clone();
        for i in 0..m {
            let f = obj[self.basis[i]];
            if f != 0.0 {
                for (v, tv) in obj.iter_mut().zip(&self.t[i]) {
                    *v -= f * tv;
                }
            }
        }
        for &j in &self.basis {
            obj[j] = 0.0;
        }
        self.t[m] = obj;
    }

    /// Maximizes the objective row over columns `< allowed`. The objective row
    /// stores `-reduced cost`, so a negative entry can enter.
    fn run(&mut self, allowed: usize, pivots: &mut usize) -> Result<()> {
        let m = self.basis.len();
        // columns whose tiny negative reduced cost is rounding noise on a ray
        let mut blocked = vec![false; allowed];
        loop {
            let Some(c) = (0..allowed).find(|&j| !blocked[j] && self.t[m][j] < -EPS) else {
                return Ok(());
            };
            // Harris two-pass ratio test: bound the step with a relaxed rhs,
            // then take the largest pivot element within that bound
            let mut bound = f64::INFINITY;
            for i in 0..m {
                let a = self.t[i][c];
                if a > PIVOT_TOL {
                    bound = bound.min((self.rhs(i).max(0.0) + HARRIS) / a);
                }
            }
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..m {
                let a = self.t[i][c];
                if a > PIVOT_TOL && self.rhs(i).max(0.0) / a <= bound {
                    leave = match leave {
                        Some((r, best)) if best > a || (best == a && self.basis[r] < self.basis[i]) => Some((r, best)),
                        _ => Some((i, a)),
                    };
                }
            }
            let Some((r, _)) = leave else {
                if self.t[m][c] > -RAY_NOISE {
                    blocked[c] = true;
                    continue;
                }
                return Err(LabError::LpFailure("unbounded".into()));
            };
            self.pivot(r, c);
            *pivots += 1;
            if *pivots % REINVERT == 0 {
                self.reinvert();
            }
            if *pivots > MAX_PIVOTS {
                return Err(LabError::LpFailure("stalled (pivot limit)".into()));
            }
        }
    }
}

impl LinearProgram {
    pub fn new(a: Vec<Vec<f64>>, b: Vec<f64>, c: Vec<f64>) -> Self {
        LinearProgram { a, b, c }
    }

    pub fn solve(&self) -> Result<LpSolution> {
        let m = self.b.len();
        let n = self.c.len();
        if self.a.len() != m || self.a.iter().any(|r| r.len() != n) {
            return Err(LabError::LpFailure("malformed (dimension mismatch)".into()));
        }
        // columns: x (n), slacks (m), artificials (one per negative rhs)
        let negative: Vec<usize> = (0..m).filter(|&i| self.b[i] < 0.0).collect();
        let cols = n + m + negative.len();
        let mut t = vec![vec![0.0; cols + 1]; m + 1];
        let mut basis = vec![0; m];
        let mut art = 0;
        for i in 0..m {
            let s = if self.b[i] < 0.0 { -1.0 } else { 1.0 };
            for j in 0..n {
                t[i][j] = s * self.a[i][j];
            }
            t[i][n + i] = s;
            t[i][cols] = s * self.b[i];
            if s < 0.0 {
                t[i][n + m + art] = 1.0;
                basis[i] = n + m + art;
                art += 1;
            } else {
                basis[i] = n + i;
            }
        }
        let original = t[..m].to_vec();
        let mut tab = Tableau { t, basis, cols, original, raw_objective: vec![0.0; cols + 1] };
        let mut pivots = 0;

        if !negative.is_empty() {
            // phase one: maximize -(sum of artificials)
            for j in 0..=cols {
                tab.t[m][j] = 0.0;
            }
            for &i in &negative {
                for j in 0..=cols {
                    tab.t[m][j] -= tab.t[i][j];
                }
            }
            for k in 0..negative.len() {
                tab.t[m][n + m + k] = 0.0;
                tab.raw_objective[n + m + k] = 1.0;
            }
            tab.run(cols, &mut pivots)?;
            tab.reinvert();
            let infeasibility = -tab.t[m][cols];
            if infeasibility > 1e-9 * (1.0 + self.b.iter().map(|v| v.abs()).fold(0.0, f64::max)) {
                return Err(LabError::LpFailure("infeasible".into()));
            }
            // drive zero-level artificials out of the basis
            for i in 0..m {
                if tab.basis[i] >= n + m {
                    let j = (0..n + m).max_by(|&a, &b| tab.t[i][a].abs().total_cmp(&tab.t[i][b].abs())).unwrap();
                    if tab.t[i][j].abs() > 1e-7 {
                        tab.pivot(i, j);
                        pivots += 1;
                    }
                }
            }
        }

        // phase two objective row: -c, expressed in the current basis
        for j in 0..=cols {
            tab.t[m][j] = 0.0;
        }
        for j in 0..n {
            tab.t[m][j] = -self.c[j];
        }
        for i in 0..m {
            let bj = tab.basis[i];
            let f = tab.t[m][bj];
            if f != 0.0 {
                let row = tab.t[i].clone();
                for (v, rv) in tab.t[m].iter_mut().zip(row) {
                    *v -= f * rv;
                }
            }
        }
        tab.raw_objective = vec![0.0; cols + 1];
        tab.raw_objective[..n].iter_mut().zip(&self.c).for_each(|(v, c)| *v = -c);
        // artificials never re-enter
        tab.run(n + m, &mut pivots)?;
        tab.reinvert();
        tab.run(n + m, &mut pivots)?;

        // recompute the basic solution from the original data so tableau
        // round-off does not leak into the reported optimum
        let mut x = vec![0.0; n];
        let refined = self.basic_solution(&tab.basis, &negative);
        for i in 0..m {
            if tab.basis[i] < n {
                let v = refined.as_ref().map_or(tab.rhs(i), |r| r[i]);
                x[tab.basis[i]] = v.max(0.0);
            }
        }
        let scale = 1.0 + self.b.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let residual = self
            .a
            .iter()
            .zip(&self.b)
            .map(|(row, &bi)| row.iter().zip(&x).map(|(a, v)| a * v).sum::<f64>() - bi)
            .fold(0.0, f64::max);
        if residual > 1e-8 * scale {
            return Err(LabError::LpFailure(format!("inaccurate (residual {residual:.2e}, refined {})", refined.is_some())));
        }
        let objective = self.c.iter().zip(&x).map(|(c, v)| c * v).sum();
        Ok(LpSolution { x, objective, pivots })
    }
}

impl LinearProgram {
    /// Solves `B v = b` for the basis columns of `[A | I | -I_art]`.
    fn basic_solution(&self, basis: &[usize], negative: &[usize]) -> Option<Vec<f64>> {
        let m = self.b.len();
        let n = self.c.len();
        let mut mat = vec![vec![0.0; m + 1]; m];
        for (k, &j) in basis.iter().enumerate() {
            if j < n {
                for i in 0..m {
                    mat[i][k] = self.a[i][j];
                }
            } else if j < n + m {
                mat[j - n][k] = 1.0;
            } else {
                mat[negative[j - n - m]][k] = -1.0;
            }
        }
        for i in 0..m {
            mat[i][m] = self.b[i];
        }
        for c in 0..m {
            let p = (c..m).max_by(|&a, &b| mat[a][c].abs().total_cmp(&mat[b][c].abs()))?;
            if mat[p][c].abs() < 1e-13 {
                return None;
            }
            mat.swap(c, p);
            let pivot = mat[c].clone();
            for (r, row) in mat.iter_mut().enumerate() {
                if r != c && row[c] != 0.0 {
                    let f = row[c] / pivot[c];
                    for k in c..=m {
                        row[k] -= f * pivot[k];
                    }
                }
            }
        }
        Some((0..m).map(|r| mat[r][m] / mat[r][r]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_problem() {
        // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18  ->  36 at (2, 6)
        let lp = LinearProgram::new(vec![vec![1.0, 0.0], vec![0.0, 2.0], vec![3.0, 2.0]], vec![4.0, 12.0, 18.0], vec![3.0, 5.0]);
        let s = lp.solve().unwrap();
        assert!((s.objective - 36.0).abs() < 1e-12);
        assert!((s.x[0] - 2.0).abs() < 1e-12 && (s.x[1] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn phase_one_needed() {
        // max -x - y with x + y >= 2 (as -x - y <= -2), x <= 3  ->  -2
        let lp = LinearProgram::new(vec![vec![-1.0, -1.0], vec![1.0, 0.0]], vec![-2.0, 3.0], vec![-1.0, -1.0]);
        let s = lp.solve().unwrap();
        assert!((s.objective + 2.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let lp = LinearProgram::new(vec![vec![1.0], vec![-1.0]], vec![1.0, -2.0], vec![1.0]);
        assert!(matches!(lp.solve(), Err(LabError::LpFailure(m)) if m == "infeasible"));
        let lp = LinearProgram::new(vec![vec![-1.0, 1.0]], vec![1.0], vec![1.0, 0.0]);
        assert!(matches!(lp.solve(), Err(LabError::LpFailure(m)) if m == "unbounded"));
    }

    #[test]
    fn degenerate_cycling_example() {
        // Beale's example cycles under the largest-coefficient rule
        let lp = LinearProgram::new(
            vec![vec![0.25, -60.0, -0.04, 9.0], vec![0.5, -90.0, -0.02, 3.0], vec![0.0, 0.0, 1.0, 0.0]],
            vec![0.0, 0.0, 1.0],
            vec![0.75, -150.0, 0.02, -6.0],
        );
        let s = lp.solve().unwrap();
        assert!((s.objective - 0.05).abs() < 1e-12, "{}", s.objective);
    }
}
