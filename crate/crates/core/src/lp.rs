//! Dense linear programming over polytopes `{x : Ax <= b}` with free variables.
//!
//! The solver is a textbook two-phase tableau simplex with Bland's rule, which
//! is plenty for the direction-finding subproblems here (tens of rows, a few
//! dozen columns). Free variables are split as `x = x⁺ − x⁻`; because the two
//! halves have opposite columns they never share the basis, so every basic
//! solution maps back to a vertex of the original polytope.
//!
//! [`enumerate_vertices`] is the brute-force counterpart used to cross-check
//! the simplex and to compute geometric constants on small instances.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Primal feasibility tolerance.
pub const FEAS_TOL: f64 = 1e-9;
/// Reduced-cost optimality tolerance.
pub const OPT_TOL: f64 = 1e-10;
const PIVOT_TOL: f64 = 1e-12;

/// Combinatorial limits for the public vertex enumerator.
pub const MAX_ENUM_CONSTRAINTS: usize = 16;
pub const MAX_ENUM_DIM: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("simplex stalled after {pivots} pivots in phase {phase}")]
    PivotLimit { pivots: usize, phase: u8 },
    #[error("vertex enumeration over {rows} constraints in dimension {dim} exceeds the cap ({detail})")]
    EnumerationCap {
        rows: usize,
        dim: usize,
        detail: String,
    },
}

/// `min ⟨c, x⟩  s.t.  A x <= b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    pub c: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub point: DVector<f64>,
    pub value: f64,
    pub status: LpStatus,
    /// Constraints tight at `point` (within [`FEAS_TOL`]).
    pub active_set: Vec<usize>,
}

impl LpProblem {
    pub fn new(c: DVector<f64>, a: DMatrix<f64>, b: DVector<f64>) -> Result<Self, LpError> {
        if a.ncols() != c.len() || a.nrows() != b.len() {
            return Err(LpError::DimensionMismatch(format!(
                "A is {}x{}, c has {} entries, b has {}",
                a.nrows(),
                a.ncols(),
                c.len(),
                b.len()
            )));
        }
        Ok(Self { c, a, b })
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    /// Appends the box `-r <= x_i <= r` to the constraint system.
    pub fn with_box_guard(&self, radius: f64) -> Self {
        let d = self.dim();
        let m = self.a.nrows();
        let mut a = DMatrix::zeros(m + 2 * d, d);
        let mut b = DVector::zeros(m + 2 * d);
        a.rows_mut(0, m).copy_from(&self.a);
        b.rows_mut(0, m).copy_from(&self.b);
        for i in 0..d {
            a[(m + 2 * i, i)] = 1.0;
            a[(m + 2 * i + 1, i)] = -1.0;
            b[m + 2 * i] = radius;
            b[m + 2 * i + 1] = radius;
        }
        Self {
            c: self.c.clone(),
            a,
            b,
        }
    }
}

/// Indices of rows with `|⟨a_i, x⟩ − b_i| <= FEAS_TOL · (1 + |b_i|)`.
pub fn active_constraints(a: &DMatrix<f64>, b: &DVector<f64>, x: &DVector<f64>) -> Vec<usize> {
    let ax = a * x;
    (0..a.nrows())
        .filter(|&i| (ax[i] - b[i]).abs() <= FEAS_TOL * (1.0 + b[i].abs()))
        .collect()
}

struct Tableau {
    rows: usize,
    cols: usize,
    /// Row-major `rows × cols` coefficients (B⁻¹A).
    t: Vec<f64>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
}

enum PhaseEnd {
    Optimal,
    Unbounded,
}

impl Tableau {
    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.t[r * self.cols + c]
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let cols = self.cols;
        let p = self.at(pr, pc);
        for c in 0..cols {
            self.t[pr * cols + c] /= p;
        }
        self.rhs[pr] /= p;
        self.t[pr * cols + pc] = 1.0;
        for r in 0..self.rows {
            if r == pr {
                continue;
            }
            let f = self.at(r, pc);
            if f == 0.0 {
                continue;
            }
            for c in 0..cols {
                self.t[r * cols + c] -= f * self.t[pr * cols + c];
            }
            self.t[r * cols + pc] = 0.0;
            self.rhs[r] -= f * self.rhs[pr];
        }
        self.basis[pr] = pc;
    }

    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut rc = cost.to_vec();
        for (r, &bv) in self.basis.iter().enumerate() {
            let cb = cost[bv];
            if cb == 0.0 {
                continue;
            }
            for (c, v) in rc.iter_mut().enumerate() {
                *v -= cb * self.at(r, c);
            }
        }
        rc
    }

    fn objective(&self, cost: &[f64]) -> f64 {
        self.basis
            .iter()
            .zip(&self.rhs)
            .map(|(&bv, &v)| cost[bv] * v)
            .sum()
    }

    /// Bland's rule: lowest-index improving column enters, ratio ties broken
    /// by lowest basic variable index. Terminates on any degenerate problem.
    fn run_phase(
        &mut self,
        cost: &[f64],
        allowed: &[bool],
        phase: u8,
        max_pivots: usize,
    ) -> Result<PhaseEnd, LpError> {
        let scale = cost.iter().fold(1.0_f64, |acc, c| acc.max(c.abs()));
        for _ in 0..max_pivots {
            let rc = self.reduced_costs(cost);
            let entering = (0..self.cols).find(|&c| allowed[c] && rc[c] < -OPT_TOL * scale);
            let Some(pc) = entering else {
                return Ok(PhaseEnd::Optimal);
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                let coef = self.at(r, pc);
                if coef <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.rhs[r].max(0.0) / coef;
                leave = match leave {
                    None => Some((r, ratio)),
                    Some((lr, lratio)) => {
                        let tie = (ratio - lratio).abs() <= PIVOT_TOL * (1.0 + lratio.abs());
                        if ratio < lratio && !tie
                            || tie && self.basis[r] < self.basis[lr]
                        {
                            Some((r, ratio))
                        } else {
                            Some((lr, lratio))
                        }
                    }
                };
            }
            match leave {
                None => return Ok(PhaseEnd::Unbounded),
                Some((pr, _)) => self.pivot(pr, pc),
            }
        }
        Err(LpError::PivotLimit {
            pivots: max_pivots,
            phase,
        })
    }
}

/// Solves `min ⟨c, x⟩ s.t. A x <= b` over free `x`.
///
/// Returns an optimal vertex when one exists. Infeasibility and unboundedness
/// are reported through [`LpStatus`], not as errors; only a pivot-count stall
/// is an error.
pub fn solve(p: &LpProblem) -> Result<LpSolution, LpError> {
    let d = p.dim();
    let m = p.a.nrows();
    if p.a.ncols() != d || p.b.len() != m {
        return Err(LpError::DimensionMismatch(format!(
            "A is {}x{}, c has {d} entries, b has {}",
            m,
            p.a.ncols(),
            p.b.len()
        )));
    }
    if m == 0 {
        let unbounded = p.c.iter().any(|&v| v != 0.0);
        return Ok(LpSolution {
            point: DVector::zeros(d),
            value: 0.0,
            status: if unbounded {
                LpStatus::Unbounded
            } else {
                LpStatus::Optimal
            },
            active_set: Vec::new(),
        });
    }

    // Columns: x⁺ (d) | x⁻ (d) | slack (m) | artificial (one per negative-rhs row).
    let neg_rows: Vec<usize> = (0..m).filter(|&i| p.b[i] < 0.0).collect();
    let n_art = neg_rows.len();
    let slack0 = 2 * d;
    let art0 = slack0 + m;
    let cols = art0 + n_art;
    let mut tab = Tableau {
        rows: m,
        cols,
        t: vec![0.0; m * cols],
        rhs: vec![0.0; m],
        basis: vec![0; m],
    };
    let mut art_of_row = vec![None; m];
    for (k, &i) in neg_rows.iter().enumerate() {
        art_of_row[i] = Some(art0 + k);
    }
    for i in 0..m {
        let sign = if p.b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..d {
            tab.t[i * cols + j] = sign * p.a[(i, j)];
            tab.t[i * cols + d + j] = -sign * p.a[(i, j)];
        }
        tab.t[i * cols + slack0 + i] = sign;
        tab.rhs[i] = sign * p.b[i];
        match art_of_row[i] {
            Some(ac) => {
                tab.t[i * cols + ac] = 1.0;
                tab.basis[i] = ac;
            }
            None => tab.basis[i] = slack0 + i,
        }
    }

    let max_pivots = 50 * (m + cols) + 1000;
    let scale_b = p.b.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));

    if n_art > 0 {
        let mut cost1 = vec![0.0; cols];
        for c in cost1.iter_mut().skip(art0) {
            *c = 1.0;
        }
        let allowed = vec![true; cols];
        tab.run_phase(&cost1, &allowed, 1, max_pivots)?;
        if tab.objective(&cost1) > FEAS_TOL * scale_b {
            return Ok(LpSolution {
                point: DVector::zeros(d),
                value: f64::NAN,
                status: LpStatus::Infeasible,
                active_set: Vec::new(),
            });
        }
        // Drive zero-level artificials out of the basis where possible.
        for r in 0..m {
            if tab.basis[r] < art0 {
                continue;
            }
            if let Some(pc) = (0..art0).find(|&c| tab.at(r, c).abs() > 1e-9) {
                tab.pivot(r, pc);
            }
        }
    }

    let mut cost2 = vec![0.0; cols];
    for j in 0..d {
        cost2[j] = p.c[j];
        cost2[d + j] = -p.c[j];
    }
    let mut allowed = vec![true; cols];
    for a in allowed.iter_mut().skip(art0) {
        *a = false;
    }
    let end = tab.run_phase(&cost2, &allowed, 2, max_pivots)?;

    let mut point = DVector::zeros(d);
    for (r, &bv) in tab.basis.iter().enumerate() {
        if bv < d {
            point[bv] += tab.rhs[r];
        } else if bv < 2 * d {
            point[bv - d] -= tab.rhs[r];
        }
    }
    let status = match end {
        PhaseEnd::Optimal => LpStatus::Optimal,
        PhaseEnd::Unbounded => LpStatus::Unbounded,
    };
    let value = match status {
        LpStatus::Unbounded => f64::NEG_INFINITY,
        _ => p.c.dot(&point),
    };
    let active_set = active_constraints(&p.a, &p.b, &point);
    Ok(LpSolution {
        point,
        value,
        status,
        active_set,
    })
}

/// A vertex of `{x : Ax <= b}` together with every `d`-subset of constraints
/// that defines it.
#[derive(Debug, Clone)]
pub struct EnumeratedVertex {
    pub point: DVector<f64>,
    pub active_sets: Vec<Vec<usize>>,
    /// Smallest singular value over the defining submatrices `A^B`.
    pub rho_min: f64,
}

/// `n choose k`, saturating at `u64::MAX`.
pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

/// Enumerates every vertex by solving all `d`-subsets of constraints, with a
/// cap on the number of subsets examined.
pub fn enumerate_vertices_capped(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    subset_cap: u64,
) -> Result<Vec<EnumeratedVertex>, LpError> {
    let (m, d) = (a.nrows(), a.ncols());
    if b.len() != m {
        return Err(LpError::DimensionMismatch(format!(
            "A has {m} rows, b has {}",
            b.len()
        )));
    }
    let subsets = binomial(m, d);
    if subsets > subset_cap {
        return Err(LpError::EnumerationCap {
            rows: m,
            dim: d,
            detail: format!("{subsets} subsets > cap {subset_cap}"),
        });
    }
    let mut out: Vec<EnumeratedVertex> = Vec::new();
    for subset in (0..m).combinations(d) {
        let sub_a = a.select_rows(subset.iter());
        let sub_b = b.select_rows(subset.iter());
        let sv = sub_a.clone().svd(false, false).singular_values;
        let smax = sv.max();
        let smin = sv.min();
        if smax == 0.0 || smin <= 1e-12 * smax {
            continue;
        }
        let Some(x) = sub_a.lu().solve(&sub_b) else {
            continue;
        };
        let ax = a * &x;
        let feasible = (0..m).all(|i| ax[i] <= b[i] + FEAS_TOL * (1.0 + b[i].abs()));
        if !feasible {
            continue;
        }
        match out
            .iter_mut()
            .find(|v| (&v.point - &x).amax() <= FEAS_TOL * (1.0 + x.amax()))
        {
            Some(v) => {
                v.active_sets.push(subset);
                v.rho_min = v.rho_min.min(smin);
            }
            None => out.push(EnumeratedVertex {
                point: x,
                active_sets: vec![subset],
                rho_min: smin,
            }),
        }
    }
    Ok(out)
}

/// All vertices of the feasible region of `p`, deduplicated at 1e-9.
///
/// Limited to `m <= 16`, `d <= 6`; this is a test oracle, not a solver.
pub fn enumerate_vertices(p: &LpProblem) -> Result<Vec<DVector<f64>>, LpError> {
    let (m, d) = (p.a.nrows(), p.a.ncols());
    if m > MAX_ENUM_CONSTRAINTS || d > MAX_ENUM_DIM {
        return Err(LpError::EnumerationCap {
            rows: m,
            dim: d,
            detail: format!("limits are m <= {MAX_ENUM_CONSTRAINTS}, d <= {MAX_ENUM_DIM}"),
        });
    }
    Ok(enumerate_vertices_capped(&p.a, &p.b, u64::MAX)?
        .into_iter()
        .map(|v| v.point)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box(d: usize) -> (DMatrix<f64>, DVector<f64>) {
        let mut a = DMatrix::zeros(2 * d, d);
        for i in 0..d {
            a[(i, i)] = 1.0;
            a[(d + i, i)] = -1.0;
        }
        (a, DVector::from_element(2 * d, 1.0))
    }

    #[test]
    fn box_dfs_picks_corner() {
        let (a, b) = unit_box(2);
        let p = LpProblem::new(DVector::from_vec(vec![-2.0, -0.5]), a, b).unwrap();
        let sol = solve(&p).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.point[0] - 1.0).abs() < 1e-12);
        assert!((sol.point[1] - 1.0).abs() < 1e-12);
        assert!((sol.value + 2.5).abs() < 1e-12);
        assert_eq!(sol.active_set, vec![0, 1]);
    }

    #[test]
    fn zero_objective_returns_a_vertex() {
        let (a, b) = unit_box(2);
        let p = LpProblem::new(DVector::zeros(2), a.clone(), b.clone()).unwrap();
        let sol = solve(&p).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert_eq!(sol.value, 0.0);
        assert!((&a * &sol.point - &b).max() <= FEAS_TOL);
    }

    #[test]
    fn contradictory_bounds_are_infeasible() {
        // x <= -1 and -x <= -1
        let a = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let b = DVector::from_vec(vec![-1.0, -1.0]);
        let p = LpProblem::new(DVector::from_vec(vec![1.0]), a, b).unwrap();
        assert_eq!(solve(&p).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn half_space_is_unbounded() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let b = DVector::from_vec(vec![1.0]);
        let p = LpProblem::new(DVector::from_vec(vec![0.0, 1.0]), a, b).unwrap();
        assert_eq!(solve(&p).unwrap().status, LpStatus::Unbounded);
        let guarded = p.with_box_guard(5.0);
        let sol = solve(&guarded).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.point[1] + 5.0).abs() < 1e-12);
    }

    #[test]
    fn negative_rhs_needs_phase_one() {
        // 1 <= x <= 2, 1 <= y <= 3, minimize x + y
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]);
        let b = DVector::from_vec(vec![2.0, -1.0, 3.0, -1.0]);
        let p = LpProblem::new(DVector::from_vec(vec![1.0, 1.0]), a, b).unwrap();
        let sol = solve(&p).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_vertex_terminates() {
        // Pyramid apex where four facets meet in 3D.
        let a = DMatrix::from_row_slice(
            5,
            3,
            &[
                1.0, 0.0, 1.0, -1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, -1.0, 1.0, 0.0, 0.0, -1.0,
            ],
        );
        let b = DVector::from_vec(vec![1.0, 1.0, 1.0, 1.0, 0.0]);
        let p = LpProblem::new(DVector::from_vec(vec![0.0, 0.0, -1.0]), a, b).unwrap();
        let sol = solve(&p).unwrap();
        assert!((sol.value + 1.0).abs() < 1e-12);
        assert_eq!(sol.active_set.len(), 4);
    }

    #[test]
    fn box_vertices() {
        let (a, b) = unit_box(2);
        let p = LpProblem::new(DVector::zeros(2), a, b).unwrap();
        let v = enumerate_vertices(&p).unwrap();
        assert_eq!(v.len(), 4);
        for x in &v {
            assert!((x[0].abs() - 1.0).abs() < 1e-12 && (x[1].abs() - 1.0).abs() < 1e-12);
        }
        let (a3, b3) = unit_box(3);
        let p3 = LpProblem::new(DVector::zeros(3), a3, b3).unwrap();
        assert_eq!(enumerate_vertices(&p3).unwrap().len(), 8);
    }

    #[test]
    fn enumeration_cap() {
        let (a, b) = unit_box(9);
        let p = LpProblem::new(DVector::zeros(9), a, b).unwrap();
        assert!(matches!(
            enumerate_vertices(&p),
            Err(LpError::EnumerationCap { .. })
        ));
        let (a, b) = unit_box(4);
        assert!(enumerate_vertices_capped(&a, &b, 10).is_err());
    }

    #[test]
    fn binomial_values() {
        assert_eq!(binomial(20, 10), 184_756);
        assert_eq!(binomial(5, 0), 1);
        assert_eq!(binomial(3, 4), 0);
    }
}
