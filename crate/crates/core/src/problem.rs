//! Ground-truth problem data: the polytope `D = {x : Ax <= b}`, the smooth
//! convex objective, and the geometric constants derived from them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{self, LpError, LpProblem, LpStatus};

/// Default cap on the number of `d`-subsets examined when enumerating vertices.
pub const DEFAULT_SUBSET_CAP: u64 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("constraint row {0} is identically zero")]
    ZeroRow(usize),
    #[error("non-finite entry in problem data")]
    NonFinite,
    #[error("feasible set is unbounded")]
    Unbounded,
    #[error("starting point is not strictly feasible (min slack {0:e})")]
    NotStrictlyFeasible(f64),
    #[error(
        "vertex enumeration too large ({0}); supply analytic geometry overrides \
         (rho_min, gamma, gamma0, lipschitz) instead"
    )]
    EnumerationTooLarge(String),
    #[error(transparent)]
    Lp(#[from] LpError),
}

/// A polytope `{x ∈ R^d : Ax <= b}` with `m` constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct Polytope {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl Polytope {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self, ProblemError> {
        if a.nrows() != b.len() {
            return Err(ProblemError::DimensionMismatch(format!(
                "A has {} rows but b has {} entries",
                a.nrows(),
                b.len()
            )));
        }
        if a.ncols() == 0 {
            return Err(ProblemError::DimensionMismatch("A has no columns".into()));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(ProblemError::NonFinite);
        }
        if let Some(i) = (0..a.nrows()).find(|&i| a.row(i).iter().all(|&v| v == 0.0)) {
            return Err(ProblemError::ZeroRow(i));
        }
        Ok(Self { a, b })
    }

    /// Builds a polytope from row-major nested vectors.
    pub fn from_rows(rows: &[Vec<f64>], b: &[f64]) -> Result<Self, ProblemError> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(ProblemError::DimensionMismatch(
                "ragged constraint matrix".into(),
            ));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(
            DMatrix::from_row_slice(rows.len(), d, &flat),
            DVector::from_column_slice(b),
        )
    }

    /// The box `-h <= x^i <= h`, rows ordered `[I; -I]`.
    pub fn hypercube(d: usize, half_width: f64) -> Self {
        let mut a = DMatrix::zeros(2 * d, d);
        for i in 0..d {
            a[(i, i)] = 1.0;
            a[(d + i, i)] = -1.0;
        }
        Self {
            a,
            b: DVector::from_element(2 * d, half_width),
        }
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn n_constraints(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    /// Stacked parameters: column `i` is `β^i = [a^i; b^i]`, shape `(d+1) × m`.
    pub fn parameters(&self) -> DMatrix<f64> {
        let (m, d) = (self.n_constraints(), self.dim());
        let mut beta = DMatrix::zeros(d + 1, m);
        beta.rows_mut(0, d).copy_from(&self.a.transpose());
        beta.row_mut(d).copy_from(&self.b.transpose());
        beta
    }

    /// `b − A x`.
    pub fn slack(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.b - &self.a * x
    }

    /// `max_i (⟨a^i, x⟩ − b^i)`; non-positive iff `x ∈ D`.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        -self.slack(x).min()
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        self.max_violation(x) <= tol
    }

    /// Euclidean projection onto `D` by a dual active-set method (Goldfarb and
    /// Idnani with identity Hessian). Starts from `x` with no active
    /// constraints and adds the most violated one until `y` is feasible, so it
    /// terminates in finitely many steps without needing a feasible start.
    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        let tol = 1e-13 * (1.0 + self.b.amax());
        if self.contains(x, tol) {
            return x.clone();
        }
        let d = self.dim();
        let mut y = x.clone();
        let mut active: Vec<usize> = Vec::new();
        let mut u: Vec<f64> = Vec::new();
        for _ in 0..100 * (self.n_constraints() + d) {
            let slack = self.slack(&y);
            let (p, worst) = slack
                .iter()
                .enumerate()
                .map(|(i, s)| (i, -s))
                .fold((0, f64::NEG_INFINITY), |acc, c| if c.1 > acc.1 { c } else { acc });
            if worst <= tol {
                return y;
            }
            let ap = self.a.row(p).transpose();
            let mut up = 0.0;
            // Inner loop: move along the new constraint, dropping blockers.
            loop {
                let n = DMatrix::from_fn(active.len(), d, |r, c| self.a[(active[r], c)]);
                let r = if active.is_empty() {
                    DVector::zeros(0)
                } else {
                    match (&n * n.transpose()).lu().solve(&(&n * &ap)) {
                        Some(r) => r,
                        None => return y,
                    }
                };
                let z = &ap - n.transpose() * &r;
                let zz = z.dot(&ap);
                let excess = ap.dot(&y) - self.b[p];
                let full = if zz > 1e-14 * ap.norm_squared() { excess / zz } else { f64::INFINITY };
                let (partial, blocker) = r
                    .iter()
                    .enumerate()
                    .filter(|(_, rj)| **rj > 0.0)
                    .map(|(j, rj)| (u[j] / rj, j))
                    .fold((f64::INFINITY, usize::MAX), |acc, c| if c.0 < acc.0 { c } else { acc });
                let t = full.min(partial);
                if !t.is_finite() {
                    log::warn!("projection: constraints are inconsistent");
                    return y;
                }
                y -= &z * t;
                for (uj, rj) in u.iter_mut().zip(r.iter()) {
                    *uj -= t * rj;
                }
                up += t;
                if full <= partial {
                    active.push(p);
                    u.push(up);
                    break;
                }
                active.remove(blocker);
                u.remove(blocker);
            }
        }
        y
    }

    /// Euclidean distance from `x` to `D`.
    pub fn distance(&self, x: &DVector<f64>) -> f64 {
        if self.contains(x, 0.0) {
            0.0
        } else {
            (self.project(x) - x).norm()
        }
    }
}

/// A smooth convex objective with exact first-order access.
pub trait Objective: Send + Sync {
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    /// Lipschitz constant `L` of the gradient.
    fn smoothness(&self) -> f64;
    /// Lipschitz constant `M` of `f` over the polytope with the given vertices.
    fn lipschitz(&self, vertices: &[DVector<f64>]) -> f64;
    /// Exact minimizer over `p` when it has a closed form or cheap solver.
    fn minimizer(&self, _p: &Polytope) -> Option<DVector<f64>> {
        None
    }
}

/// `f(x) = ½‖x − x′‖²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quadratic {
    pub target: Vec<f64>,
}

impl Quadratic {
    pub fn new(target: DVector<f64>) -> Self {
        Self {
            target: target.iter().copied().collect(),
        }
    }

    /// `x′ = [2, 0.5, …, 0.5]`.
    pub fn benchmark(d: usize) -> Self {
        let mut t = vec![0.5; d];
        if d > 0 {
            t[0] = 2.0;
        }
        Self { target: t }
    }

    fn target_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.target)
    }
}

impl Objective for Quadratic {
    fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * (x - self.target_vec()).norm_squared()
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        x - self.target_vec()
    }

    fn smoothness(&self) -> f64 {
        1.0
    }

    /// `‖∇f‖ = ‖x − x′‖` is convex, so its max over `D` sits at a vertex.
    fn lipschitz(&self, vertices: &[DVector<f64>]) -> f64 {
        let t = self.target_vec();
        vertices
            .iter()
            .map(|v| (v - &t).norm())
            .fold(0.0, f64::max)
    }

    fn minimizer(&self, p: &Polytope) -> Option<DVector<f64>> {
        Some(p.project(&self.target_vec()))
    }
}

/// Max relative error between `∇f` and a central finite difference at `x`.
pub fn gradient_check(obj: &dyn Objective, x: &DVector<f64>, step: f64) -> f64 {
    let g = obj.gradient(x);
    let mut worst = 0.0_f64;
    for i in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += step;
        xm[i] -= step;
        let fd = (obj.value(&xp) - obj.value(&xm)) / (2.0 * step);
        worst = worst.max((fd - g[i]).abs() / g[i].abs().max(1.0));
    }
    worst
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub feasible: bool,
    pub bounded: bool,
    /// Chebyshev-style centre with positive margin, if the interior is non-empty.
    pub interior_point: Option<Vec<f64>>,
    /// Largest achievable normalized margin `min_i (b^i − ⟨a^i,x⟩)/‖a^i‖`, capped at 1.
    pub interior_margin: f64,
}

/// Checks boundedness (by minimizing `±x^i`) and interiority (max-margin LP).
pub fn validate(p: &Polytope) -> Result<ValidationReport, ProblemError> {
    let d = p.dim();
    let m = p.n_constraints();

    // max t  s.t.  ⟨a^i, x⟩ + t‖a^i‖ <= b^i,  t <= 1.
    let mut a = DMatrix::zeros(m + 1, d + 1);
    let mut b = DVector::zeros(m + 1);
    for i in 0..m {
        for j in 0..d {
            a[(i, j)] = p.a[(i, j)];
        }
        a[(i, d)] = p.a.row(i).norm();
        b[i] = p.b[i];
    }
    a[(m, d)] = 1.0;
    b[m] = 1.0;
    let mut c = DVector::zeros(d + 1);
    c[d] = -1.0;
    let margin_sol = lp::solve(&LpProblem::new(c, a, b)?)?;
    if margin_sol.status == LpStatus::Infeasible {
        return Ok(ValidationReport {
            feasible: false,
            bounded: true,
            interior_point: None,
            interior_margin: f64::NEG_INFINITY,
        });
    }
    let margin = margin_sol.point[d];
    if margin < -lp::FEAS_TOL {
        return Ok(ValidationReport {
            feasible: false,
            bounded: true,
            interior_point: None,
            interior_margin: margin,
        });
    }
    let interior_point =
        (margin > lp::FEAS_TOL).then(|| margin_sol.point.rows(0, d).iter().copied().collect());

    let mut bounded = true;
    'outer: for i in 0..d {
        for sign in [1.0, -1.0] {
            let mut c = DVector::zeros(d);
            c[i] = sign;
            let sol = lp::solve(&LpProblem::new(c, p.a.clone(), p.b.clone())?)?;
            if sol.status == LpStatus::Unbounded {
                bounded = false;
                break 'outer;
            }
        }
    }
    Ok(ValidationReport {
        feasible: true,
        bounded,
        interior_point,
        interior_margin: margin,
    })
}

/// Constants consumed by the measurement schedule and the error bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryConstants {
    /// Diameter of `D`.
    pub gamma: f64,
    /// `max_{x∈D} ‖x‖`.
    pub gamma0: f64,
    /// `min_i (b^i − ⟨a^i, x₀⟩)`.
    pub eps0: f64,
    /// `max_i ‖a^i‖`.
    pub l_a: f64,
    /// Min over vertex active sets of the smallest singular value of `A^B`.
    pub rho_min: f64,
    /// `L · Γ²`, an upper bound on the curvature constant.
    pub cf_bound: f64,
    /// Lipschitz constant `M` of the objective over `D`.
    pub lipschitz: f64,
}

/// Analytic replacements for the enumeration-based constants.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GeometryOverrides {
    pub rho_min: Option<f64>,
    pub gamma: Option<f64>,
    pub gamma0: Option<f64>,
    pub lipschitz: Option<f64>,
}

impl GeometryOverrides {
    fn complete(&self) -> bool {
        self.rho_min.is_some()
            && self.gamma.is_some()
            && self.gamma0.is_some()
            && self.lipschitz.is_some()
    }

    /// Exact values for the box `[-h, h]^d` with the quadratic `½‖x − x′‖²`.
    pub fn hypercube_quadratic(d: usize, half_width: f64, target: &[f64]) -> Self {
        let far2: f64 = target
            .iter()
            .map(|&t| (half_width + t.abs()).powi(2))
            .sum();
        Self {
            rho_min: Some(1.0),
            gamma: Some(2.0 * half_width * (d as f64).sqrt()),
            gamma0: Some(half_width * (d as f64).sqrt()),
            lipschitz: Some(far2.sqrt()),
        }
    }
}

pub fn geometry_constants(
    p: &Polytope,
    obj: &dyn Objective,
    x0: &DVector<f64>,
    overrides: &GeometryOverrides,
    subset_cap: u64,
) -> Result<GeometryConstants, ProblemError> {
    if x0.len() != p.dim() {
        return Err(ProblemError::DimensionMismatch(format!(
            "x0 has {} entries, polytope dimension is {}",
            x0.len(),
            p.dim()
        )));
    }
    let slack = p.slack(x0);
    let eps0 = slack.min();
    if eps0 <= 0.0 {
        return Err(ProblemError::NotStrictlyFeasible(eps0));
    }
    let l_a = (0..p.n_constraints())
        .map(|i| p.a.row(i).norm())
        .fold(0.0, f64::max);

    let (gamma, gamma0, rho_min, lipschitz) = if overrides.complete() {
        (
            overrides.gamma.unwrap(),
            overrides.gamma0.unwrap(),
            overrides.rho_min.unwrap(),
            overrides.lipschitz.unwrap(),
        )
    } else {
        let verts = match lp::enumerate_vertices_capped(&p.a, &p.b, subset_cap) {
            Ok(v) => v,
            Err(LpError::EnumerationCap { detail, .. }) => {
                return Err(ProblemError::EnumerationTooLarge(detail))
            }
            Err(e) => return Err(e.into()),
        };
        if verts.is_empty() {
            return Err(ProblemError::Unbounded);
        }
        let points: Vec<DVector<f64>> = verts.iter().map(|v| v.point.clone()).collect();
        let mut gamma = 0.0_f64;
        for (i, u) in points.iter().enumerate() {
            for w in &points[i + 1..] {
                gamma = gamma.max((u - w).norm());
            }
        }
        let gamma0 = points.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let rho = verts.iter().map(|v| v.rho_min).fold(f64::INFINITY, f64::min);
        (
            overrides.gamma.unwrap_or(gamma),
            overrides.gamma0.unwrap_or(gamma0),
            overrides.rho_min.unwrap_or(rho),
            overrides.lipschitz.unwrap_or_else(|| obj.lipschitz(&points)),
        )
    };

    Ok(GeometryConstants {
        gamma,
        gamma0,
        eps0,
        l_a,
        rho_min,
        cf_bound: obj.smoothness() * gamma * gamma,
        lipschitz,
    })
}
