//! Online least-squares estimation of the constraint parameters.
//!
//! Each reading row `v = [x; −1]` with values `y ∈ R^m` updates the
//! normal-equation inverse `P = (X̄ᵀX̄)⁻¹` by the rank-one identity
//!
//! ```text
//! P ← P − (P v)(P v)ᵀ / (1 + vᵀ P v)
//! ```
//!
//! and the stacked estimates `β̂ = P X̄ᵀY` by the matching gain step, so an
//! absorb costs `O(d² + dm)`. Until the design spans `R^{d+1}` the estimate is
//! the minimum-norm least-squares solution from the accumulated Gram matrix.

mod radius;

pub use radius::{chi_squared_cdf, chi_squared_quantile, phi_inverse, ConfidenceMode};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

use crate::oracle::MeasurementBatch;

/// Rank-one denominators at or below this trigger a full rebuild.
const BREAKDOWN_TOL: f64 = 1e-12;
/// Relative eigenvalue threshold for declaring the design full rank.
const RANK_TOL: f64 = 1e-12;
/// Leverage `vᵀPv` above which the downdate cancels most of `P` along `v`;
/// `P` is refactored from the Gram matrix instead.
const LEVERAGE_REFRESH: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("design does not span R^(d+1) yet ({rows} rows absorbed)")]
    NotPositiveDefinite { rows: usize },
    #[error("centered scatter of probe points is singular")]
    SingularScatter,
    #[error("rank-one update broke down (denominator {0:e})")]
    Breakdown(f64),
    #[error("invalid confidence radius input: {0}")]
    Radius(String),
}

#[derive(Debug, Clone)]
pub struct EstimatorState {
    d: usize,
    m: usize,
    /// `X̄ᵀX̄`, kept for rank detection, rebuilds and membership tests.
    gram: DMatrix<f64>,
    /// `(X̄ᵀX̄)⁻¹`, present once the design spans `R^{d+1}`.
    precision: Option<DMatrix<f64>>,
    /// `X̄ᵀY`.
    cross: DMatrix<f64>,
    beta_hat: DMatrix<f64>,
    n: usize,
    sum_x: DVector<f64>,
    sum_outer: DMatrix<f64>,
    points: Vec<DVector<f64>>,
    values: Vec<DVector<f64>>,
    rebuilds: usize,
    refactors: usize,
}

impl EstimatorState {
    pub fn new(d: usize, m: usize) -> Self {
        Self {
            d,
            m,
            gram: DMatrix::zeros(d + 1, d + 1),
            precision: None,
            cross: DMatrix::zeros(d + 1, m),
            beta_hat: DMatrix::zeros(d + 1, m),
            n: 0,
            sum_x: DVector::zeros(d),
            sum_outer: DMatrix::zeros(d, d),
            points: Vec::new(),
            values: Vec::new(),
            rebuilds: 0,
            refactors: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n_constraints(&self) -> usize {
        self.m
    }

    /// Rows absorbed so far (`N_t`).
    pub fn count(&self) -> usize {
        self.n
    }

    pub fn is_spanning(&self) -> bool {
        self.precision.is_some()
    }

    /// Times the precision matrix was rebuilt after a numerical breakdown.
    pub fn rebuilds(&self) -> usize {
        self.rebuilds
    }

    /// Times `P` was refactored from the Gram matrix after a high-leverage row.
    pub fn refactors(&self) -> usize {
        self.refactors
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn precision(&self) -> Result<&DMatrix<f64>, EstimatorError> {
        self.precision
            .as_ref()
            .ok_or(EstimatorError::NotPositiveDefinite { rows: self.n })
    }

    pub fn cross_moment(&self) -> &DMatrix<f64> {
        &self.cross
    }

    /// Column `i` is `β̂^i = [â^i; b̂^i]`.
    pub fn beta_hat(&self) -> &DMatrix<f64> {
        &self.beta_hat
    }

    /// Estimated constraint matrix, `m × d`.
    pub fn a_hat(&self) -> DMatrix<f64> {
        self.beta_hat.rows(0, self.d).transpose()
    }

    pub fn b_hat(&self) -> DVector<f64> {
        self.beta_hat.row(self.d).transpose()
    }

    /// Sample mean of the probe points, `x̄`.
    pub fn mean(&self) -> DVector<f64> {
        if self.n == 0 {
            DVector::zeros(self.d)
        } else {
            &self.sum_x / self.n as f64
        }
    }

    pub fn sum_outer(&self) -> &DMatrix<f64> {
        &self.sum_outer
    }

    /// Stored probe points in absorption order.
    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    fn extended(&self, point: &DVector<f64>) -> DVector<f64> {
        let mut v = DVector::zeros(self.d + 1);
        v.rows_mut(0, self.d).copy_from(point);
        v[self.d] = -1.0;
        v
    }

    pub fn absorb(&mut self, point: &DVector<f64>, values: &DVector<f64>) -> Result<(), EstimatorError> {
        if point.len() != self.d || values.len() != self.m {
            return Err(EstimatorError::DimensionMismatch(format!(
                "point has {} entries (expected {}), values has {} (expected {})",
                point.len(),
                self.d,
                values.len(),
                self.m
            )));
        }
        let v = self.extended(point);
        self.gram.ger(1.0, &v, &v, 1.0);
        self.cross.ger(1.0, &v, values, 1.0);
        self.n += 1;
        self.sum_x += point;
        self.sum_outer.ger(1.0, point, point, 1.0);
        self.points.push(point.clone());
        self.values.push(values.clone());

        match self.precision.as_mut() {
            Some(p) => {
                let pv = &*p * &v;
                let denom = 1.0 + v.dot(&pv);
                if !(denom > BREAKDOWN_TOL) {
                    log::warn!("rank-one breakdown (denominator {denom:e}); rebuilding");
                    self.rebuild()?;
                    return Ok(());
                }
                if denom - 1.0 > LEVERAGE_REFRESH {
                    self.refactor();
                    return Ok(());
                }
                // gain uses the pre-update P
                let residual = values.transpose() - v.transpose() * &self.beta_hat;
                self.beta_hat.ger(1.0 / denom, &pv, &residual.transpose(), 1.0);
                p.ger(-1.0 / denom, &pv, &pv, 1.0);
            }
            None => self.refresh_pre_span(),
        }
        Ok(())
    }

    pub fn absorb_batch(&mut self, batch: &MeasurementBatch) -> Result<(), EstimatorError> {
        for r in 0..batch.len() {
            self.absorb(
                &batch.points.row(r).transpose(),
                &batch.values.row(r).transpose(),
            )?;
        }
        Ok(())
    }

    fn refactor(&mut self) {
        self.refactors += 1;
        self.precision = None;
        self.refresh_pre_span();
    }

    fn refresh_pre_span(&mut self) {
        let eig = SymmetricEigen::new(self.gram.clone());
        let lmax = eig.eigenvalues.max();
        let lmin = eig.eigenvalues.min();
        let tol = RANK_TOL * lmax.max(1.0);
        if lmin > tol {
            if let Some(chol) = self.gram.clone().cholesky() {
                let p = chol.inverse();
                self.beta_hat = &p * &self.cross;
                self.precision = Some(p);
                return;
            }
        }
        // minimum-norm solution through the pseudo-inverse of the Gram matrix
        let mut inv = DMatrix::zeros(self.d + 1, self.d + 1);
        for (k, &lam) in eig.eigenvalues.iter().enumerate() {
            if lam > tol {
                let q = eig.eigenvectors.column(k);
                inv.ger(1.0 / lam, &q, &q, 1.0);
            }
        }
        self.beta_hat = inv * &self.cross;
    }

    /// Recomputes the Gram matrix, `P` and `β̂` from the stored rows.
    pub fn rebuild(&mut self) -> Result<(), EstimatorError> {
        self.rebuilds += 1;
        let mut gram = DMatrix::zeros(self.d + 1, self.d + 1);
        let mut cross = DMatrix::zeros(self.d + 1, self.m);
        for (x, y) in self.points.iter().zip(&self.values) {
            let v = self.extended(x);
            gram.ger(1.0, &v, &v, 1.0);
            cross.ger(1.0, &v, y, 1.0);
        }
        self.gram = gram;
        self.cross = cross;
        self.precision = None;
        self.refresh_pre_span();
        Ok(())
    }

    /// `‖Σ_t^{1/2}‖ = σ · sqrt(λ_max(P))`.
    pub fn covariance_sqrt_norm(&self, sigma: f64) -> Result<f64, EstimatorError> {
        let p = self.precision()?;
        let lmax = SymmetricEigen::new(p.clone()).eigenvalues.max();
        Ok(sigma * lmax.max(0.0).sqrt())
    }

    /// Returns `(x̄, R)` with `R = (Σ_j (x_j − x̄)(x_j − x̄)ᵀ)⁻¹`.
    pub fn block_quantities(&self) -> Result<(DVector<f64>, DMatrix<f64>), EstimatorError> {
        if self.n == 0 {
            return Err(EstimatorError::SingularScatter);
        }
        let xbar = self.mean();
        let mut scatter = self.sum_outer.clone();
        scatter.ger(-(self.n as f64), &xbar, &xbar, 1.0);
        scatter = (&scatter + scatter.transpose()) * 0.5;
        let scale = scatter.diagonal().amax();
        let eig_min = SymmetricEigen::new(scatter.clone()).eigenvalues.min();
        if !(scale > 0.0) || eig_min <= 1e-13 * scale {
            return Err(EstimatorError::SingularScatter);
        }
        let r = scatter
            .cholesky()
            .ok_or(EstimatorError::SingularScatter)?
            .inverse();
        Ok((xbar, r))
    }
}

/// Block form of `(X̄ᵀX̄)⁻¹` from `(R, x̄, N)`:
/// `[R, R x̄; x̄ᵀR, 1/N + x̄ᵀ R x̄]`.
pub fn precision_from_blocks(r: &DMatrix<f64>, xbar: &DVector<f64>, n: usize) -> DMatrix<f64> {
    let d = xbar.len();
    let rx = r * xbar;
    let mut out = DMatrix::zeros(d + 1, d + 1);
    out.view_mut((0, 0), (d, d)).copy_from(r);
    out.view_mut((0, d), (d, 1)).copy_from(&rx);
    out.view_mut((d, 0), (1, d)).copy_from(&rx.transpose());
    out[(d, d)] = 1.0 / n as f64 + xbar.dot(&rx);
    out
}

/// Upper bound `σ √d · sqrt((Γ₀² + 1)/ω₀² + 1) / √N` on `‖Σ_t^{1/2}‖` for
/// cross-pattern designs.
pub fn covariance_sqrt_norm_bound(sigma: f64, d: usize, gamma0: f64, omega0: f64, n: usize) -> f64 {
    sigma * (d as f64).sqrt() * ((gamma0 * gamma0 + 1.0) / (omega0 * omega0) + 1.0).sqrt()
        / (n as f64).sqrt()
}

/// Per-constraint test `(β̂^i − β^i)ᵀ (σ²P)⁻¹ (β̂^i − β^i) <= φ²`.
///
/// Diagnostic only: it needs the true parameters.
pub fn confidence_membership(
    state: &EstimatorState,
    sigma: f64,
    phi: f64,
    beta_true: &DMatrix<f64>,
) -> Result<Vec<bool>, EstimatorError> {
    state.precision()?;
    if beta_true.shape() != state.beta_hat.shape() {
        return Err(EstimatorError::DimensionMismatch(format!(
            "beta_true is {:?}, estimate is {:?}",
            beta_true.shape(),
            state.beta_hat.shape()
        )));
    }
    let bound = phi * phi * sigma * sigma;
    Ok((0..state.m)
        .map(|i| {
            let diff = state.beta_hat.column(i) - beta_true.column(i);
            let q = (diff.transpose() * &state.gram * &diff)[(0, 0)];
            q <= bound
        })
        .collect())
}
