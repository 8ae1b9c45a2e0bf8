//! Safety-set membership and the measurement schedule.
//!
//! A point `x` is in the safety set when every constraint holds for every
//! parameter in the per-constraint confidence ellipsoids. With
//! `ε^i = b̂^i − ⟨â^i, x⟩` this reduces to the scalar test
//!
//! ```text
//! φ_δ̄ · sqrt(1/N + (x − x̄)ᵀ R (x − x̄)) <= min_i ε^i
//! ```
//!
//! or equivalently to `−ε^i + φ_δ̄ ‖Lᵀ[x; −1]‖ <= 0` for all `i`, where
//! `P = L Lᵀ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{phi_inverse, ConfidenceMode, EstimatorError, EstimatorState};
use crate::problem::GeometryConstants;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SafetyError {
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error("horizon T = {0} is too short; the schedule bound needs T >= 3")]
    HorizonTooShort(usize),
    #[error("the schedule bound needs a fixed phi_delta; the sub-Gaussian radius depends on N")]
    PhiNotFixed,
    #[error("invalid safety configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    Prescribed,
    #[default]
    Adaptive,
}

/// Source of the scaled radius `φ_δ̄ = σ φ⁻¹(δ̄/m)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhiDelta {
    Fixed(f64),
    /// Recomputed from the current `N` on every check.
    SubGaussian { sigma: f64, m: usize },
}

/// `σ · φ⁻¹(δ̄/m)`.
pub fn phi_delta(
    mode: ConfidenceMode,
    sigma: f64,
    n: usize,
    d: usize,
    m: usize,
    delta_bar: f64,
) -> Result<f64, SafetyError> {
    if m == 0 {
        return Err(SafetyError::Invalid("no constraints".into()));
    }
    Ok(sigma * phi_inverse(mode, n, d, delta_bar / m as f64)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SafetyConfig {
    pub delta: f64,
    pub horizon: usize,
    /// `δ / T`.
    pub delta_bar: f64,
    pub omega0: f64,
    pub phi: PhiDelta,
    pub cn: f64,
    pub schedule: Schedule,
}

impl SafetyConfig {
    pub fn new(
        delta: f64,
        horizon: usize,
        omega0: f64,
        phi: PhiDelta,
        cn: f64,
        schedule: Schedule,
    ) -> Result<Self, SafetyError> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(SafetyError::Invalid(format!("delta must lie in (0, 1), got {delta}")));
        }
        if horizon == 0 {
            return Err(SafetyError::Invalid("horizon must be positive".into()));
        }
        if !(omega0 > 0.0 && omega0.is_finite()) {
            return Err(SafetyError::Invalid(format!("omega0 must be positive, got {omega0}")));
        }
        match phi {
            PhiDelta::Fixed(v) if !(v >= 0.0 && v.is_finite()) => {
                return Err(SafetyError::Invalid(format!("phi_delta must be finite and >= 0, got {v}")))
            }
            PhiDelta::SubGaussian { sigma, .. } if !(sigma >= 0.0) => {
                return Err(SafetyError::Invalid(format!("sigma must be >= 0, got {sigma}")))
            }
            _ => {}
        }
        if !(cn >= 0.0 && cn.is_finite()) {
            return Err(SafetyError::Invalid(format!("C_n must be finite and >= 0, got {cn}")));
        }
        Ok(Self {
            delta,
            horizon,
            delta_bar: delta / horizon as f64,
            omega0,
            phi,
            cn,
            schedule,
        })
    }

    /// `φ_δ̄` for a state holding `n` readings in dimension `d`.
    pub fn phi_at(&self, n: usize, d: usize) -> Result<f64, SafetyError> {
        match self.phi {
            PhiDelta::Fixed(v) => Ok(v),
            PhiDelta::SubGaussian { sigma, m } => {
                phi_delta(ConfidenceMode::SubGaussian, sigma, n, d, m, self.delta_bar)
            }
        }
    }

    pub fn fixed_phi(&self) -> Result<f64, SafetyError> {
        match self.phi {
            PhiDelta::Fixed(v) => Ok(v),
            PhiDelta::SubGaussian { .. } => Err(SafetyError::PhiNotFixed),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SafetyVerdict {
    pub safe: bool,
    pub lhs: f64,
    pub min_margin: f64,
    pub margins: DVector<f64>,
    pub binding_constraint: usize,
}

impl SafetyVerdict {
    fn from_parts(lhs: f64, margins: DVector<f64>) -> Self {
        let (binding_constraint, min_margin) = margins
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, e)| if e < acc.1 { (i, e) } else { acc });
        Self {
            safe: lhs <= min_margin,
            lhs,
            min_margin,
            margins,
            binding_constraint,
        }
    }

    /// `min_margin − lhs`; non-negative exactly when safe.
    pub fn slack(&self) -> f64 {
        self.min_margin - self.lhs
    }
}

/// `ε^i = b̂^i − ⟨â^i, x⟩`.
pub fn margins(state: &EstimatorState, x: &DVector<f64>) -> DVector<f64> {
    let d = state.dim();
    let beta = state.beta_hat();
    let mut out = DVector::zeros(state.n_constraints());
    for i in 0..out.len() {
        let col = beta.column(i);
        out[i] = col[d] - col.rows(0, d).dot(x);
    }
    out
}

fn check_len(state: &EstimatorState, x: &DVector<f64>) -> Result<(), SafetyError> {
    if x.len() != state.dim() {
        return Err(EstimatorError::DimensionMismatch(format!(
            "x has {} entries, estimator dimension is {}",
            x.len(),
            state.dim()
        ))
        .into());
    }
    Ok(())
}

/// Scalar test through the block quantities `(x̄, R)`.
pub fn fact2_check(state: &EstimatorState, cfg: &SafetyConfig, x: &DVector<f64>) -> Result<SafetyVerdict, SafetyError> {
    check_len(state, x)?;
    let (xbar, r) = state.block_quantities()?;
    let phi = cfg.phi_at(state.count(), state.dim())?;
    let diff = x - xbar;
    let quad = 1.0 / state.count() as f64 + (diff.transpose() * &r * &diff)[(0, 0)];
    let lhs = phi * quad.max(0.0).sqrt();
    Ok(SafetyVerdict::from_parts(lhs, margins(state, x)))
}

/// Lower Cholesky factor of `P`.
pub fn precision_factor(state: &EstimatorState) -> Result<DMatrix<f64>, SafetyError> {
    let p = state.precision()?;
    let sym = (p + p.transpose()) * 0.5;
    let chol = sym
        .cholesky()
        .ok_or(EstimatorError::NotPositiveDefinite { rows: state.count() })?;
    Ok(chol.l())
}

/// `‖Lᵀ[x; −1]‖`.
pub fn cone_norm(factor: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    let d = x.len();
    let mut v = DVector::zeros(d + 1);
    v.rows_mut(0, d).copy_from(x);
    v[d] = -1.0;
    (factor.transpose() * v).norm()
}

/// Per-constraint SOC values `−ε^i + φ ‖Lᵀ[x; −1]‖`; all `<= 0` when safe.
pub fn soc_values(state: &EstimatorState, factor: &DMatrix<f64>, phi: f64, x: &DVector<f64>) -> DVector<f64> {
    let cone = phi * cone_norm(factor, x);
    margins(state, x).map(|e| cone - e)
}

/// Cone-form test using the full factor of `P`.
pub fn soc_check(state: &EstimatorState, cfg: &SafetyConfig, x: &DVector<f64>) -> Result<SafetyVerdict, SafetyError> {
    check_len(state, x)?;
    let factor = precision_factor(state)?;
    let phi = cfg.phi_at(state.count(), state.dim())?;
    let lhs = phi * cone_norm(&factor, x);
    Ok(SafetyVerdict::from_parts(lhs, margins(state, x)))
}

/// `C_δ̄ = 2 φ_δ̄ d (Γ₀ + 1)/ρ_min · sqrt((Γ₀² + 1)/ω₀² + 1)`.
pub fn c_delta(geo: &GeometryConstants, phi: f64, d: usize, omega0: f64) -> f64 {
    let g0 = geo.gamma0;
    2.0 * phi * d as f64 * (g0 + 1.0) / geo.rho_min * ((g0 * g0 + 1.0) / (omega0 * omega0) + 1.0).sqrt()
}

/// `C_δ̄² · max{4 (ln ln T)² L_A² / ε₀², 1/(Γ₀ + 1)²}`.
pub fn cn_lower_bound(geo: &GeometryConstants, cfg: &SafetyConfig, d: usize, horizon: usize) -> Result<f64, SafetyError> {
    if horizon < 3 {
        return Err(SafetyError::HorizonTooShort(horizon));
    }
    let c = c_delta(geo, cfg.fixed_phi()?, d, cfg.omega0);
    let lnln = (horizon as f64).ln().ln();
    let first = 4.0 * lnln * lnln * geo.l_a * geo.l_a / (geo.eps0 * geo.eps0);
    let second = 1.0 / (geo.gamma0 + 1.0).powi(2);
    Ok(c * c * first.max(second))
}

/// `⌈4 C_n (t + 2) ln²(t + 2)⌉`.
pub fn nt_schedule(cn: f64, t: usize) -> usize {
    let s = (t + 2) as f64;
    let l = s.ln();
    (4.0 * cn * s * l * l).ceil() as usize
}

/// `M C_δ̄ / √N`, or `+∞` while `N < C_δ̄²/(Γ₀ + 1)²`.
pub fn et_bound(geo: &GeometryConstants, phi: f64, d: usize, omega0: f64, n: usize) -> f64 {
    let c = c_delta(geo, phi, d, omega0);
    if c == 0.0 {
        return 0.0;
    }
    let nf = n as f64;
    if nf < c * c / (geo.gamma0 + 1.0).powi(2) {
        return f64::INFINITY;
    }
    geo.lipschitz * c / nf.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{ConstraintOracle, NoiseKind, NoiseModel};
    use crate::problem::Polytope;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn exact_box_state(reps: usize) -> EstimatorState {
        let noise = NoiseModel { kind: NoiseKind::Gaussian, sigma: 0.0, seed: 0 };
        let mut o = ConstraintOracle::new(Polytope::hypercube(2, 1.0), noise, 0.01).unwrap();
        let mut s = EstimatorState::new(2, 4);
        s.absorb_batch(&o.cross_batch(&v(&[0.0, 0.0]), 4 * reps).unwrap())
            .unwrap();
        s
    }

    fn cfg(phi: f64) -> SafetyConfig {
        SafetyConfig::new(0.1, 15, 0.01, PhiDelta::Fixed(phi), 96.0, Schedule::Adaptive).unwrap()
    }

    fn box_geo() -> GeometryConstants {
        GeometryConstants {
            gamma: 2.0 * 2f64.sqrt(),
            gamma0: 2f64.sqrt(),
            eps0: 1.0,
            l_a: 1.0,
            rho_min: 1.0,
            cf_bound: 8.0,
            lipschitz: 11.25f64.sqrt(),
        }
    }

    #[test]
    fn margins_on_exact_box() {
        let s = exact_box_state(1);
        let e = margins(&s, &v(&[0.0, 0.0]));
        assert!((e - DVector::from_element(4, 1.0)).amax() < 1e-12);
        let on_facet = margins(&s, &v(&[1.0, 0.3]));
        assert!(on_facet[0].abs() < 1e-12);
        let (x, y, lam) = (v(&[0.2, -0.7]), v(&[-0.4, 0.9]), 0.3);
        let mix = margins(&s, &(&x * lam + &y * (1.0 - lam)));
        let lin = margins(&s, &x) * lam + margins(&s, &y) * (1.0 - lam);
        assert!((mix - lin).amax() < 1e-12);
    }

    #[test]
    fn zero_phi_is_polytope_membership() {
        let s = exact_box_state(1);
        for c in [fact2_check, soc_check] {
            assert!(c(&s, &cfg(0.0), &v(&[0.9, -0.9])).unwrap().safe);
            let out = c(&s, &cfg(0.0), &v(&[1.2, 0.0])).unwrap();
            assert!(!out.safe);
            assert_eq!(out.binding_constraint, 0);
        }
    }

    #[test]
    fn negative_margin_is_unsafe() {
        let s = exact_box_state(50);
        for c in [fact2_check, soc_check] {
            assert!(!c(&s, &cfg(1e-6), &v(&[-1.01, 0.0])).unwrap().safe);
        }
    }

    #[test]
    fn forms_agree() {
        let s = exact_box_state(3);
        for x in [[0.0, 0.0], [0.5, 0.5], [0.99, 0.0], [-0.3, 0.8]] {
            let a = fact2_check(&s, &cfg(0.04), &v(&x)).unwrap();
            let b = soc_check(&s, &cfg(0.04), &v(&x)).unwrap();
            assert!((a.lhs - b.lhs).abs() < 1e-9 * a.lhs.max(1.0));
            assert_eq!(a.safe, b.safe);
        }
    }

    #[test]
    fn lhs_shrinks_with_more_batches() {
        let noise = NoiseModel { kind: NoiseKind::Gaussian, sigma: 0.01, seed: 9 };
        let mut o = ConstraintOracle::new(Polytope::hypercube(2, 1.0), noise, 0.01).unwrap();
        let mut s = EstimatorState::new(2, 4);
        let c = v(&[0.1, -0.2]);
        let mut prev = f64::INFINITY;
        for _ in 0..6 {
            s.absorb_batch(&o.cross_batch(&c, 4).unwrap()).unwrap();
            let lhs = fact2_check(&s, &cfg(0.04), &c).unwrap().lhs;
            assert!(lhs <= prev);
            prev = lhs;
        }
    }

    #[test]
    fn schedule_values() {
        assert_eq!(nt_schedule(96.0, 0), (4.0 * 96.0 * 2.0 * 2f64.ln().powi(2)).ceil() as usize);
        assert_eq!(nt_schedule(96.0, 0), 369);
        assert_eq!(nt_schedule(0.0, 7), 0);
        for t in 0..100 {
            assert!(nt_schedule(96.0, t + 1) >= nt_schedule(96.0, t));
        }
    }

    #[test]
    fn cn_bound_arithmetic() {
        let geo = box_geo();
        let got = cn_lower_bound(&geo, &cfg(3.43), 2, 15).unwrap();
        // independent evaluation
        let cd = 2.0 * 3.43 * 2.0 * (2f64.sqrt() + 1.0) * (3.0f64 / 1e-4 + 1.0).sqrt();
        let lnln = 15f64.ln().ln();
        let want = cd * cd * (4.0 * lnln * lnln).max(1.0 / (2f64.sqrt() + 1.0).powi(2));
        assert!((got - want).abs() <= 1e-12 * want);
        let doubled = cn_lower_bound(&geo, &cfg(6.86), 2, 15).unwrap();
        assert!((doubled / got - 4.0).abs() < 1e-12);
        assert_eq!(cn_lower_bound(&geo, &cfg(3.43), 2, 2), Err(SafetyError::HorizonTooShort(2)));
        let sg = SafetyConfig::new(
            0.1,
            15,
            0.01,
            PhiDelta::SubGaussian { sigma: 0.01, m: 4 },
            1.0,
            Schedule::Prescribed,
        )
        .unwrap();
        assert_eq!(cn_lower_bound(&geo, &sg, 2, 15), Err(SafetyError::PhiNotFixed));
    }

    #[test]
    fn et_bound_scaling() {
        let geo = box_geo();
        let c = c_delta(&geo, 0.04, 2, 0.01);
        let n0 = (c * c / (geo.gamma0 + 1.0).powi(2)).ceil() as usize + 1;
        let a = et_bound(&geo, 0.04, 2, 0.01, n0);
        let b = et_bound(&geo, 0.04, 2, 0.01, 4 * n0);
        assert!((a / b - 2.0).abs() < 1e-12);
        assert_eq!(et_bound(&geo, 0.04, 2, 0.01, 1), f64::INFINITY);
        assert_eq!(et_bound(&geo, 0.0, 2, 0.01, 1), 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(SafetyConfig::new(0.0, 15, 0.01, PhiDelta::Fixed(1.0), 1.0, Schedule::Adaptive).is_err());
        assert!(SafetyConfig::new(0.1, 0, 0.01, PhiDelta::Fixed(1.0), 1.0, Schedule::Adaptive).is_err());
        assert!(SafetyConfig::new(0.1, 15, 0.0, PhiDelta::Fixed(1.0), 1.0, Schedule::Adaptive).is_err());
        assert!(SafetyConfig::new(0.1, 15, 0.01, PhiDelta::Fixed(-1.0), 1.0, Schedule::Adaptive).is_err());
        let c = cfg(1.0);
        assert!((c.delta_bar * c.horizon as f64 - c.delta).abs() < 1e-15);
    }
}
