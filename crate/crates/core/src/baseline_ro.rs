//! Robust-optimization baseline: measure once around a safe site, then run
//! Frank-Wolfe over the fixed safety set.
//!
//! The linear minimizer over the safety set uses cutting planes: each round
//! solves an LP over the estimated polytope plus the cuts so far, then adds
//! the linearization of the most violated cone constraint.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::estimator::EstimatorState;
use crate::lp::{self, LpProblem, LpStatus};
use crate::oracle::ConstraintOracle;
use crate::problem::{GeometryConstants, Objective};
use crate::safety::{self, SafetyConfig};
use crate::sfw::{step_size, surrogate_gap, IterationRecord, RunObserver, RunStatus, SfwError, Trajectory};

pub const CUT_TOL: f64 = 1e-7;
pub const MAX_CUTS: usize = 200;
const BISECTION_STEPS: usize = 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoConfig {
    pub total_measurements: usize,
    pub horizon: usize,
    /// Defaults to `x₀`.
    pub measurement_site: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct SocLinmin {
    pub point: DVector<f64>,
    pub value: f64,
    pub cuts: usize,
    /// Largest cone violation at the last LP point, before the pull-back.
    pub max_violation: f64,
    pub hit_cut_limit: bool,
    /// LP relaxation value after each round.
    pub lp_values: Vec<f64>,
}

/// Cone constraint `i` and its gradient at `s`.
fn cone_constraint(
    state: &EstimatorState,
    factor: &DMatrix<f64>,
    phi: f64,
    i: usize,
    s: &DVector<f64>,
) -> (f64, DVector<f64>) {
    let d = state.dim();
    let beta = state.beta_hat();
    let a = beta.column(i).rows(0, d).into_owned();
    let b = beta[(d, i)];
    let mut v = DVector::zeros(d + 1);
    v.rows_mut(0, d).copy_from(s);
    v[d] = -1.0;
    let w = factor.transpose() * &v;
    let norm = w.norm();
    let value = a.dot(s) - b + phi * norm;
    let mut grad = a;
    if phi > 0.0 && norm > 0.0 {
        let pv = factor * w;
        grad += pv.rows(0, d) * (phi / norm);
    }
    (value, grad)
}

fn max_cone_violation(state: &EstimatorState, factor: &DMatrix<f64>, phi: f64, s: &DVector<f64>) -> (usize, f64) {
    safety::soc_values(state, factor, phi, s)
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc })
}

/// Approximately minimizes `⟨c, s⟩` over the safety set. `anchor` must be
/// safe; the returned point lies on the segment from `anchor` to the last LP
/// point and is safe.
pub fn soc_linmin(
    state: &EstimatorState,
    factor: &DMatrix<f64>,
    phi: f64,
    c: &DVector<f64>,
    anchor: &DVector<f64>,
    guard_radius: f64,
) -> Result<SocLinmin, SfwError> {
    let d = state.dim();
    let mut a = state.a_hat();
    let mut b = state.b_hat();
    let mut lp_values = Vec::new();
    let mut cuts = 0;
    let mut hit_cut_limit = false;
    let (last, max_violation) = loop {
        let p = LpProblem::new(c.clone(), a.clone(), b.clone())?.with_box_guard(guard_radius);
        let sol = lp::solve(&p)?;
        if sol.status != LpStatus::Optimal {
            log::warn!("cutting-plane LP is {:?}; returning the anchor", sol.status);
            break (anchor.clone(), f64::INFINITY);
        }
        lp_values.push(sol.value);
        let (worst, viol) = max_cone_violation(state, factor, phi, &sol.point);
        if viol <= CUT_TOL {
            break (sol.point, viol);
        }
        if cuts == MAX_CUTS {
            hit_cut_limit = true;
            log::warn!("cut limit reached with violation {viol:.3e}");
            break (sol.point, viol);
        }
        let (h, g) = cone_constraint(state, factor, phi, worst, &sol.point);
        let rhs = g.dot(&sol.point) - h;
        let rows = a.nrows();
        a = a.insert_row(rows, 0.0);
        a.row_mut(rows).copy_from(&g.transpose());
        b = b.push(rhs);
        cuts += 1;
    };

    let point = if max_cone_violation(state, factor, phi, &last).1 <= 0.0 {
        last
    } else {
        // largest safe fraction of the segment anchor -> last
        let dir = &last - anchor;
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            if max_cone_violation(state, factor, phi, &(anchor + &dir * mid)).1 <= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        anchor + dir * lo
    };
    debug_assert_eq!(point.len(), d);
    Ok(SocLinmin {
        value: c.dot(&point),
        point,
        cuts,
        max_violation,
        hit_cut_limit,
        lp_values,
    })
}

/// One-shot estimation followed by `horizon` Frank-Wolfe steps over the
/// resulting safety set.
pub fn ro_run(
    objective: &dyn Objective,
    oracle: &mut ConstraintOracle,
    geo: &GeometryConstants,
    safety_cfg: &SafetyConfig,
    cfg: &RoConfig,
    x0: &DVector<f64>,
    observer: &mut dyn RunObserver,
) -> Result<Trajectory, SfwError> {
    let d = oracle.dim();
    let m = oracle.n_constraints();
    if x0.len() != d {
        return Err(SfwError::Invalid(format!("x0 has {} entries, expected {d}", x0.len())));
    }
    if cfg.total_measurements < 2 * (d + 1) {
        return Err(SfwError::Invalid(format!(
            "RO needs at least {} readings, got {}",
            2 * (d + 1),
            cfg.total_measurements
        )));
    }
    let site = match &cfg.measurement_site {
        Some(s) if s.len() == d => DVector::from_column_slice(s),
        Some(s) => {
            return Err(SfwError::Invalid(format!("measurement site has {} entries, expected {d}", s.len())))
        }
        None => x0.clone(),
    };

    let mut state = EstimatorState::new(d, m);
    state.absorb_batch(&oracle.cross_batch(&site, cfg.total_measurements)?)?;
    let empty = |state: &EstimatorState, oracle: &ConstraintOracle| Trajectory {
        records: Vec::new(),
        status: RunStatus::Infeasible,
        total_measurements: state.count(),
        out_of_reach: oracle.stats().out_of_reach,
        safety_events: 0,
        rebuilds: state.rebuilds(),
    };
    if !state.is_spanning() {
        return Ok(empty(&state, oracle));
    }
    let phi = safety_cfg.phi_at(state.count(), d)?;
    if !safety::fact2_check(&state, safety_cfg, x0)?.safe {
        log::warn!("x0 is outside the estimated safety set");
        return Ok(empty(&state, oracle));
    }
    let factor = safety::precision_factor(&state)?;
    let radius = 10.0 * if geo.gamma0 > 0.0 { geo.gamma0 } else { 1.0 };
    let et = safety::et_bound(geo, phi, d, safety_cfg.omega0, state.count());

    let mut x = x0.clone();
    let mut records = Vec::with_capacity(cfg.horizon + 1);
    let mut safety_events = 0;
    for t in 0..=cfg.horizon {
        let grad = objective.gradient(&x);
        let sol = soc_linmin(&state, &factor, phi, &grad, &x, radius)?;
        let verdict = safety::fact2_check(&state, safety_cfg, &x)?;
        if !verdict.safe {
            safety_events += 1;
        }
        let mut rec = IterationRecord {
            t,
            f_value: objective.value(&x),
            x: x.clone(),
            ghat: surrogate_gap(&grad, &x, &sol.point),
            grad,
            s_hat: sol.point.clone(),
            et_bound: et,
            n_t: if t == 0 { state.count() } else { 0 },
            n_total: state.count(),
            extra_batches: 0,
            dfs_status: LpStatus::Optimal,
            fact2_lhs: verdict.lhs,
            min_margin: verdict.min_margin,
            safe: verdict.safe,
            feasible: None,
            true_gap: None,
            covered: None,
        };
        observer.on_iteration(&state, phi, &mut rec);
        records.push(rec);
        if t < cfg.horizon {
            x = &x + (&sol.point - &x) * step_size(t);
        }
    }
    Ok(Trajectory {
        records,
        status: RunStatus::Completed,
        total_measurements: state.count(),
        out_of_reach: oracle.stats().out_of_reach,
        safety_events,
        rebuilds: state.rebuilds(),
    })
}
