//! The safe Frank-Wolfe driver.
//!
//! Each iteration measures around the current iterate, re-estimates the
//! constraints, solves the linear subproblem over the estimated polytope and
//! steps with `γ_t = 1/(t+2)`. The adaptive variant keeps measuring at `x_t`
//! until the candidate `x_{t+1}` passes the safety test.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{EstimatorError, EstimatorState};
use crate::lp::{self, LpError, LpProblem, LpStatus};
use crate::oracle::{ConstraintOracle, OracleError};
use crate::problem::{GeometryConstants, Objective, Polytope};
use crate::safety::{self, SafetyConfig, SafetyError, Schedule};

#[derive(Debug, Error)]
pub enum SfwError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Safety(#[from] SafetyError),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error("invalid run configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SfwConfig {
    pub epsilon: f64,
    pub horizon: usize,
    pub max_total_measurements: usize,
}

impl SfwConfig {
    pub fn new(epsilon: f64, horizon: usize, max_total_measurements: usize) -> Result<Self, SfwError> {
        if !(epsilon > 0.0) {
            return Err(SfwError::Invalid(format!("epsilon must be positive, got {epsilon}")));
        }
        if horizon < 3 {
            return Err(SfwError::Invalid(format!("horizon must be at least 3, got {horizon}")));
        }
        Ok(Self { epsilon, horizon, max_total_measurements })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum RunStatus {
    Completed,
    /// `ĝ_t + Ē_t <= ε` fired at iteration `t`.
    Stopped { t: usize },
    BudgetExhausted { t: usize },
    /// The safe set was empty after estimation.
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub t: usize,
    pub x: DVector<f64>,
    pub grad: DVector<f64>,
    pub s_hat: DVector<f64>,
    pub f_value: f64,
    pub ghat: f64,
    pub et_bound: f64,
    /// Readings taken during this iteration.
    pub n_t: usize,
    /// Cumulative readings after this iteration.
    pub n_total: usize,
    pub extra_batches: usize,
    pub dfs_status: LpStatus,
    /// Safety test at `x_t` against the state after this iteration's readings.
    pub fact2_lhs: f64,
    pub min_margin: f64,
    pub safe: bool,
    /// Filled by an observer with access to the true constraints.
    pub feasible: Option<bool>,
    pub true_gap: Option<f64>,
    pub covered: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub records: Vec<IterationRecord>,
    pub status: RunStatus,
    pub total_measurements: usize,
    /// Readings outside the reach `ω₀` of the true feasible set.
    pub out_of_reach: usize,
    /// Iterates that failed the safety test (prescribed schedule only).
    pub safety_events: usize,
    pub rebuilds: usize,
}

impl Trajectory {
    pub fn final_x(&self) -> Option<&DVector<f64>> {
        self.records.last().map(|r| &r.x)
    }
}

/// Hook for diagnostics that need ground truth.
pub trait RunObserver {
    fn on_iteration(&mut self, _state: &EstimatorState, _phi: f64, _record: &mut IterationRecord) {}
}

impl RunObserver for () {}

/// `⟨∇f(x), x − ŝ⟩`.
pub fn surrogate_gap(grad: &DVector<f64>, x: &DVector<f64>, s_hat: &DVector<f64>) -> f64 {
    grad.dot(&(x - s_hat))
}

pub fn step_size(t: usize) -> f64 {
    1.0 / (t as f64 + 2.0)
}

fn guard_radius(geo: &GeometryConstants) -> f64 {
    10.0 * if geo.gamma0 > 0.0 { geo.gamma0 } else { 1.0 }
}

struct Dfs {
    s_hat: DVector<f64>,
    status: LpStatus,
}

fn solve_dfs(state: &EstimatorState, grad: &DVector<f64>, x: &DVector<f64>, radius: f64) -> Result<Dfs, SfwError> {
    let p = LpProblem::new(grad.clone(), state.a_hat(), state.b_hat())?.with_box_guard(radius);
    let sol = lp::solve(&p)?;
    let s_hat = match sol.status {
        LpStatus::Optimal => sol.point,
        _ => x.clone(),
    };
    Ok(Dfs { s_hat, status: sol.status })
}

struct Budget {
    cap: usize,
}

impl Budget {
    fn allows(&self, state: &EstimatorState, n: usize) -> bool {
        state.count() + n <= self.cap
    }
}

/// Runs the driver from `x0`. The schedule is taken from `safety_cfg`.
#[allow(clippy::too_many_arguments)]
pub fn run(
    objective: &dyn Objective,
    oracle: &mut ConstraintOracle,
    geo: &GeometryConstants,
    safety_cfg: &SafetyConfig,
    cfg: &SfwConfig,
    x0: &DVector<f64>,
    observer: &mut dyn RunObserver,
) -> Result<Trajectory, SfwError> {
    let d = oracle.dim();
    let m = oracle.n_constraints();
    if x0.len() != d {
        return Err(SfwError::Invalid(format!("x0 has {} entries, expected {d}", x0.len())));
    }
    let batch = 2 * d;
    let radius = guard_radius(geo);
    let budget = Budget { cap: cfg.max_total_measurements };
    let mut state = EstimatorState::new(d, m);
    let mut x = x0.clone();
    let mut records = Vec::with_capacity(cfg.horizon + 1);
    let mut status = RunStatus::Completed;
    let mut safety_events = 0;

    'outer: for t in 0..=cfg.horizon {
        let before = state.count();
        let requested = match safety_cfg.schedule {
            Schedule::Prescribed => safety::nt_schedule(safety_cfg.cn, t),
            Schedule::Adaptive => batch * t,
        };
        if requested > 0 {
            let n = requested.max(batch);
            if !budget.allows(&state, n) {
                status = RunStatus::BudgetExhausted { t };
                break;
            }
            state.absorb_batch(&oracle.cross_batch(&x, n)?)?;
        }
        while !state.is_spanning() {
            if !budget.allows(&state, batch) {
                status = RunStatus::BudgetExhausted { t };
                break 'outer;
            }
            state.absorb_batch(&oracle.cross_batch(&x, batch)?)?;
        }

        let grad = objective.gradient(&x);
        let mut dfs = solve_dfs(&state, &grad, &x, radius)?;
        let mut extra = 0;
        if dfs.status != LpStatus::Optimal {
            log::debug!("t={t}: estimated subproblem {:?}; zero step", dfs.status);
            if budget.allows(&state, batch) {
                state.absorb_batch(&oracle.cross_batch(&x, batch)?)?;
                extra += 1;
            }
        }
        let mut phi = safety_cfg.phi_at(state.count(), d)?;
        let mut ghat = surrogate_gap(&grad, &x, &dfs.s_hat);
        let mut et = safety::et_bound(geo, phi, d, safety_cfg.omega0, state.count());
        let stop = ghat + et <= cfg.epsilon;

        let gamma = step_size(t);
        let mut next = None;
        if !stop && t < cfg.horizon {
            let mut candidate = &x + (&dfs.s_hat - &x) * gamma;
            match safety_cfg.schedule {
                Schedule::Adaptive => loop {
                    if safety::fact2_check(&state, safety_cfg, &candidate)?.safe {
                        break;
                    }
                    if !budget.allows(&state, batch) {
                        status = RunStatus::BudgetExhausted { t };
                        break;
                    }
                    state.absorb_batch(&oracle.cross_batch(&x, batch)?)?;
                    extra += 1;
                    dfs = solve_dfs(&state, &grad, &x, radius)?;
                    candidate = &x + (&dfs.s_hat - &x) * gamma;
                },
                Schedule::Prescribed => {}
            }
            if status == RunStatus::Completed {
                phi = safety_cfg.phi_at(state.count(), d)?;
                ghat = surrogate_gap(&grad, &x, &dfs.s_hat);
                et = safety::et_bound(geo, phi, d, safety_cfg.omega0, state.count());
                next = Some(candidate);
            }
        }

        let verdict = safety::fact2_check(&state, safety_cfg, &x)?;
        if !verdict.safe {
            safety_events += 1;
            log::debug!("t={t}: iterate fails the safety test (lhs {:.3e}, margin {:.3e})", verdict.lhs, verdict.min_margin);
        }
        let mut rec = IterationRecord {
            t,
            f_value: objective.value(&x),
            x: x.clone(),
            grad,
            s_hat: dfs.s_hat.clone(),
            ghat,
            et_bound: et,
            n_t: state.count() - before,
            n_total: state.count(),
            extra_batches: extra,
            dfs_status: dfs.status,
            fact2_lhs: verdict.lhs,
            min_margin: verdict.min_margin,
            safe: verdict.safe,
            feasible: None,
            true_gap: None,
            covered: None,
        };
        observer.on_iteration(&state, phi, &mut rec);
        records.push(rec);

        if stop {
            status = RunStatus::Stopped { t };
            break;
        }
        match next {
            Some(n) => x = n,
            None => break,
        }
    }

    Ok(Trajectory {
        records,
        status,
        total_measurements: state.count(),
        out_of_reach: oracle.stats().out_of_reach,
        safety_events,
        rebuilds: state.rebuilds(),
    })
}

/// Frank-Wolfe with the true constraints; the zero-uncertainty reference.
pub fn classical_fw(
    objective: &dyn Objective,
    polytope: &Polytope,
    x0: &DVector<f64>,
    horizon: usize,
) -> Result<Trajectory, SfwError> {
    let mut x = x0.clone();
    let mut records = Vec::with_capacity(horizon + 1);
    for t in 0..=horizon {
        let grad = objective.gradient(&x);
        let sol = lp::solve(&LpProblem::new(grad.clone(), polytope.a().clone(), polytope.b().clone())?)?;
        if sol.status != LpStatus::Optimal {
            return Err(SfwError::Invalid(format!("true subproblem is {:?}", sol.status)));
        }
        let gap = surrogate_gap(&grad, &x, &sol.point);
        let slack = polytope.slack(&x);
        records.push(IterationRecord {
            t,
            f_value: objective.value(&x),
            x: x.clone(),
            grad,
            s_hat: sol.point.clone(),
            ghat: gap,
            et_bound: 0.0,
            n_t: 0,
            n_total: 0,
            extra_batches: 0,
            dfs_status: sol.status,
            fact2_lhs: 0.0,
            min_margin: slack.min(),
            safe: slack.min() >= 0.0,
            feasible: Some(polytope.contains(&x, 0.0)),
            true_gap: Some(gap),
            covered: None,
        });
        if t < horizon {
            x = &x + (&sol.point - &x) * step_size(t);
        }
    }
    Ok(Trajectory {
        records,
        status: RunStatus::Completed,
        total_measurements: 0,
        out_of_reach: 0,
        safety_events: 0,
        rebuilds: 0,
    })
}
