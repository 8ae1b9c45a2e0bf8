//! Experiment orchestration: seeded repetitions, ground-truth accounting and
//! artifact export.

pub mod config;
pub mod export;

pub use config::{resolve, CnSpec, ExperimentConfig, NoiseSpec, ProblemSpec, Resolved, RoBudget, Variant};

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline_ro::{self, RoConfig};
use crate::estimator::{confidence_membership, EstimatorState};
use crate::lp::{self, LpProblem, LpStatus};
use crate::oracle::{ConstraintOracle, NoiseModel, OracleError};
use crate::problem::{Polytope, ProblemError};
use crate::safety::{SafetyError, Schedule};
use crate::sfw::{self, IterationRecord, RunObserver, RunStatus, SfwError, Trajectory};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Safety(#[from] SafetyError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Run(#[from] SfwError),
}

/// `(f(x_t) − f*)/(f(x₀) − f*)`, exactly 1 at `t = 0`.
pub fn normalize(t: usize, f_gap: f64, h0: f64) -> f64 {
    if !(h0 > 0.0) {
        0.0
    } else if t == 0 {
        1.0
    } else {
        f_gap / h0
    }
}

/// Fills the ground-truth columns of each record.
pub struct GroundTruth<'a> {
    polytope: &'a Polytope,
    beta_true: DMatrix<f64>,
}

impl<'a> GroundTruth<'a> {
    pub fn new(polytope: &'a Polytope) -> Self {
        Self { polytope, beta_true: polytope.parameters() }
    }

    /// `⟨∇f(x), x − s⟩` with `s` minimizing over the true polytope.
    pub fn true_gap(&self, grad: &DVector<f64>, x: &DVector<f64>) -> Option<f64> {
        let p = LpProblem::new(grad.clone(), self.polytope.a().clone(), self.polytope.b().clone()).ok()?;
        let sol = lp::solve(&p).ok()?;
        (sol.status == LpStatus::Optimal).then(|| sfw::surrogate_gap(grad, x, &sol.point))
    }
}

impl RunObserver for GroundTruth<'_> {
    fn on_iteration(&mut self, state: &EstimatorState, phi: f64, record: &mut IterationRecord) {
        record.feasible = Some(self.polytope.contains(&record.x, 0.0));
        record.true_gap = self.true_gap(&record.grad, &record.x);
        record.covered = confidence_membership(state, 1.0, phi, &self.beta_true)
            .ok()
            .map(|v| v.iter().all(|&b| b));
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunOutcome {
    pub seed: u64,
    pub variant: Variant,
    pub status: Option<RunStatus>,
    pub error: Option<String>,
    pub n_total: usize,
    pub f_gap: Vec<f64>,
    pub normalized: Vec<f64>,
    /// Iterates outside the true feasible set.
    pub iterate_violations: usize,
    /// Readings farther than `ω₀` from the true feasible set.
    pub probe_violations: usize,
    pub safety_events: usize,
    pub wall_time_s: f64,
    #[serde(skip)]
    pub trajectory: Option<Trajectory>,
}

impl RunOutcome {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }

    pub fn final_normalized(&self) -> Option<f64> {
        self.normalized.last().copied()
    }
}

fn oracle_for(r: &Resolved, seed: u64) -> Result<ConstraintOracle, HarnessError> {
    let noise = NoiseModel { kind: r.config.noise.kind, sigma: r.config.noise.sigma, seed };
    Ok(ConstraintOracle::new(r.polytope.clone(), noise, r.config.omega0)?)
}

fn run_sfw(r: &Resolved, seed: u64, schedule: Schedule) -> Result<Trajectory, HarnessError> {
    let mut oracle = oracle_for(r, seed)?;
    let mut safety = r.safety.clone();
    safety.schedule = schedule;
    let mut gt = GroundTruth::new(&r.polytope);
    Ok(sfw::run(&r.objective, &mut oracle, &r.geometry, &safety, &r.sfw, &r.x0, &mut gt)?)
}

fn run_ro(r: &Resolved, seed: u64, budget: usize) -> Result<Trajectory, HarnessError> {
    let mut oracle = oracle_for(r, seed)?;
    let cfg = RoConfig { total_measurements: budget, horizon: r.config.horizon, measurement_site: None };
    let mut gt = GroundTruth::new(&r.polytope);
    Ok(baseline_ro::ro_run(&r.objective, &mut oracle, &r.geometry, &r.safety, &cfg, &r.x0, &mut gt)?)
}

fn run_fw_oracle(r: &Resolved) -> Result<Trajectory, HarnessError> {
    Ok(sfw::classical_fw(&r.objective, &r.polytope, &r.x0, r.config.horizon)?)
}

fn ro_budget(r: &Resolved, seed: u64) -> Result<usize, HarnessError> {
    match r.config.ro_budget {
        RoBudget::Fixed(n) => Ok(n),
        RoBudget::Matched(_) => Ok(run_sfw(r, seed, Schedule::Adaptive)?.total_measurements),
    }
}

/// Runs one repetition of `variant` with the given oracle seed.
pub fn run_once(r: &Resolved, variant: Variant, seed: u64) -> Result<Trajectory, HarnessError> {
    match variant {
        Variant::Prescribed => run_sfw(r, seed, Schedule::Prescribed),
        Variant::Adaptive => run_sfw(r, seed, Schedule::Adaptive),
        Variant::Ro => run_ro(r, seed, ro_budget(r, seed)?),
        Variant::FwOracle => run_fw_oracle(r),
    }
}

/// Summarizes a trajectory; an RO run that could not certify `x₀` stays at
/// `x₀` and reports a normalized gap of 1.
pub fn outcome(r: &Resolved, variant: Variant, seed: u64, result: Result<Trajectory, HarnessError>, wall: f64) -> RunOutcome {
    let h0 = r.h0();
    match result {
        Ok(tr) => {
            let mut f_gap: Vec<f64> = tr.records.iter().map(|rec| rec.f_value - r.f_star).collect();
            let mut normalized: Vec<f64> = tr.records.iter().map(|rec| normalize(rec.t, rec.f_value - r.f_star, h0)).collect();
            if tr.records.is_empty() && tr.status == RunStatus::Infeasible {
                f_gap.push(h0);
                normalized.push(normalize(0, h0, h0));
            }
            RunOutcome {
                seed,
                variant,
                status: Some(tr.status),
                error: None,
                n_total: tr.total_measurements,
                f_gap,
                normalized,
                iterate_violations: tr.records.iter().filter(|rec| rec.feasible == Some(false)).count(),
                probe_violations: tr.out_of_reach,
                safety_events: tr.safety_events,
                wall_time_s: wall,
                trajectory: Some(tr),
            }
        }
        Err(e) => RunOutcome {
            seed,
            variant,
            status: None,
            error: Some(e.to_string()),
            n_total: 0,
            f_gap: Vec::new(),
            normalized: Vec::new(),
            iterate_violations: 0,
            probe_violations: 0,
            safety_events: 0,
            wall_time_s: wall,
            trajectory: None,
        },
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub runs: usize,
    pub failed_runs: usize,
    /// Mean and standard deviation of the normalized gap per iteration, over
    /// runs that reached it.
    pub mean_curve: Vec<f64>,
    pub std_curve: Vec<f64>,
    pub mean_final: f64,
    pub mean_n_total: f64,
    pub runs_with_violation: usize,
    pub violation_rate: f64,
}

pub fn aggregate(outcomes: &[RunOutcome]) -> Aggregate {
    let ok: Vec<&RunOutcome> = outcomes.iter().filter(|o| !o.failed()).collect();
    let len = ok.iter().map(|o| o.normalized.len()).max().unwrap_or(0);
    let mut mean_curve = Vec::with_capacity(len);
    let mut std_curve = Vec::with_capacity(len);
    for t in 0..len {
        let vals: Vec<f64> = ok.iter().filter_map(|o| o.normalized.get(t).copied()).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        mean_curve.push(mean);
        std_curve.push(var.sqrt());
    }
    let finals: Vec<f64> = ok.iter().filter_map(|o| o.final_normalized()).collect();
    let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
    let totals: Vec<f64> = ok.iter().map(|o| o.n_total as f64).collect();
    let runs_with_violation = ok.iter().filter(|o| o.iterate_violations > 0).count();
    Aggregate {
        runs: outcomes.len(),
        failed_runs: outcomes.len() - ok.len(),
        mean_curve,
        std_curve,
        mean_final: mean(&finals),
        mean_n_total: mean(&totals),
        runs_with_violation,
        violation_rate: if ok.is_empty() { 0.0 } else { runs_with_violation as f64 / ok.len() as f64 },
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub f_star: f64,
    pub seeds: Vec<u64>,
    pub aggregate: Aggregate,
    pub outcomes: Vec<RunOutcome>,
    pub wall_time_s: f64,
}

impl ExperimentReport {
    pub fn failure_rate(&self) -> f64 {
        self.aggregate.failed_runs as f64 / self.aggregate.runs.max(1) as f64
    }
}

pub fn seeds(cfg: &ExperimentConfig) -> Vec<u64> {
    (0..cfg.repetitions as u64).map(|i| cfg.base_seed.wrapping_add(i)).collect()
}

/// Executes all repetitions in parallel; results are kept in seed order.
pub fn run_experiment(r: &Resolved) -> ExperimentReport {
    let start = Instant::now();
    let seeds = seeds(&r.config);
    let variant = r.config.variant;
    let outcomes: Vec<RunOutcome> = seeds
        .par_iter()
        .map(|&seed| {
            let t0 = Instant::now();
            let res = run_once(r, variant, seed);
            outcome(r, variant, seed, res, t0.elapsed().as_secs_f64())
        })
        .collect();
    for o in outcomes.iter().filter(|o| o.failed()) {
        log::warn!("seed {} failed: {}", o.seed, o.error.as_deref().unwrap_or(""));
    }
    ExperimentReport {
        config: r.config.clone(),
        f_star: r.f_star,
        aggregate: aggregate(&outcomes),
        seeds,
        outcomes,
        wall_time_s: start.elapsed().as_secs_f64(),
    }
}

/// Writes `run_<seed>.csv` per repetition and `summary.json`.
pub fn write_artifacts(r: &Resolved, report: &ExperimentReport, dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io { path: dir.to_path_buf(), source: e })?;
    for o in &report.outcomes {
        if let Some(tr) = &o.trajectory {
            let rows = export::trajectory_rows(tr, r.f_star, r.h0());
            export::write_trajectory_csv(&rows, &dir.join(format!("run_{}.csv", o.seed)))?;
        }
    }
    export::write_json(report, &dir.join("summary.json"))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairResult {
    pub seed: u64,
    pub sfw_final: f64,
    pub ro_final: f64,
    pub sfw_n_total: usize,
    pub ro_n_total: usize,
    pub ro_status: Option<RunStatus>,
    pub sfw_violations: usize,
    pub ro_violations: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareReport {
    pub config: ExperimentConfig,
    pub pairs: Vec<PairResult>,
    pub failed_seeds: Vec<u64>,
    /// Pairs with SFW final normalized gap at most RO's.
    pub sfw_not_worse: usize,
    pub fraction_sfw_not_worse: f64,
    pub wall_time_s: f64,
}

impl CompareReport {
    pub fn failure_rate(&self) -> f64 {
        let total = self.pairs.len() + self.failed_seeds.len();
        self.failed_seeds.len() as f64 / total.max(1) as f64
    }
}

fn compare_seed(r: &Resolved, seed: u64) -> Result<PairResult, HarnessError> {
    let sfw_tr = run_sfw(r, seed, Schedule::Adaptive)?;
    let budget = match r.config.ro_budget {
        RoBudget::Fixed(n) => n,
        RoBudget::Matched(_) => sfw_tr.total_measurements,
    };
    let ro_tr = run_ro(r, seed, budget)?;
    let sfw_o = outcome(r, Variant::Adaptive, seed, Ok(sfw_tr), 0.0);
    let ro_o = outcome(r, Variant::Ro, seed, Ok(ro_tr), 0.0);
    Ok(PairResult {
        seed,
        sfw_final: sfw_o.final_normalized().unwrap_or(f64::NAN),
        ro_final: ro_o.final_normalized().unwrap_or(f64::NAN),
        sfw_n_total: sfw_o.n_total,
        ro_n_total: ro_o.n_total,
        ro_status: ro_o.status,
        sfw_violations: sfw_o.iterate_violations,
        ro_violations: ro_o.iterate_violations,
    })
}

/// Paired adaptive-SFW versus RO runs on identical seeds.
pub fn compare_sfw_ro(r: &Resolved) -> CompareReport {
    let start = Instant::now();
    let results: Vec<(u64, Result<PairResult, HarnessError>)> = seeds(&r.config)
        .into_par_iter()
        .map(|seed| (seed, compare_seed(r, seed)))
        .collect();
    let mut pairs = Vec::new();
    let mut failed_seeds = Vec::new();
    for (seed, res) in results {
        match res {
            Ok(p) => pairs.push(p),
            Err(e) => {
                log::warn!("seed {seed} failed: {e}");
                failed_seeds.push(seed);
            }
        }
    }
    let sfw_not_worse = pairs.iter().filter(|p| p.sfw_final <= p.ro_final).count();
    CompareReport {
        config: r.config.clone(),
        fraction_sfw_not_worse: if pairs.is_empty() { 0.0 } else { sfw_not_worse as f64 / pairs.len() as f64 },
        sfw_not_worse,
        pairs,
        failed_seeds,
        wall_time_s: start.elapsed().as_secs_f64(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_optimum() {
        let r = resolve(&ExperimentConfig::benchmark(2, 0.01, Variant::Adaptive)).unwrap();
        assert!((r.f_star - 0.5).abs() < 1e-12);
        assert!((&r.x_star - DVector::from_column_slice(&[1.0, 0.5])).amax() < 1e-12);
    }

    #[test]
    fn normalized_starts_at_one() {
        let mut cfg = ExperimentConfig::benchmark(2, 0.01, Variant::Adaptive);
        cfg.repetitions = 2;
        let r = resolve(&cfg).unwrap();
        let rep = run_experiment(&r);
        for o in &rep.outcomes {
            assert_eq!(o.normalized[0], 1.0);
        }
        assert_eq!(rep.seeds, vec![0, 1]);
    }

    #[test]
    fn bad_configs_are_rejected() {
        let mut cfg = ExperimentConfig::benchmark(2, 0.01, Variant::Adaptive);
        cfg.repetitions = 0;
        assert!(matches!(resolve(&cfg), Err(HarnessError::Config(_))));
        let mut cfg = ExperimentConfig::benchmark(2, 0.01, Variant::Adaptive);
        cfg.x0 = Some(vec![1.0, 0.0]);
        assert!(resolve(&cfg).is_err());
        let mut cfg = ExperimentConfig::benchmark(2, 0.01, Variant::Prescribed);
        cfg.confidence = crate::estimator::ConfidenceMode::SubGaussian;
        cfg.cn = CnSpec::default();
        assert!(resolve(&cfg).is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let text = r#"{
            "problem": {"kind": "box", "dim": 2},
            "noise": {"sigma": 0.01},
            "omega0": 0.01, "delta": 0.1, "horizon": 15,
            "cn": "auto", "variant": "adaptive", "ro_budget": 5500
        }"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        assert_eq!(cfg.cn, CnSpec::default());
        assert_eq!(cfg.ro_budget, RoBudget::Fixed(5500));
        let back = ExperimentConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert!(ExperimentConfig::from_json(r#"{"problem": {"kind": "box", "dim": 2}, "bogus": 1}"#).is_err());
    }
}
