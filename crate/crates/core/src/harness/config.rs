use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::estimator::ConfidenceMode;
use crate::oracle::NoiseKind;
use crate::problem::{self, GeometryConstants, GeometryOverrides, Objective, Polytope, Quadratic};
use crate::safety::{self, PhiDelta, SafetyConfig, Schedule};
use crate::sfw::SfwConfig;

use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProblemSpec {
    /// `[-half_width, half_width]^dim`.
    Box {
        dim: usize,
        #[serde(default = "one")]
        half_width: f64,
    },
    Explicit { a: Vec<Vec<f64>>, b: Vec<f64> },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Prescribed,
    Adaptive,
    Ro,
    FwOracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Keyword {
    #[default]
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Matched {
    #[default]
    Matched,
}

/// `"auto"` or an explicit value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CnSpec {
    Auto(Keyword),
    Value(f64),
}

impl Default for CnSpec {
    fn default() -> Self {
        CnSpec::Auto(Keyword::Auto)
    }
}

/// `"matched"` (the SFW run's realized total for the same seed) or a count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RoBudget {
    Matched(Matched),
    Fixed(usize),
}

impl Default for RoBudget {
    fn default() -> Self {
        RoBudget::Matched(Matched::Matched)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(default)]
    pub kind: NoiseKind,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    /// Quadratic target `x′`; defaults to `[2, 0.5, …, 0.5]`.
    #[serde(default)]
    pub target: Option<Vec<f64>>,
    /// Defaults to the origin.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    pub noise: NoiseSpec,
    pub omega0: f64,
    pub delta: f64,
    pub horizon: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub confidence: ConfidenceMode,
    /// Replaces `σ φ⁻¹(δ̄/m)` verbatim.
    #[serde(default)]
    pub phi_delta: Option<f64>,
    #[serde(default)]
    pub cn: CnSpec,
    pub variant: Variant,
    #[serde(default = "default_reps")]
    pub repetitions: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_budget")]
    pub max_total_measurements: usize,
    #[serde(default)]
    pub ro_budget: RoBudget,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_epsilon() -> f64 {
    1e-6
}

fn default_reps() -> usize {
    1
}

fn default_budget() -> usize {
    50_000_000
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_json(&text)
    }

    /// The benchmark box-quadratic setup in dimension `d`.
    pub fn benchmark(d: usize, sigma: f64, variant: Variant) -> Self {
        Self {
            problem: ProblemSpec::Box { dim: d, half_width: 1.0 },
            target: None,
            x0: None,
            noise: NoiseSpec { kind: NoiseKind::Gaussian, sigma },
            omega0: 0.01,
            delta: 0.1,
            horizon: 15,
            epsilon: default_epsilon(),
            confidence: ConfidenceMode::Chisq,
            phi_delta: None,
            cn: CnSpec::Value((d * d * 24) as f64),
            variant,
            repetitions: 20,
            base_seed: 0,
            max_total_measurements: default_budget(),
            ro_budget: RoBudget::default(),
            output_dir: None,
        }
    }
}

/// A validated configuration with every derived constant filled in.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: ExperimentConfig,
    pub polytope: Polytope,
    pub objective: Quadratic,
    pub x0: DVector<f64>,
    pub geometry: GeometryConstants,
    pub safety: SafetyConfig,
    pub sfw: SfwConfig,
    pub f_star: f64,
    pub x_star: DVector<f64>,
}

impl Resolved {
    pub fn dim(&self) -> usize {
        self.polytope.dim()
    }

    pub fn h0(&self) -> f64 {
        self.objective.value(&self.x0) - self.f_star
    }
}

fn cfg_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

/// Minimizer over `D`: the objective's own when available, else a long
/// classical Frank-Wolfe run.
pub fn optimum(obj: &dyn Objective, p: &Polytope, x0: &DVector<f64>) -> Result<(DVector<f64>, f64), HarnessError> {
    if let Some(x) = obj.minimizer(p) {
        let f = obj.value(&x);
        return Ok((x, f));
    }
    let tr = crate::sfw::classical_fw(obj, p, x0, 20_000)?;
    let x = tr.final_x().cloned().unwrap_or_else(|| x0.clone());
    let f = obj.value(&x);
    Ok((x, f))
}

pub fn resolve(cfg: &ExperimentConfig) -> Result<Resolved, HarnessError> {
    if cfg.repetitions == 0 {
        return Err(cfg_err("repetitions must be at least 1"));
    }
    if !(cfg.noise.sigma >= 0.0 && cfg.noise.sigma.is_finite()) {
        return Err(cfg_err(format!("noise sigma must be finite and >= 0, got {}", cfg.noise.sigma)));
    }
    let (polytope, box_half) = match &cfg.problem {
        ProblemSpec::Box { dim, half_width } => {
            if *dim == 0 || !(*half_width > 0.0) {
                return Err(cfg_err("box needs dim >= 1 and half_width > 0"));
            }
            (Polytope::hypercube(*dim, *half_width), Some(*half_width))
        }
        ProblemSpec::Explicit { a, b } => (Polytope::from_rows(a, b)?, None),
    };
    let d = polytope.dim();
    let m = polytope.n_constraints();
    let report = problem::validate(&polytope)?;
    if !report.feasible {
        return Err(cfg_err("constraint set has no interior"));
    }
    if !report.bounded {
        return Err(cfg_err("constraint set is unbounded"));
    }

    let objective = match &cfg.target {
        Some(t) if t.len() == d => Quadratic::new(DVector::from_column_slice(t)),
        Some(t) => return Err(cfg_err(format!("target has {} entries, expected {d}", t.len()))),
        None => Quadratic::benchmark(d),
    };
    let x0 = match &cfg.x0 {
        Some(x) if x.len() == d => DVector::from_column_slice(x),
        Some(x) => return Err(cfg_err(format!("x0 has {} entries, expected {d}", x.len()))),
        None => DVector::zeros(d),
    };
    let overrides = match box_half {
        Some(h) => GeometryOverrides::hypercube_quadratic(d, h, &objective.target),
        None => GeometryOverrides::default(),
    };
    let geometry = problem::geometry_constants(&polytope, &objective, &x0, &overrides, problem::DEFAULT_SUBSET_CAP)?;

    if !(cfg.delta > 0.0 && cfg.delta < 1.0) {
        return Err(cfg_err(format!("delta must lie in (0, 1), got {}", cfg.delta)));
    }
    if cfg.horizon < 3 {
        return Err(cfg_err(format!("horizon must be at least 3, got {}", cfg.horizon)));
    }
    let delta_bar = cfg.delta / cfg.horizon as f64;
    let phi = match (cfg.phi_delta, cfg.confidence) {
        (Some(v), _) => PhiDelta::Fixed(v),
        (None, ConfidenceMode::Chisq) => PhiDelta::Fixed(safety::phi_delta(
            ConfidenceMode::Chisq,
            cfg.noise.sigma,
            0,
            d,
            m,
            delta_bar,
        )?),
        (None, ConfidenceMode::SubGaussian) => PhiDelta::SubGaussian { sigma: cfg.noise.sigma, m },
    };
    let schedule = match cfg.variant {
        Variant::Prescribed => Schedule::Prescribed,
        _ => Schedule::Adaptive,
    };
    let mut safety = SafetyConfig::new(cfg.delta, cfg.horizon, cfg.omega0, phi, 0.0, schedule)?;
    safety.cn = match cfg.cn {
        CnSpec::Value(v) if v >= 0.0 && v.is_finite() => v,
        CnSpec::Value(v) => return Err(cfg_err(format!("cn must be finite and >= 0, got {v}"))),
        CnSpec::Auto(_) => match safety::cn_lower_bound(&geometry, &safety, d, cfg.horizon) {
            Ok(v) => v,
            Err(e) if cfg.variant == Variant::Prescribed => return Err(e.into()),
            Err(_) => 0.0,
        },
    };
    if cfg.variant == Variant::Prescribed && safety.cn == 0.0 {
        return Err(cfg_err("prescribed schedule needs cn > 0"));
    }
    let sfw = SfwConfig::new(cfg.epsilon, cfg.horizon, cfg.max_total_measurements)?;
    let (x_star, f_star) = optimum(&objective, &polytope, &x0)?;

    Ok(Resolved {
        config: cfg.clone(),
        polytope,
        objective,
        x0,
        geometry,
        safety,
        sfw,
        f_star,
        x_star,
    })
}
