//! Simulated zeroth-order constraint oracle `y(x) = Ax − b + η` and the
//! coordinate-cross measurement pattern used around each iterate.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::problem::Polytope;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("cross pattern needs at least 2d = {needed} measurements, got {requested}")]
    TooFewMeasurements { requested: usize, needed: usize },
    #[error("tightening offsets must be non-negative (entry {0} is {1})")]
    NegativeTightening(usize, f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid noise model: {0}")]
    InvalidNoise(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    /// `N(0, σ²)`.
    #[default]
    Gaussian,
    /// Uniform on `[−σ, σ]`.
    BoundedUniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub sigma: f64,
    pub seed: u64,
}

enum Sampler {
    Zero,
    Gaussian(Normal<f64>),
    Uniform(Uniform<f64>),
}

/// Probe points `x ± ω₀ e_i` each measured `per_point` times.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossPattern {
    pub points: Vec<DVector<f64>>,
    pub per_point: usize,
}

impl CrossPattern {
    /// Realized measurement count, `2d · ⌈n / 2d⌉`.
    pub fn total(&self) -> usize {
        self.points.len() * self.per_point
    }
}

/// `2d` points around `x` with `⌈n / 2d⌉` repetitions each. Ordered
/// `x + ω₀e₁, x − ω₀e₁, x + ω₀e₂, …`.
pub fn cross_pattern(x: &DVector<f64>, omega0: f64, n: usize) -> Result<CrossPattern, OracleError> {
    let d = x.len();
    if n < 2 * d || d == 0 {
        return Err(OracleError::TooFewMeasurements {
            requested: n,
            needed: 2 * d,
        });
    }
    let mut points = Vec::with_capacity(2 * d);
    for i in 0..d {
        for sign in [1.0, -1.0] {
            let mut p = x.clone();
            p[i] += sign * omega0;
            points.push(p);
        }
    }
    Ok(CrossPattern {
        points,
        per_point: n.div_ceil(2 * d),
    })
}

/// One batch of probe points (rows of `points`) and their noisy constraint
/// readings (rows of `values`).
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementBatch {
    pub points: DMatrix<f64>,
    pub values: DMatrix<f64>,
    pub center: DVector<f64>,
}

impl MeasurementBatch {
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }
}

/// Ground-truth bookkeeping about where the oracle was queried.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeStats {
    pub measurements: usize,
    /// Queries with `B(x, ω₀) ∩ D = ∅`.
    pub out_of_reach: usize,
    /// Queries outside `D` itself.
    pub infeasible: usize,
}

pub struct ConstraintOracle {
    polytope: Polytope,
    noise: NoiseModel,
    omega0: f64,
    tightening: Option<DVector<f64>>,
    sampler: Sampler,
    rng: ChaCha8Rng,
    stats: ProbeStats,
}

impl ConstraintOracle {
    pub fn new(polytope: Polytope, noise: NoiseModel, omega0: f64) -> Result<Self, OracleError> {
        if !(noise.sigma >= 0.0 && noise.sigma.is_finite()) {
            return Err(OracleError::InvalidNoise(format!(
                "sigma must be finite and >= 0, got {}",
                noise.sigma
            )));
        }
        if !(omega0 > 0.0 && omega0.is_finite()) {
            return Err(OracleError::InvalidNoise(format!(
                "omega0 must be positive, got {omega0}"
            )));
        }
        let sampler = if noise.sigma == 0.0 {
            Sampler::Zero
        } else {
            match noise.kind {
                NoiseKind::Gaussian => Sampler::Gaussian(
                    Normal::new(0.0, noise.sigma)
                        .map_err(|e| OracleError::InvalidNoise(e.to_string()))?,
                ),
                NoiseKind::BoundedUniform => Sampler::Uniform(
                    Uniform::new_inclusive(-noise.sigma, noise.sigma)
                        .map_err(|e| OracleError::InvalidNoise(e.to_string()))?,
                ),
            }
        };
        Ok(Self {
            polytope,
            noise,
            omega0,
            tightening: None,
            sampler,
            rng: ChaCha8Rng::seed_from_u64(noise.seed),
            stats: ProbeStats::default(),
        })
    }

    /// Offset every subsequent reading by `κ`, so the set the readings
    /// describe is `{x : Ax <= b − κ}`.
    pub fn with_tightening(mut self, kappa: DVector<f64>) -> Result<Self, OracleError> {
        check_kappa(&kappa, self.polytope.n_constraints())?;
        self.tightening = Some(kappa);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.polytope.dim()
    }

    pub fn n_constraints(&self) -> usize {
        self.polytope.n_constraints()
    }

    pub fn omega0(&self) -> f64 {
        self.omega0
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn stats(&self) -> ProbeStats {
        self.stats
    }

    fn draw(&mut self) -> f64 {
        match &self.sampler {
            Sampler::Zero => 0.0,
            Sampler::Gaussian(n) => n.sample(&mut self.rng),
            Sampler::Uniform(u) => u.sample(&mut self.rng),
        }
    }

    /// `Ax − b + η` with fresh noise per component. Never fails; a query
    /// outside the reach of `D` is counted in [`ProbeStats`].
    pub fn measure(&mut self, x: &DVector<f64>) -> DVector<f64> {
        self.stats.measurements += 1;
        if !self.polytope.contains(x, 0.0) {
            self.stats.infeasible += 1;
            if self.polytope.distance(x) > self.omega0 {
                self.stats.out_of_reach += 1;
                log::debug!("constraint query out of reach at {:?}", x.as_slice());
            }
        }
        let mut y = self.polytope.a() * x - self.polytope.b();
        for v in y.iter_mut() {
            *v += self.draw();
        }
        if let Some(k) = &self.tightening {
            y += k;
        }
        y
    }

    /// Reading against the tightened constraints `Ax <= b − κ`, i.e.
    /// `measure(x) + κ` for an explicit `κ >= 0`.
    pub fn tightened_measure(
        &mut self,
        x: &DVector<f64>,
        kappa: &DVector<f64>,
    ) -> Result<DVector<f64>, OracleError> {
        check_kappa(kappa, self.polytope.n_constraints())?;
        Ok(self.measure(x) + kappa)
    }

    /// Measures the full cross pattern around `center` with at least `n`
    /// readings in total.
    pub fn cross_batch(
        &mut self,
        center: &DVector<f64>,
        n: usize,
    ) -> Result<MeasurementBatch, OracleError> {
        if center.len() != self.dim() {
            return Err(OracleError::DimensionMismatch(format!(
                "center has {} entries, expected {}",
                center.len(),
                self.dim()
            )));
        }
        let pattern = cross_pattern(center, self.omega0, n)?;
        let total = pattern.total();
        let (d, m) = (self.dim(), self.n_constraints());
        let mut points = DMatrix::zeros(total, d);
        let mut values = DMatrix::zeros(total, m);
        let mut row = 0;
        for _ in 0..pattern.per_point {
            for p in &pattern.points {
                let y = self.measure(p);
                points.row_mut(row).copy_from(&p.transpose());
                values.row_mut(row).copy_from(&y.transpose());
                row += 1;
            }
        }
        Ok(MeasurementBatch {
            points,
            values,
            center: center.clone(),
        })
    }
}

fn check_kappa(kappa: &DVector<f64>, m: usize) -> Result<(), OracleError> {
    if kappa.len() != m {
        return Err(OracleError::DimensionMismatch(format!(
            "kappa has {} entries, expected {m}",
            kappa.len()
        )));
    }
    match kappa.iter().position(|&k| !(k >= 0.0)) {
        Some(i) => Err(OracleError::NegativeTightening(i, kappa[i])),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oracle(sigma: f64, seed: u64) -> ConstraintOracle {
        ConstraintOracle::new(
            Polytope::hypercube(2, 1.0),
            NoiseModel {
                kind: NoiseKind::Gaussian,
                sigma,
                seed,
            },
            0.01,
        )
        .unwrap()
    }

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn zero_noise_readings() {
        let mut o = oracle(0.0, 1);
        assert_eq!(o.measure(&v(&[0.0, 0.0])).as_slice(), &[-1.0, -1.0, -1.0, -1.0]);
        assert_eq!(o.measure(&v(&[1.0, 0.0])).as_slice(), &[0.0, -1.0, -2.0, -1.0]);
    }

    #[test]
    fn noise_mean_concentrates() {
        let sigma = 0.01;
        let mut o = oracle(sigma, 7);
        let n = 100_000;
        let mut sum = DVector::zeros(4);
        for _ in 0..n {
            sum += o.measure(&v(&[0.0, 0.0]));
        }
        let mean = sum / n as f64;
        let tol = 4.0 * sigma / (n as f64).sqrt();
        for c in mean.iter() {
            assert!((c + 1.0).abs() <= tol, "{c}");
        }
    }

    #[test]
    fn noise_variance_bounded() {
        for kind in [NoiseKind::Gaussian, NoiseKind::BoundedUniform] {
            let sigma = 0.5;
            let mut o = ConstraintOracle::new(
                Polytope::hypercube(1, 1.0),
                NoiseModel { kind, sigma, seed: 3 },
                0.01,
            )
            .unwrap();
            let n = 20_000;
            let samples: Vec<f64> = (0..n).map(|_| o.measure(&v(&[0.0]))[0] + 1.0).collect();
            let mean = samples.iter().sum::<f64>() / n as f64;
            let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            // chi-squared spread of the sample variance at n = 2e4 is about 1 %
            assert!(var <= sigma * sigma * 1.05, "{kind:?} var {var}");
            if kind == NoiseKind::BoundedUniform {
                assert!(samples.iter().all(|s| s.abs() <= sigma + 1e-12));
            }
        }
    }

    #[test]
    fn same_seed_same_stream() {
        let mut a = oracle(0.1, 42);
        let mut b = oracle(0.1, 42);
        let x = v(&[0.2, -0.3]);
        for _ in 0..10 {
            assert_eq!(a.measure(&x), b.measure(&x));
        }
        let mut c = oracle(0.1, 43);
        assert_ne!(a.measure(&x), c.measure(&x));
    }

    #[test]
    fn cross_pattern_counts() {
        let p = cross_pattern(&v(&[0.0, 0.0]), 0.01, 4).unwrap();
        assert_eq!(p.per_point, 1);
        assert_eq!(p.points[0].as_slice(), &[0.01, 0.0]);
        assert_eq!(p.points[1].as_slice(), &[-0.01, 0.0]);
        assert_eq!(p.points[2].as_slice(), &[0.0, 0.01]);
        assert_eq!(p.points[3].as_slice(), &[0.0, -0.01]);

        let p1 = cross_pattern(&v(&[0.0]), 0.01, 10).unwrap();
        assert_eq!((p1.points.len(), p1.per_point, p1.total()), (2, 5, 10));

        let p3 = cross_pattern(&v(&[0.0, 0.0, 0.0]), 0.01, 7).unwrap();
        assert_eq!((p3.points.len(), p3.per_point, p3.total()), (6, 2, 12));

        assert!(matches!(
            cross_pattern(&v(&[0.0, 0.0]), 0.01, 3),
            Err(OracleError::TooFewMeasurements { .. })
        ));
    }

    #[test]
    fn batch_points_stay_within_reach() {
        let mut o = oracle(0.01, 5);
        let c = v(&[0.3, -0.4]);
        let batch = o.cross_batch(&c, 9).unwrap();
        assert_eq!(batch.len(), 12);
        for r in 0..batch.len() {
            let p = batch.points.row(r).transpose();
            assert!((p - &c).amax() <= 0.01 + 1e-15);
        }
        assert_eq!(o.stats().measurements, 12);
        assert_eq!(o.stats().out_of_reach, 0);
    }

    #[test]
    fn tightening() {
        let mut a = oracle(0.0, 1);
        let x = v(&[0.0, 0.0]);
        let zero = DVector::zeros(4);
        assert_eq!(a.tightened_measure(&x, &zero).unwrap(), a.measure(&x));
        let k = DVector::from_element(4, 0.01);
        let y = a.tightened_measure(&x, &k).unwrap();
        assert!(y.iter().all(|&c| (c + 0.99).abs() < 1e-15));
        let bad = DVector::from_vec(vec![0.0, -0.1, 0.0, 0.0]);
        assert!(matches!(
            a.tightened_measure(&x, &bad),
            Err(OracleError::NegativeTightening(1, _))
        ));
    }

    #[test]
    fn tightened_boundary_moves_inward() {
        // Walk along the ray t·e₁ and find where the first reading changes sign.
        let mut o = oracle(0.0, 1)
            .with_tightening(DVector::from_element(4, 0.01))
            .unwrap();
        let mut crossing = None;
        let steps = 10_000;
        for k in 0..=steps {
            let t = k as f64 / steps as f64;
            if o.measure(&v(&[t, 0.0]))[0] > 0.0 {
                crossing = Some(t);
                break;
            }
        }
        let t = crossing.unwrap();
        assert!((t - 0.99).abs() <= 1.0 / steps as f64 + 1e-12, "{t}");
    }

    #[test]
    fn out_of_reach_queries_are_counted() {
        let mut o = oracle(0.0, 1);
        o.measure(&v(&[1.005, 0.0]));
        assert_eq!(o.stats().infeasible, 1);
        assert_eq!(o.stats().out_of_reach, 0);
        o.measure(&v(&[1.5, 0.0]));
        assert_eq!(o.stats().out_of_reach, 1);
    }
}
