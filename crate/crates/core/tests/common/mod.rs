#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use sfw_core::estimator::EstimatorState;
use sfw_core::lp::LpProblem;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Estimator fed with `n` uniform points in `[-1, 1]^d` and noisy readings of
/// random affine constraints that hold at the origin.
pub fn random_state(rng: &mut ChaCha8Rng, d: usize, m: usize, n: usize) -> EstimatorState {
    let mut beta = DMatrix::from_fn(d + 1, m, |_, _| rng.random_range(-1.0..1.0));
    for i in 0..m {
        beta[(d, i)] = rng.random_range(0.5..1.5);
    }
    let mut s = EstimatorState::new(d, m);
    for _ in 0..n {
        let x = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        let mut v = DVector::zeros(d + 1);
        v.rows_mut(0, d).copy_from(&x);
        v[d] = -1.0;
        let y = beta.transpose() * v + gaussian_vec(rng, m) * 0.05;
        s.absorb(&x, &y).unwrap();
    }
    s
}

/// `(X̄ᵀX̄)⁻¹ X̄ᵀY` from the stored rows by a fresh dense solve.
pub fn dense_lse(s: &EstimatorState) -> DMatrix<f64> {
    let d = s.dim();
    let n = s.count();
    let mut x = DMatrix::zeros(n, d + 1);
    let mut y = DMatrix::zeros(n, s.n_constraints());
    for (r, (p, v)) in s.points().iter().zip(s.values()).enumerate() {
        x.view_mut((r, 0), (1, d)).copy_from(&p.transpose());
        x[(r, d)] = -1.0;
        y.row_mut(r).copy_from(&v.transpose());
    }
    let gram = x.transpose() * &x;
    let rhs = x.transpose() * y;
    gram.lu().solve(&rhs).expect("design spans")
}

/// Random bounded polytope containing the origin in its interior: a box with
/// random half-widths plus random cuts with positive offsets.
pub fn random_polytope(rng: &mut ChaCha8Rng, d: usize, m: usize) -> (DMatrix<f64>, DVector<f64>) {
    assert!(m >= 2 * d);
    let mut a = DMatrix::zeros(m, d);
    let mut b = DVector::zeros(m);
    for i in 0..d {
        a[(i, i)] = 1.0;
        a[(d + i, i)] = -1.0;
        b[i] = rng.random_range(0.5..2.0);
        b[d + i] = rng.random_range(0.5..2.0);
    }
    for r in 2 * d..m {
        let row = gaussian_vec(rng, d).normalize();
        a.row_mut(r).copy_from(&row.transpose());
        b[r] = rng.random_range(0.2..1.5);
    }
    (a, b)
}

pub fn random_lp(rng: &mut ChaCha8Rng, d: usize, m: usize) -> LpProblem {
    let (a, b) = random_polytope(rng, d, m);
    LpProblem::new(gaussian_vec(rng, d), a, b).unwrap()
}
