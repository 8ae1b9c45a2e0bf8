use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_lr;

use super::EstimatorError;

const QUANTILE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConfidenceMode {
    #[serde(rename = "subgaussian")]
    SubGaussian,
    #[default]
    Chisq,
}

/// Chi-squared CDF with `dof` degrees of freedom.
pub fn chi_squared_cdf(x: f64, dof: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        gamma_lr(dof / 2.0, x / 2.0)
    }
}

/// Inverse chi-squared CDF by bisection, absolute tolerance 1e-10 on `x`.
pub fn chi_squared_quantile(p: f64, dof: f64) -> Result<f64, EstimatorError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(EstimatorError::Radius(format!(
            "quantile level must lie in (0, 1), got {p}"
        )));
    }
    if !(dof > 0.0) {
        return Err(EstimatorError::Radius(format!(
            "degrees of freedom must be positive, got {dof}"
        )));
    }
    let mut lo = 0.0;
    let mut hi = dof.max(1.0);
    while chi_squared_cdf(hi, dof) < p {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(EstimatorError::Radius(format!("no finite quantile at {p}")));
        }
    }
    while hi - lo > QUANTILE_TOL {
        let mid = 0.5 * (lo + hi);
        if chi_squared_cdf(mid, dof) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Confidence-ellipsoid radius `φ⁻¹(δ̄)` for `n` readings in dimension `d`.
///
/// Sub-Gaussian: `max{√(128 d ln N ln(N²/δ̄)), (8/3) ln(N²/δ̄)}`, requires
/// `N e^{−1/16} ≥ δ̄`. Chi-squared: square root of the `1 − δ̄` quantile with
/// `d + 1` degrees of freedom, independent of `n`.
pub fn phi_inverse(mode: ConfidenceMode, n: usize, d: usize, delta_bar: f64) -> Result<f64, EstimatorError> {
    if !(delta_bar > 0.0 && delta_bar < 1.0) {
        return Err(EstimatorError::Radius(format!(
            "delta_bar must lie in (0, 1), got {delta_bar}"
        )));
    }
    match mode {
        ConfidenceMode::Chisq => Ok(chi_squared_quantile(1.0 - delta_bar, (d + 1) as f64)?.sqrt()),
        ConfidenceMode::SubGaussian => {
            let nf = n as f64;
            if !(nf * (-1.0f64 / 16.0).exp() >= delta_bar) {
                return Err(EstimatorError::Radius(format!(
                    "sub-Gaussian radius needs N·exp(-1/16) >= delta_bar (N = {n}, delta_bar = {delta_bar})"
                )));
            }
            let log_term = (nf * nf / delta_bar).ln();
            let first = (128.0 * d as f64 * nf.ln() * log_term).max(0.0).sqrt();
            let second = 8.0 / 3.0 * log_term;
            Ok(first.max(second))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_dof_quantile() {
        let q = chi_squared_quantile(0.95, 3.0).unwrap();
        assert!((q - 7.814727903).abs() < 1e-6);
        let phi = phi_inverse(ConfidenceMode::Chisq, 0, 2, 0.05).unwrap();
        assert!((phi - 2.7955).abs() < 1e-4);
    }

    #[test]
    fn two_dof_closed_form() {
        // chi2 with 2 dof is exponential(1/2): F⁻¹(p) = −2 ln(1 − p)
        for p in [0.1, 0.5, 0.9, 0.999] {
            let q = chi_squared_quantile(p, 2.0).unwrap();
            assert!((q + 2.0 * (1.0 - p).ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn subgaussian_first_branch_dominates() {
        let (n, d, db) = (8396usize, 2usize, 0.001675);
        let nf = n as f64;
        let first = (128.0 * 2.0 * nf.ln() * (nf * nf / db).ln()).sqrt();
        let second = 8.0 / 3.0 * (nf * nf / db).ln();
        assert!(first > second);
        let got = phi_inverse(ConfidenceMode::SubGaussian, n, d, db).unwrap();
        assert_eq!(got, first);
    }

    #[test]
    fn monotone_in_delta() {
        for mode in [ConfidenceMode::Chisq, ConfidenceMode::SubGaussian] {
            let mut prev = 0.0;
            for db in [0.5, 0.1, 0.05, 0.01, 1e-3, 1e-5] {
                let v = phi_inverse(mode, 100, 3, db).unwrap();
                assert!(v >= prev);
                prev = v;
            }
        }
    }

    #[test]
    fn precondition_errors() {
        assert!(phi_inverse(ConfidenceMode::Chisq, 10, 2, 0.0).is_err());
        assert!(phi_inverse(ConfidenceMode::Chisq, 10, 2, 1.0).is_err());
        assert!(phi_inverse(ConfidenceMode::SubGaussian, 0, 2, 0.5).is_err());
        assert!(chi_squared_quantile(0.5, 0.0).is_err());
    }
}
