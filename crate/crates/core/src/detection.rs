//! GPS spoofing detection: attack-vector estimate, normalised χ² statistic and
//! a CUSUM test with forgetting factor.

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::gamma_ur;

use crate::dynamics::AgentModel;
use crate::linalg::{mahalanobis_sq, symmetrize};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Trusted,
    Attacked,
}

impl Decision {
    pub fn is_attacked(self) -> bool {
        matches!(self, Decision::Attacked)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorState {
    /// CUSUM statistic, never negative.
    pub s: f64,
    pub delta: f64,
    pub alpha: f64,
    pub df: usize,
    pub threshold: f64,
    pub decision: Decision,
}

impl DetectorState {
    /// `S₀ = 0`, threshold `χ²_df(α) / (1 − δ)`.
    pub fn new(alpha: f64, delta: f64, df: usize) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::config("detector.delta", format!("forgetting factor {delta} must lie in (0, 1)")));
        }
        let q = chi2_quantile(alpha, df)?;
        Ok(Self {
            s: 0.0,
            delta,
            alpha,
            df,
            threshold: q / (1.0 - delta),
            decision: Decision::Trusted,
        })
    }
}

/// `d̂ = y_gps − C_g (A x̂⁻ + B u⁻)`. Must be fed the *previous* estimate.
pub fn estimate_attack(y_gps: &DVector<f64>, x_hat_prev: &DVector<f64>, u_prev: &DVector<f64>, model: &AgentModel) -> Result<DVector<f64>> {
    if y_gps.len() != model.gps_dim() {
        return Err(Error::dim("GPS measurement", model.gps_dim(), y_gps.len()));
    }
    if x_hat_prev.len() != model.state_dim() {
        return Err(Error::dim("previous estimate", model.state_dim(), x_hat_prev.len()));
    }
    if u_prev.len() != model.input_dim() {
        return Err(Error::dim("previous input", model.input_dim(), u_prev.len()));
    }
    Ok(y_gps - &model.c_gps * (&model.a * x_hat_prev + &model.b * u_prev))
}

/// `P^d = C_g (A P Aᵀ + Σ_w) C_gᵀ + Σ_G`.
pub fn innovation_cov(model: &AgentModel, p_prev: &DMatrix<f64>) -> DMatrix<f64> {
    let pred = &model.a * p_prev * model.a.transpose() + &model.sigma_w;
    let mut pd = &model.c_gps * pred * model.c_gps.transpose() + &model.sigma_gps;
    symmetrize(&mut pd);
    pd
}

/// `d̂ᵀ (P^d)⁻¹ d̂`.
pub fn normalized_statistic(d_hat: &DVector<f64>, p_d: &DMatrix<f64>) -> Result<f64> {
    mahalanobis_sq(d_hat, p_d, "attack innovation covariance")
}

/// One CUSUM step. At exact equality with the threshold the previous decision
/// is kept.
pub fn cusum_step(det: &DetectorState, d_hat: &DVector<f64>, p_d: &DMatrix<f64>) -> Result<(DetectorState, Decision)> {
    let c = normalized_statistic(d_hat, p_d)?;
    let s = (det.delta * det.s + c).max(0.0);
    let decision = if s > det.threshold {
        Decision::Attacked
    } else if s < det.threshold {
        Decision::Trusted
    } else {
        det.decision
    };
    Ok((DetectorState { s, decision, ..det.clone() }, decision))
}

/// Upper-tail χ² quantile: `q` with `P[χ²_df > q] = α`.
///
/// Bisection on the regularised upper incomplete gamma function to an
/// absolute tolerance of 1e-10.
pub fn chi2_quantile(alpha: f64, df: usize) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config("detector.alpha", format!("significance {alpha} must lie in (0, 1)")));
    }
    if df == 0 {
        return Err(Error::config("detector.df", "degrees of freedom must be at least 1"));
    }
    let k = df as f64 / 2.0;
    let tail = |q: f64| gamma_ur(k, q / 2.0);
    let mut lo = 0.0;
    let mut hi = df as f64 + 10.0;
    while tail(hi) > alpha {
        hi *= 2.0;
    }
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if tail(mid) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::min_eigenvalue;

    #[test]
    fn quantile_closed_forms() {
        for alpha in [0.5, 0.1, 0.05, 0.01, 1e-4] {
            assert!((chi2_quantile(alpha, 2).unwrap() + 2.0 * f64::ln(alpha)).abs() < 1e-8);
        }
        assert!((chi2_quantile(0.01, 2).unwrap() - 9.21034).abs() < 1e-5);
        assert!((chi2_quantile(0.5, 2).unwrap() - 1.38629).abs() < 1e-5);
    }

    // df = 4: the survival function is e^{-q/2}(1 + q/2). Solve by Newton.
    #[test]
    fn quantile_df4_against_series_oracle() {
        let alpha = 0.01;
        let mut q = 10.0;
        for _ in 0..50 {
            let f = (-q / 2.0f64).exp() * (1.0 + q / 2.0) - alpha;
            let df = -(-q / 2.0f64).exp() * q / 4.0;
            q -= f / df;
        }
        assert!((q - 13.2767).abs() < 1e-4);
        assert!((chi2_quantile(alpha, 4).unwrap() - q).abs() < 1e-8);
    }

    #[test]
    fn quantile_rejects_bad_inputs() {
        assert!(chi2_quantile(0.0, 2).is_err());
        assert!(chi2_quantile(1.0, 2).is_err());
        assert!(chi2_quantile(0.01, 0).is_err());
        assert!(DetectorState::new(0.01, 1.0, 2).is_err());
    }

    #[test]
    fn threshold_for_reference_parameters() {
        let det = DetectorState::new(0.01, 0.15, 2).unwrap();
        assert!((det.threshold - 9.21034 / 0.85).abs() < 1e-4);
        assert!((det.threshold - 10.836).abs() < 1e-3);
    }

    #[test]
    fn zero_input_decays() {
        let mut det = DetectorState::new(0.01, 0.15, 2).unwrap();
        det.s = 7.0;
        let pd = DMatrix::identity(2, 2);
        for k in 1..=20 {
            let (next, decision) = cusum_step(&det, &DVector::zeros(2), &pd).unwrap();
            assert_eq!(decision, Decision::Trusted);
            assert!((next.s - 7.0 * 0.15f64.powi(k)).abs() < 1e-12);
            det = next;
        }
    }

    #[test]
    fn constant_statistic_reaches_geometric_limit() {
        let pd = DMatrix::identity(2, 2);
        for c in [5.0f64, 9.0, 9.5, 12.0] {
            let mut det = DetectorState::new(0.01, 0.15, 2).unwrap();
            let d = DVector::from_row_slice(&[c.sqrt(), 0.0]);
            let mut decision = Decision::Trusted;
            for _ in 0..200 {
                (det, decision) = cusum_step(&det, &d, &pd).unwrap();
            }
            assert!((det.s - c / 0.85).abs() < 1e-9);
            assert_eq!(decision.is_attacked(), c > chi2_quantile(0.01, 2).unwrap());
        }
    }

    #[test]
    fn equality_keeps_previous_decision() {
        let mut det = DetectorState::new(0.01, 0.15, 2).unwrap();
        det.threshold = 4.0;
        let pd = DMatrix::identity(2, 2);
        let d = DVector::from_row_slice(&[2.0, 0.0]);
        let (next, decision) = cusum_step(&det, &d, &pd).unwrap();
        assert_eq!(next.s, 4.0);
        assert_eq!(decision, Decision::Trusted);
        det.decision = Decision::Attacked;
        assert_eq!(cusum_step(&det, &d, &pd).unwrap().1, Decision::Attacked);
    }

    #[test]
    fn innovation_covariance_cases() {
        let model = AgentModel::default();
        let zero = DMatrix::zeros(4, 4);
        let pd = innovation_cov(&model, &zero);
        let want = &model.c_gps * &model.sigma_w * model.c_gps.transpose() + &model.sigma_gps;
        assert!((pd - want).abs().max() < 1e-15);

        let mut quiet = model.clone();
        quiet.sigma_w = DMatrix::zeros(4, 4);
        assert_eq!(innovation_cov(&quiet, &zero), model.sigma_gps);

        // P = I: position block of A Aᵀ is 1 + dt², plus 0.1 + 1.
        let pd = innovation_cov(&model, &DMatrix::identity(4, 4));
        assert!((pd[(0, 0)] - (1.0 + 0.01 + 0.1 + 1.0)).abs() < 1e-12);
        assert!(pd[(0, 1)].abs() < 1e-15);
        assert!(min_eigenvalue(&pd) > 0.0);
    }

    #[test]
    fn perfect_prediction_and_injected_attack() {
        let model = AgentModel::default();
        let x = DVector::from_row_slice(&[10.0, 20.0, 1.0, -1.0]);
        let u = DVector::from_row_slice(&[0.5, 0.5]);
        let next = &model.a * &x + &model.b * &u;
        let y = &model.c_gps * &next;
        assert!(estimate_attack(&y, &x, &u, &model).unwrap().norm() < 1e-12);
        let spoofed = y + DVector::from_row_slice(&[10.0, 10.0]);
        let d = estimate_attack(&spoofed, &x, &u, &model).unwrap();
        assert!((d - DVector::from_row_slice(&[10.0, 10.0])).norm() < 1e-12);
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn statistic_is_nonnegative_and_decision_matches_threshold(
            draws in prop::collection::vec((-50.0..50.0f64, -50.0..50.0f64), 1..100),
            scale in 0.01..10.0f64,
        ) {
            let mut det = DetectorState::new(0.01, 0.15, 2).unwrap();
            let p_d = DMatrix::identity(2, 2) * scale;
            for (a, b) in draws {
                let (next, decision) = cusum_step(&det, &DVector::from_row_slice(&[a, b]), &p_d).unwrap();
                prop_assert!(next.s >= 0.0);
                prop_assert!(next.s >= det.delta * det.s);
                if next.s > det.threshold {
                    prop_assert_eq!(decision, Decision::Attacked);
                } else if next.s < det.threshold {
                    prop_assert_eq!(decision, Decision::Trusted);
                }
                det = next;
            }
        }
    }
}
