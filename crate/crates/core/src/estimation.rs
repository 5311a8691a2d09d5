//! Resilient dual-mode state estimation.
//!
//! The estimator is Kalman-like but works with a stacked output
//! `y = [y_gps; y_imu]` whose IMU block measures a state *difference*. With the
//! selector `D` (identity on IMU rows, zero on GPS rows) the update reads
//!
//! ```text
//! x̄  = A x̂⁻ + B u
//! x̂  = x̄ + K (y − C x̄ + D C x̂⁻)
//! P  = (A − K M) P⁻ (A − K M)ᵀ + (I − K C) Σ_w (I − K C)ᵀ + K Σ_y Kᵀ,   M = C A − D C
//! ```
//!
//! and the trace-minimising gain is
//! `K = (A P Mᵀ + Σ_w Cᵀ)(M P Mᵀ + C Σ_w Cᵀ + Σ_y)⁻¹`.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{AgentModel, MeasurementPair};
use crate::linalg::{block_diag, solve_right_spd, symmetrize};
use crate::{Error, Result};

/// Output map used by one estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedModel {
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub sigma_y: DMatrix<f64>,
}

impl StackedModel {
    /// GPS and IMU together.
    pub fn fused(model: &AgentModel) -> Self {
        let (mg, mi, n) = (model.gps_dim(), model.imu_dim(), model.state_dim());
        let mut c = DMatrix::zeros(mg + mi, n);
        c.rows_mut(0, mg).copy_from(&model.c_gps);
        c.rows_mut(mg, mi).copy_from(&model.c_imu);
        let d = block_diag(&DMatrix::zeros(mg, mg), &DMatrix::identity(mi, mi));
        Self {
            c,
            d,
            sigma_y: block_diag(&model.sigma_gps, &model.sigma_imu),
        }
    }

    /// IMU alone; the GPS gain block is identically zero.
    pub fn imu_only(model: &AgentModel) -> Self {
        let mi = model.imu_dim();
        Self {
            c: model.c_imu.clone(),
            d: DMatrix::identity(mi, mi),
            sigma_y: model.sigma_imu.clone(),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    /// `M = C A − D C`.
    fn m(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        &self.c * a - &self.d * &self.c
    }
}

/// Both output maps of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedModels {
    pub fused: StackedModel,
    pub imu_only: StackedModel,
}

impl StackedModels {
    pub fn new(model: &AgentModel) -> Self {
        Self {
            fused: StackedModel::fused(model),
            imu_only: StackedModel::imu_only(model),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorMode {
    Fused,
    ImuOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    pub x_hat: DVector<f64>,
    pub p: DMatrix<f64>,
    pub mode: EstimatorMode,
}

impl EstimatorState {
    pub fn new(x_hat: DVector<f64>, p: DMatrix<f64>) -> Self {
        Self {
            x_hat,
            p,
            mode: EstimatorMode::Fused,
        }
    }
}

/// Trace-minimising gain for the given output map.
pub fn optimal_gain(model: &AgentModel, stacked: &StackedModel, p_prev: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let a = &model.a;
    let m = stacked.m(a);
    let ct = stacked.c.transpose();
    let mt = m.transpose();
    let rhs = a * p_prev * &mt + &model.sigma_w * &ct;
    let mut s = &m * p_prev * &mt + &stacked.c * &model.sigma_w * &ct + &stacked.sigma_y;
    symmetrize(&mut s);
    solve_right_spd(&rhs, &s, "estimator innovation covariance")
}

/// Error covariance after one update with an arbitrary gain `K`.
pub fn covariance_update(model: &AgentModel, stacked: &StackedModel, k: &DMatrix<f64>, p_prev: &DMatrix<f64>) -> DMatrix<f64> {
    let n = model.state_dim();
    let f = &model.a - k * stacked.m(&model.a);
    let g = DMatrix::identity(n, n) - k * &stacked.c;
    let mut p = &f * p_prev * f.transpose() + &g * &model.sigma_w * g.transpose() + k * &stacked.sigma_y * k.transpose();
    symmetrize(&mut p);
    p
}

/// Covariance after one optimal update; no measurement needed.
pub fn propagate_covariance(model: &AgentModel, stacked: &StackedModel, p_prev: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = optimal_gain(model, stacked, p_prev)?;
    Ok(covariance_update(model, stacked, &k, p_prev))
}

/// One estimator step against an explicit output map and stacked measurement.
pub fn update_with(
    est: &EstimatorState,
    model: &AgentModel,
    stacked: &StackedModel,
    u_prev: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<EstimatorState> {
    let n = model.state_dim();
    if est.x_hat.len() != n {
        return Err(Error::dim("estimate", n, est.x_hat.len()));
    }
    if est.p.shape() != (n, n) {
        return Err(Error::dim("estimator covariance", format!("{n}x{n}"), format!("{:?}", est.p.shape())));
    }
    if u_prev.len() != model.input_dim() {
        return Err(Error::dim("estimator input", model.input_dim(), u_prev.len()));
    }
    if y.len() != stacked.output_dim() {
        return Err(Error::dim("estimator measurement", stacked.output_dim(), y.len()));
    }
    let k = optimal_gain(model, stacked, &est.p)?;
    let x_bar = &model.a * &est.x_hat + &model.b * u_prev;
    let innovation = y - &stacked.c * &x_bar + &stacked.d * (&stacked.c * &est.x_hat);
    Ok(EstimatorState {
        x_hat: x_bar + &k * innovation,
        p: covariance_update(model, stacked, &k, &est.p),
        mode: est.mode,
    })
}

/// Fused update when GPS is trusted; IMU-only update (GPS gain block zero)
/// otherwise.
pub fn update(
    est: &EstimatorState,
    model: &AgentModel,
    stacked: &StackedModels,
    u_prev: &DVector<f64>,
    y: &MeasurementPair,
    gps_trusted: bool,
) -> Result<EstimatorState> {
    let mut next = if gps_trusted {
        update_with(est, model, &stacked.fused, u_prev, &y.stacked())?
    } else {
        update_with(est, model, &stacked.imu_only, u_prev, &y.y_imu)?
    };
    next.mode = if gps_trusted { EstimatorMode::Fused } else { EstimatorMode::ImuOnly };
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::min_eigenvalue;
    use crate::noise::NoiseSource;
    use crate::{dynamics, dynamics::TrueState};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_psd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let l = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        &l * l.transpose()
    }

    fn trace_at(model: &AgentModel, st: &StackedModel, k: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
        covariance_update(model, st, k, p).trace()
    }

    #[test]
    fn gain_is_a_local_trace_minimum() {
        let model = AgentModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for st in [StackedModel::fused(&model), StackedModel::imu_only(&model)] {
            for _ in 0..5 {
                let p = random_psd(&mut rng, 4);
                let k = optimal_gain(&model, &st, &p).unwrap();
                let base = trace_at(&model, &st, &k, &p);
                for _ in 0..20 {
                    let e = DMatrix::from_fn(k.nrows(), k.ncols(), |_, _| rng.gen_range(-1.0..1.0));
                    let eps = 1e-3;
                    assert!(trace_at(&model, &st, &(&k + &e * eps), &p) >= base - 1e-8);
                    assert!(trace_at(&model, &st, &(&k - &e * eps), &p) >= base - 1e-8);
                    // first-order stationarity
                    let h = 1e-5;
                    let dd = (trace_at(&model, &st, &(&k + &e * h), &p) - trace_at(&model, &st, &(&k - &e * h), &p)) / (2.0 * h);
                    assert!(dd.abs() < 1e-6, "directional derivative {dd}");
                }
            }
        }
    }

    #[test]
    fn infinite_gps_noise_zeroes_gps_gain() {
        let mut model = AgentModel::default();
        model.sigma_gps = DMatrix::identity(2, 2) * 1e12;
        let k = optimal_gain(&model, &StackedModel::fused(&model), &DMatrix::identity(4, 4)).unwrap();
        assert!(k.columns(0, 2).norm() < 1e-6);
    }

    // Independent oracle: the gain from the normal equations solved by LU,
    // written with the measurement/error cross terms expanded.
    #[test]
    fn gain_matches_expanded_normal_equations() {
        let model = AgentModel::default();
        let st = StackedModel::fused(&model);
        let p = DMatrix::identity(4, 4);
        let a = &model.a;
        let c = &st.c;
        let m = c * a - &st.d * c;
        // E[e' νᵀ] and E[ν νᵀ] for ν = M e + C w + v and e' = A e + w
        let cross = a * &p * m.transpose() + &model.sigma_w * c.transpose();
        let innov = &m * &p * m.transpose() + c * &model.sigma_w * c.transpose() + &st.sigma_y;
        let oracle = cross * innov.lu().try_inverse().unwrap();
        let k = optimal_gain(&model, &st, &p).unwrap();
        assert!((k.clone() - oracle).abs().max() < 1e-12);
        let next = covariance_update(&model, &st, &k, &p);
        assert!(k.iter().all(|v| v.is_finite()));
        assert!(min_eigenvalue(&next) > 0.0);
    }

    #[test]
    fn zero_gain_is_open_loop() {
        let model = AgentModel::default();
        let st = StackedModel::fused(&model);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_psd(&mut rng, 4);
        let got = covariance_update(&model, &st, &DMatrix::zeros(4, 4), &p);
        let want = &model.a * &p * model.a.transpose() + &model.sigma_w;
        assert!((got - want).abs().max() < 1e-12);
    }

    #[test]
    fn fused_trace_converges_and_imu_only_grows() {
        let model = AgentModel::default();
        let st = StackedModels::new(&model);
        let mut p = DMatrix::identity(4, 4);
        let mut diff = f64::INFINITY;
        for _ in 0..500 {
            let next = propagate_covariance(&model, &st.fused, &p).unwrap();
            diff = (next.trace() - p.trace()).abs();
            p = next;
        }
        assert!(diff < 1e-6);

        let mut p = DMatrix::identity(4, 4);
        let mut prev = p.trace();
        for k in 0..500 {
            p = propagate_covariance(&model, &st.imu_only, &p).unwrap();
            assert!(p.trace() > prev, "tick {k}");
            prev = p.trace();
        }
    }

    #[test]
    fn noise_free_estimator_is_exact() {
        let model = AgentModel::default();
        let st = StackedModels::new(&model);
        let mut quiet = NoiseSource::disabled();
        let mut x = TrueState::new(DVector::from_row_slice(&[3.0, -1.0, 0.5, 0.2]));
        let mut est = EstimatorState::new(x.x.clone(), DMatrix::identity(4, 4));
        for k in 0..200 {
            let u = DVector::from_row_slice(&[(k as f64 * 0.1).sin(), (k as f64 * 0.07).cos()]);
            let next = dynamics::step(&model, &x, &u, &mut quiet).unwrap().state;
            let y = dynamics::measure(&model, &next, &x, &DVector::zeros(2), &mut quiet.clone(), &mut quiet.clone()).unwrap();
            est = update(&est, &model, &st, &u, &y, k % 3 != 0).unwrap();
            x = next;
            assert!((&est.x_hat - &x.x).abs().max() < 1e-9);
        }
    }

    #[test]
    fn dimension_errors() {
        let model = AgentModel::default();
        let st = StackedModel::fused(&model);
        let est = EstimatorState::new(DVector::zeros(4), DMatrix::identity(4, 4));
        assert!(update_with(&est, &model, &st, &DVector::zeros(2), &DVector::zeros(3)).is_err());
        assert!(update_with(&est, &model, &st, &DVector::zeros(1), &DVector::zeros(4)).is_err());
    }
}
