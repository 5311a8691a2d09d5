//! Discrete-time agent plant: propagation, GPS/IMU measurement generation with
//! optional spoofing injection, and physical bound checks.
//!
//! State layout for the planar double integrator is `[rx, ry, vx, vy]`. The
//! first two components are always treated as position and the next two as
//! velocity.

use nalgebra::{DMatrix, DVector, Vector2};

use crate::linalg::{is_symmetric, min_eigenvalue, psd_factor};
use crate::noise::NoiseSource;
use crate::{Error, Result};

/// System, input and output matrices plus noise covariances of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c_gps: DMatrix<f64>,
    pub c_imu: DMatrix<f64>,
    pub sigma_w: DMatrix<f64>,
    pub sigma_gps: DMatrix<f64>,
    pub sigma_imu: DMatrix<f64>,
    /// Speed bound (m/s).
    pub v_max: f64,
    /// Acceleration bound (m/s²).
    pub a_max: f64,
    /// Sampling period (s).
    pub dt: f64,
    /// Clamp the true plant's speed to `v_max` after every step.
    pub enforce_speed_limit: bool,
}

impl AgentModel {
    /// Planar double integrator with GPS position and IMU velocity-increment
    /// outputs.
    pub fn double_integrator(dt: f64) -> Self {
        let mut a = DMatrix::identity(4, 4);
        a[(0, 2)] = dt;
        a[(1, 3)] = dt;
        let mut b = DMatrix::zeros(4, 2);
        b[(2, 0)] = dt;
        b[(3, 1)] = dt;
        let mut c_gps = DMatrix::zeros(2, 4);
        c_gps[(0, 0)] = 1.0;
        c_gps[(1, 1)] = 1.0;
        let mut c_imu = DMatrix::zeros(2, 4);
        c_imu[(0, 2)] = 1.0;
        c_imu[(1, 3)] = 1.0;
        Self {
            a,
            b,
            c_gps,
            c_imu,
            sigma_w: DMatrix::identity(4, 4) * 0.1,
            sigma_gps: DMatrix::identity(2, 2),
            sigma_imu: DMatrix::identity(2, 2) * 0.01,
            v_max: 5.0,
            a_max: 2.0,
            dt,
            enforce_speed_limit: true,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn gps_dim(&self) -> usize {
        self.c_gps.nrows()
    }

    pub fn imu_dim(&self) -> usize {
        self.c_imu.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        if !self.a.is_square() {
            return Err(Error::dim("model.a", "square", format!("{:?}", self.a.shape())));
        }
        if n < 4 {
            return Err(Error::config("model.a", "state must hold planar position and velocity (n >= 4)"));
        }
        if self.b.nrows() != n {
            return Err(Error::dim("model.b rows", n, self.b.nrows()));
        }
        if self.c_gps.ncols() != n {
            return Err(Error::dim("model.c_gps cols", n, self.c_gps.ncols()));
        }
        if self.c_imu.ncols() != n {
            return Err(Error::dim("model.c_imu cols", n, self.c_imu.ncols()));
        }
        check_cov("model.sigma_w", &self.sigma_w, n, false)?;
        check_cov("model.sigma_gps", &self.sigma_gps, self.gps_dim(), true)?;
        check_cov("model.sigma_imu", &self.sigma_imu, self.imu_dim(), true)?;
        for (name, v) in [("model.v_max", self.v_max), ("model.a_max", self.a_max), ("model.dt", self.dt)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(name, "must be finite and positive"));
            }
        }
        Ok(())
    }
}

impl Default for AgentModel {
    fn default() -> Self {
        Self::double_integrator(0.1)
    }
}

fn check_cov(path: &str, m: &DMatrix<f64>, n: usize, definite: bool) -> Result<()> {
    if m.shape() != (n, n) {
        return Err(Error::Dimension {
            context: "covariance",
            expected: format!("{n}x{n} for {path}"),
            actual: format!("{:?}", m.shape()),
        });
    }
    if !is_symmetric(m, 1e-12 * m.amax().max(1.0)) {
        return Err(Error::config(path, "covariance must be symmetric"));
    }
    let lo = min_eigenvalue(m);
    if definite && lo <= 0.0 {
        return Err(Error::config(path, "covariance must be positive definite"));
    }
    if !definite && lo < -1e-12 {
        return Err(Error::config(path, "covariance must be positive semi-definite"));
    }
    Ok(())
}

/// True plant state at tick `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueState {
    pub x: DVector<f64>,
    pub k: u64,
}

impl TrueState {
    pub fn new(x: DVector<f64>) -> Self {
        Self { x, k: 0 }
    }

    pub fn position(&self) -> Vector2<f64> {
        position_of(&self.x)
    }

    pub fn velocity(&self) -> Vector2<f64> {
        velocity_of(&self.x)
    }
}

pub fn position_of(x: &DVector<f64>) -> Vector2<f64> {
    Vector2::new(x[0], x[1])
}

pub fn velocity_of(x: &DVector<f64>) -> Vector2<f64> {
    Vector2::new(x[2], x[3])
}

/// One tick's GPS and IMU readings and the spoof signal that went into them.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementPair {
    pub y_gps: DVector<f64>,
    pub y_imu: DVector<f64>,
    pub spoof: DVector<f64>,
}

impl MeasurementPair {
    /// `[y_gps; y_imu]`.
    pub fn stacked(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.y_gps.len() + self.y_imu.len());
        out.rows_mut(0, self.y_gps.len()).copy_from(&self.y_gps);
        out.rows_mut(self.y_gps.len(), self.y_imu.len()).copy_from(&self.y_imu);
        out
    }
}

/// Scales `v` radially onto the ball of radius `bound` when it lies outside.
/// Returns the (possibly) scaled vector and whether scaling happened.
pub fn clamp_norm(v: &DVector<f64>, bound: f64) -> (DVector<f64>, bool) {
    let n = v.norm();
    if n > bound {
        (v * (bound / n), true)
    } else {
        (v.clone(), false)
    }
}

/// Outcome of [`step`].
#[derive(Debug, Clone, PartialEq)]
pub struct PlantStep {
    pub state: TrueState,
    /// The applied input (after clamping).
    pub input: DVector<f64>,
    pub input_clamped: bool,
    pub speed_clamped: bool,
}

/// `x_{k+1} = A x_k + B u_k + w_k`, `w_k ~ N(0, Σ_w)`.
pub fn step(model: &AgentModel, x: &TrueState, u: &DVector<f64>, rng: &mut NoiseSource) -> Result<PlantStep> {
    let n = model.state_dim();
    if x.x.len() != n {
        return Err(Error::dim("step state", n, x.x.len()));
    }
    if u.len() != model.input_dim() {
        return Err(Error::dim("step input", model.input_dim(), u.len()));
    }
    let (u, input_clamped) = clamp_norm(u, model.a_max);
    if input_clamped {
        log::debug!("tick {}: input clamped to a_max = {}", x.k, model.a_max);
    }
    let w = if rng.is_enabled() {
        rng.gaussian_with_factor(&psd_factor(&model.sigma_w)?)
    } else {
        DVector::zeros(n)
    };
    let mut next = &model.a * &x.x + &model.b * &u + w;
    let mut speed_clamped = false;
    if model.enforce_speed_limit {
        let v = velocity_of(&next);
        let speed = v.norm();
        if speed > model.v_max {
            let scaled = v * (model.v_max / speed);
            next[2] = scaled[0];
            next[3] = scaled[1];
            speed_clamped = true;
            log::debug!("tick {}: plant speed {speed:.3} clamped to v_max", x.k + 1);
        }
    }
    Ok(PlantStep {
        state: TrueState { x: next, k: x.k + 1 },
        input: u,
        input_clamped,
        speed_clamped,
    })
}

/// GPS and IMU outputs with the spoof signal `d` added to the GPS channel.
///
/// `y_gps = C_g x + d + v_g`, `y_imu = C_i (x - x_prev) + v_i`. The GPS and IMU
/// noises come from separate streams.
pub fn measure(
    model: &AgentModel,
    x: &TrueState,
    x_prev: &TrueState,
    d: &DVector<f64>,
    gps_noise: &mut NoiseSource,
    imu_noise: &mut NoiseSource,
) -> Result<MeasurementPair> {
    let n = model.state_dim();
    if x.x.len() != n || x_prev.x.len() != n {
        return Err(Error::dim("measure state", n, x.x.len().max(x_prev.x.len())));
    }
    if d.len() != model.gps_dim() {
        return Err(Error::dim("measure spoof signal", model.gps_dim(), d.len()));
    }
    let v_g = gps_noise.gaussian(&model.sigma_gps)?;
    let v_i = imu_noise.gaussian(&model.sigma_imu)?;
    Ok(MeasurementPair {
        y_gps: &model.c_gps * &x.x + d + v_g,
        y_imu: &model.c_imu * (&x.x - &x_prev.x) + v_i,
        spoof: d.clone(),
    })
}

/// Whether the agent is inside the spoofer's effective range (boundary
/// inclusive).
pub fn in_spoof_range(attacker: &Vector2<f64>, x: &TrueState, r_effect: f64) -> Result<bool> {
    if !(r_effect >= 0.0) {
        return Err(Error::config("attacker.r_effect", "must be non-negative"));
    }
    Ok((x.position() - attacker).norm() <= r_effect)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(v: [f64; 4]) -> TrueState {
        TrueState::new(DVector::from_row_slice(&v))
    }

    fn quiet() -> NoiseSource {
        NoiseSource::disabled()
    }

    #[test]
    fn zero_state_is_fixed_point() {
        let m = AgentModel::default();
        let out = step(&m, &state([0.0; 4]), &DVector::zeros(2), &mut quiet()).unwrap();
        assert_eq!(out.state.x, DVector::zeros(4));
        assert_eq!(out.state.k, 1);
    }

    #[test]
    fn velocity_integrates_into_position() {
        let m = AgentModel::default();
        // independent multiply: row 0 of A is [1 0 0.1 0]
        let out = step(&m, &state([0.0, 0.0, 1.0, 0.0]), &DVector::zeros(2), &mut quiet()).unwrap();
        let expected = [1.0 * 0.0 + 0.1 * 1.0, 0.0, 1.0, 0.0];
        for (got, want) in out.state.x.iter().zip(expected) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn input_enters_velocity() {
        let m = AgentModel::default();
        let out = step(&m, &state([0.0; 4]), &DVector::from_row_slice(&[2.0, 0.0]), &mut quiet()).unwrap();
        assert!((out.state.x[2] - 0.2).abs() < 1e-15);
        assert_eq!(out.state.x[0], 0.0);
        assert!(!out.input_clamped);
    }

    #[test]
    fn oversized_input_is_scaled_radially() {
        let m = AgentModel::default();
        let out = step(&m, &state([0.0; 4]), &DVector::from_row_slice(&[3.0, 4.0]), &mut quiet()).unwrap();
        assert!(out.input_clamped);
        assert!((out.input.norm() - 2.0).abs() < 1e-12);
        assert!((out.input[0] / out.input[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn plant_speed_is_clamped() {
        let m = AgentModel::default();
        let out = step(&m, &state([0.0, 0.0, 5.0, 0.0]), &DVector::from_row_slice(&[2.0, 0.0]), &mut quiet()).unwrap();
        assert!(out.speed_clamped);
        assert!((out.state.velocity().norm() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let m = AgentModel::default();
        let err = step(&m, &state([0.0; 4]), &DVector::zeros(3), &mut quiet()).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn measurement_examples() {
        let m = AgentModel::default();
        let zero = DVector::zeros(2);
        let p = measure(&m, &state([1.0, 2.0, 0.0, 0.0]), &state([1.0, 2.0, 0.0, 0.0]), &zero, &mut quiet(), &mut quiet()).unwrap();
        assert_eq!(p.y_gps.as_slice(), &[1.0, 2.0]);
        assert_eq!(p.y_imu.as_slice(), &[0.0, 0.0]);

        let d = DVector::from_row_slice(&[10.0, 10.0]);
        let p = measure(&m, &state([200.0, 200.0, 0.0, 0.0]), &state([200.0, 200.0, 0.0, 0.0]), &d, &mut quiet(), &mut quiet()).unwrap();
        assert_eq!(p.y_gps.as_slice(), &[210.0, 210.0]);

        let p = measure(&m, &state([0.1, 0.0, 1.0, 0.0]), &state([0.0, 0.0, 1.0, 0.0]), &zero, &mut quiet(), &mut quiet()).unwrap();
        // C_i selects the velocity rows: the velocity did not change.
        assert_eq!(p.y_imu.as_slice(), &[0.0, 0.0]);
        let p = measure(&m, &state([0.1, 0.0, 1.0, 0.0]), &state([0.0, 0.0, 0.0, 0.0]), &zero, &mut quiet(), &mut quiet()).unwrap();
        assert_eq!(p.y_imu.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn spoof_range_membership() {
        let att = Vector2::new(200.0, 200.0);
        assert!(in_spoof_range(&att, &state([200.0, 200.0, 0.0, 0.0]), 30.0).unwrap());
        assert!(!in_spoof_range(&att, &state([231.0, 200.0, 0.0, 0.0]), 30.0).unwrap());
        assert!(in_spoof_range(&att, &state([200.0, 230.0, 0.0, 0.0]), 30.0).unwrap());
        assert!(in_spoof_range(&att, &state([0.0; 4]), -1.0).is_err());
    }

    #[test]
    fn default_model_validates() {
        AgentModel::default().validate().unwrap();
        let mut bad = AgentModel::default();
        bad.sigma_gps = DMatrix::zeros(2, 2);
        assert!(bad.validate().is_err());
    }
}
