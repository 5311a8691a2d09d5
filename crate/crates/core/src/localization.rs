//! Sliding-window unscented Kalman filter.
//!
//! The measurement update stacks the last `M` outputs. Slot `j` (0 = newest)
//! is predicted by mapping each sigma point back `j` ticks through `A⁻¹`
//! before applying the output function. Used to localise the spoofer from
//! received signal strength, but generic over the output model.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, Vector2};

use crate::linalg::{psd_factor, solve_right_spd, symmetrize};
use crate::{Error, Result};

/// Output function `y = f(x; context)`; the context is the observer position
/// at the time of the sample.
pub trait OutputModel {
    fn output_dim(&self) -> usize;
    fn eval(&self, x: &DVector<f64>, context: &Vector2<f64>) -> DVector<f64>;
}

/// Free-space received power in dB: `p0 − 20 log10(max(D, d0) / d0)` with `D`
/// the distance from the observer to the emitter at `x[0..2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalModel {
    pub p0: f64,
    pub d0: f64,
}

impl SignalModel {
    pub fn new(p0: f64, d0: f64) -> Result<Self> {
        if !(d0 > 0.0 && d0.is_finite() && p0.is_finite()) {
            return Err(Error::config("localization.d0", "reference distance must be positive"));
        }
        Ok(Self { p0, d0 })
    }

    pub fn power(&self, emitter: &Vector2<f64>, observer: &Vector2<f64>) -> f64 {
        let d = (emitter - observer).norm().max(self.d0);
        self.p0 - 20.0 * (d / self.d0).log10()
    }
}

impl Default for SignalModel {
    fn default() -> Self {
        Self { p0: -30.0, d0: 1.0 }
    }
}

impl OutputModel for SignalModel {
    fn output_dim(&self) -> usize {
        1
    }

    fn eval(&self, x: &DVector<f64>, context: &Vector2<f64>) -> DVector<f64> {
        DVector::from_element(1, self.power(&Vector2::new(x[0], x[1]), context))
    }
}

/// `y = H x`, context ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearOutput {
    pub h: DMatrix<f64>,
}

impl OutputModel for LinearOutput {
    fn output_dim(&self) -> usize {
        self.h.nrows()
    }

    fn eval(&self, x: &DVector<f64>, _context: &Vector2<f64>) -> DVector<f64> {
        &self.h * x
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub y: DVector<f64>,
    pub context: Vector2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UkfState {
    pub x_hat: DVector<f64>,
    pub p: DMatrix<f64>,
    pub a_loc: DMatrix<f64>,
    pub sigma_wp: DMatrix<f64>,
    /// Per-sample measurement covariance.
    pub sigma_v: DMatrix<f64>,
    pub window_len: usize,
    /// Newest sample first.
    pub window: VecDeque<Sample>,
    /// Set when the last update had to regularise a singular `P^y`.
    pub regularized: bool,
    a_inv: DMatrix<f64>,
}

impl UkfState {
    pub fn new(
        x_hat: DVector<f64>,
        p: DMatrix<f64>,
        a_loc: DMatrix<f64>,
        sigma_wp: DMatrix<f64>,
        sigma_v: DMatrix<f64>,
        window_len: usize,
    ) -> Result<Self> {
        let n = x_hat.len();
        for (what, m) in [("covariance", &p), ("transition", &a_loc), ("process noise", &sigma_wp)] {
            if m.shape() != (n, n) {
                return Err(Error::dim("localization matrices", format!("{what} {n}x{n}"), format!("{:?}", m.shape())));
            }
        }
        if window_len == 0 {
            return Err(Error::config("localization.window", "window length must be at least 1"));
        }
        let a_inv = a_loc
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::config("localization.a_loc", "transition matrix must be invertible"))?;
        Ok(Self {
            x_hat,
            p,
            a_loc,
            sigma_wp,
            sigma_v,
            window_len,
            window: VecDeque::with_capacity(window_len),
            regularized: false,
            a_inv,
        })
    }

    /// Static emitter in the plane: `A = I`.
    pub fn static_emitter(prior: Vector2<f64>, p0: DMatrix<f64>, sigma_wp: DMatrix<f64>, sigma_v: f64, window_len: usize) -> Result<Self> {
        Self::new(
            DVector::from_row_slice(prior.as_slice()),
            p0,
            DMatrix::identity(2, 2),
            sigma_wp,
            DMatrix::from_element(1, 1, sigma_v),
            window_len,
        )
    }

    pub fn push_sample(&mut self, y: DVector<f64>, context: Vector2<f64>) {
        self.window.push_front(Sample { y, context });
        self.window.truncate(self.window_len);
    }

    pub fn window_full(&self) -> bool {
        self.window.len() == self.window_len
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.x_hat[0], self.x_hat[1])
    }
}

/// `x̂ ← A x̂`, `P ← A P Aᵀ + Σ_w'`.
pub fn ukf_predict(st: &UkfState) -> UkfState {
    let mut next = st.clone();
    next.x_hat = &st.a_loc * &st.x_hat;
    next.p = &st.a_loc * &st.p * st.a_loc.transpose() + &st.sigma_wp;
    symmetrize(&mut next.p);
    next
}

/// `x̂ ± columns of √n L` with `L Lᵀ = P`; equivalently rows of a factor `S`
/// with `SᵀS = nP`.
pub fn sigma_points(x_hat: &DVector<f64>, p: &DMatrix<f64>) -> Result<Vec<DVector<f64>>> {
    let n = x_hat.len();
    let l = psd_factor(p)? * (n as f64).sqrt();
    let mut pts = Vec::with_capacity(2 * n);
    for i in 0..n {
        pts.push(x_hat + l.column(i));
    }
    for i in 0..n {
        pts.push(x_hat - l.column(i));
    }
    Ok(pts)
}

/// Measurement update over a window of samples, newest first.
pub fn ukf_update<F: OutputModel>(st: &UkfState, samples: &[Sample], model: &F) -> Result<UkfState> {
    if samples.is_empty() || samples.len() > st.window_len {
        return Err(Error::Contract(format!("window holds {} samples, expected 1..={}", samples.len(), st.window_len)));
    }
    let n = st.x_hat.len();
    let py = model.output_dim();
    if st.sigma_v.shape() != (py, py) {
        return Err(Error::dim("signal noise covariance", format!("{py}x{py}"), format!("{:?}", st.sigma_v.shape())));
    }
    let m = samples.len();
    let pts = sigma_points(&st.x_hat, &st.p)?;
    let w = 1.0 / pts.len() as f64;

    let y_pts: Vec<DVector<f64>> = pts
        .iter()
        .map(|x| {
            let mut out = DVector::zeros(m * py);
            let mut back = x.clone();
            for (j, s) in samples.iter().enumerate() {
                if j > 0 {
                    back = &st.a_inv * back;
                }
                out.rows_mut(j * py, py).copy_from(&model.eval(&back, &s.context));
            }
            out
        })
        .collect();
    let y_bar = y_pts.iter().fold(DVector::zeros(m * py), |acc, y| acc + y) * w;

    let mut p_y = DMatrix::zeros(m * py, m * py);
    let mut p_xy = DMatrix::zeros(n, m * py);
    for (x, y) in pts.iter().zip(&y_pts) {
        let dy = y - &y_bar;
        let dx = x - &st.x_hat;
        p_y += &dy * dy.transpose() * w;
        p_xy += dx * dy.transpose() * w;
    }
    for j in 0..m {
        let mut block = p_y.view_mut((j * py, j * py), (py, py));
        block += &st.sigma_v;
    }
    symmetrize(&mut p_y);

    let mut y = DVector::zeros(m * py);
    for (j, s) in samples.iter().enumerate() {
        if s.y.len() != py {
            return Err(Error::dim("signal sample", py, s.y.len()));
        }
        y.rows_mut(j * py, py).copy_from(&s.y);
    }

    let mut regularized = false;
    let k = match solve_right_spd(&p_xy, &p_y, "window output covariance") {
        Ok(k) => k,
        Err(_) => {
            regularized = true;
            log::warn!("singular window output covariance; regularising");
            let reg = &p_y + DMatrix::identity(m * py, m * py) * 1e-9;
            solve_right_spd(&p_xy, &reg, "regularised window output covariance")?
        }
    };
    let mut next = st.clone();
    next.x_hat = &st.x_hat + &k * (y - y_bar);
    next.p = &st.p - &k * &p_y * k.transpose();
    symmetrize(&mut next.p);
    next.regularized = regularized;
    Ok(next)
}

impl UkfState {
    /// Predict, then update with the current window.
    pub fn step<F: OutputModel>(&self, model: &F) -> Result<UkfState> {
        let pred = ukf_predict(self);
        let samples: Vec<Sample> = self.window.iter().cloned().collect();
        ukf_update(&pred, &samples, model)
    }
}
