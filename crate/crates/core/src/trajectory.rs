//! Cubic Bézier reference paths and virtual-target evaluation.

use nalgebra::Vector2;

use crate::{Error, Result};

/// Cubic Bézier curve through four planar control points (m).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BezierPath {
    pub p: [Vector2<f64>; 4],
}

impl BezierPath {
    pub fn new(p0: [f64; 2], p1: [f64; 2], p2: [f64; 2], p3: [f64; 2]) -> Result<Self> {
        let p = [p0, p1, p2, p3].map(|q| Vector2::new(q[0], q[1]));
        if p.iter().any(|q| !q.iter().all(|c| c.is_finite())) {
            return Err(Error::config("agents.control_points", "control points must be finite"));
        }
        Ok(Self { p })
    }

    /// Position on the curve. `s` outside `[0, 1]` is clamped.
    pub fn eval(&self, s: f64) -> Vector2<f64> {
        let s = clamp_progress(s);
        let t = 1.0 - s;
        let [p0, p1, p2, p3] = &self.p;
        p0 * (t * t * t) + p1 * (3.0 * t * t * s) + p2 * (3.0 * t * s * s) + p3 * (s * s * s)
    }

    /// `dg/ds`.
    pub fn eval_tangent(&self, s: f64) -> Vector2<f64> {
        let s = clamp_progress(s);
        let t = 1.0 - s;
        let [p0, p1, p2, p3] = &self.p;
        (p1 - p0) * (3.0 * t * t) + (p2 - p1) * (6.0 * t * s) + (p3 - p2) * (3.0 * s * s)
    }

    pub fn start(&self) -> Vector2<f64> {
        self.p[0]
    }

    pub fn end(&self) -> Vector2<f64> {
        self.p[3]
    }

    /// Polyline length estimate from `samples` uniform steps in `s`.
    pub fn length(&self, samples: usize) -> f64 {
        let samples = samples.max(1);
        (0..samples)
            .map(|i| {
                let a = self.eval(i as f64 / samples as f64);
                let b = self.eval((i + 1) as f64 / samples as f64);
                (b - a).norm()
            })
            .sum()
    }

    /// Three-agent reference mission converging on a common destination line.
    pub fn reference_paths() -> [BezierPath; 3] {
        [
            Self::from_points([[0.0, 0.0], [100.0, 100.0], [10.0, 300.0], [190.0, 400.0]]),
            Self::from_points([[200.0, 0.0], [100.0, 100.0], [250.0, 200.0], [200.0, 400.0]]),
            Self::from_points([[400.0, 0.0], [450.0, 150.0], [300.0, 300.0], [210.0, 400.0]]),
        ]
    }

    fn from_points(p: [[f64; 2]; 4]) -> Self {
        Self {
            p: p.map(|q| Vector2::new(q[0], q[1])),
        }
    }
}

fn clamp_progress(s: f64) -> f64 {
    if !(0.0..=1.0).contains(&s) {
        log::warn!("path parameter {s} outside [0, 1]; clamping");
    }
    s.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Direct polynomial evaluation, written out coordinate by coordinate.
    fn bernstein(p: &[[f64; 2]; 4], s: f64) -> [f64; 2] {
        let b = [(1.0 - s).powi(3), 3.0 * (1.0 - s).powi(2) * s, 3.0 * (1.0 - s) * s.powi(2), s.powi(3)];
        let mut out = [0.0; 2];
        for (w, q) in b.iter().zip(p) {
            out[0] += w * q[0];
            out[1] += w * q[1];
        }
        out
    }

    const AGENT1: [[f64; 2]; 4] = [[0.0, 0.0], [100.0, 100.0], [10.0, 300.0], [190.0, 400.0]];

    #[test]
    fn agent_one_examples() {
        let path = BezierPath::reference_paths()[0];
        assert_eq!(path.eval(0.0), Vector2::new(0.0, 0.0));
        assert_eq!(path.eval(1.0), Vector2::new(190.0, 400.0));
        let mid = bernstein(&AGENT1, 0.5);
        assert_eq!(mid, [65.0, 200.0]);
        assert!((path.eval(0.5) - Vector2::new(mid[0], mid[1])).norm() < 1e-12);
    }

    #[test]
    fn tangent_examples() {
        let path = BezierPath::reference_paths()[0];
        let [p0, p1, p2, p3] = path.p;
        assert!((path.eval_tangent(0.0) - 3.0 * (p1 - p0)).norm() < 1e-12);
        assert!((path.eval_tangent(1.0) - 3.0 * (p3 - p2)).norm() < 1e-12);
        let expected = 0.75 * (p1 - p0) + 1.5 * (p2 - p1) + 0.75 * (p3 - p2);
        assert!((expected - Vector2::new(75.0, 450.0)).norm() < 1e-12);
        assert!((path.eval_tangent(0.5) - expected).norm() < 1e-12);
    }

    #[test]
    fn tangent_matches_central_differences() {
        for path in BezierPath::reference_paths() {
            for i in 0..100 {
                let s = 0.005 + 0.99 * i as f64 / 99.0;
                let h = 1e-6;
                let fd = (path.eval(s + h) - path.eval(s - h)) / (2.0 * h);
                let t = path.eval_tangent(s);
                assert!((fd - t).norm() <= 1e-6 * t.norm().max(1.0), "s={s}");
            }
        }
    }

    #[test]
    fn curve_is_lipschitz_under_dense_sampling() {
        for path in BezierPath::reference_paths() {
            // |g'| <= 3 * max |P_{j+1} - P_j| for a cubic Bézier
            let l = (0..3).map(|j| (path.p[j + 1] - path.p[j]).norm()).fold(0.0, f64::max) * 3.0;
            let eps = 1e-3;
            let mut s = 0.0;
            while s + eps <= 1.0 {
                assert!((path.eval(s + eps) - path.eval(s)).norm() <= l * eps + 1e-9);
                s += eps;
            }
        }
    }

    #[test]
    fn reference_destinations() {
        let ends: Vec<_> = BezierPath::reference_paths().iter().map(|p| p.end()).collect();
        assert_eq!(ends, vec![Vector2::new(190.0, 400.0), Vector2::new(200.0, 400.0), Vector2::new(210.0, 400.0)]);
    }

    #[test]
    fn progress_is_clamped() {
        let path = BezierPath::reference_paths()[1];
        assert_eq!(path.eval(1.5), path.eval(1.0));
        assert_eq!(path.eval(-0.2), path.eval(0.0));
    }

    #[test]
    fn non_finite_points_rejected() {
        assert!(BezierPath::new([f64::NAN, 0.0], [0.0; 2], [0.0; 2], [0.0; 2]).is_err());
    }
}
