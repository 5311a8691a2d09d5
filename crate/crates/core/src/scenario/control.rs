//! Robust tracking controller.

use nalgebra::Vector2;

use crate::dynamics::{position_of, velocity_of};
use crate::estimation::EstimatorState;
use crate::safety::repulsive_gradient;

/// `u = k_p (target_pos − p̂) + k_i (target_vel − v̂)`, scaled radially to
/// `a_max`. `k_i` acts on the velocity error. Returns the command and whether
/// it was clamped.
pub fn pd_control(
    target_pos: &Vector2<f64>,
    target_vel: &Vector2<f64>,
    est: &EstimatorState,
    k_p: f64,
    k_i: f64,
    a_max: f64,
) -> (Vector2<f64>, bool) {
    let u = k_p * (target_pos - position_of(&est.x_hat)) + k_i * (target_vel - velocity_of(&est.x_hat));
    clamp(u, a_max)
}

/// `−κ ∇_p U_rep` at the estimated position, pushing away from the attacker.
pub fn repulsion(position: &Vector2<f64>, attacker: &Vector2<f64>, radius: f64, beta: f64, gain: f64) -> Vector2<f64> {
    let rel = position - attacker;
    let d = rel.norm();
    let slope = repulsive_gradient(d, radius, beta);
    if slope == 0.0 {
        return Vector2::zeros();
    }
    -gain * slope * rel / d
}

pub fn clamp(u: Vector2<f64>, a_max: f64) -> (Vector2<f64>, bool) {
    let n = u.norm();
    if n > a_max {
        (u * (a_max / n), true)
    } else {
        (u, false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn est(x: [f64; 4]) -> EstimatorState {
        EstimatorState::new(DVector::from_row_slice(&x), DMatrix::identity(4, 4))
    }

    #[test]
    fn examples() {
        let e = est([3.0, 4.0, 1.0, -1.0]);
        let (u, c) = pd_control(&Vector2::new(3.0, 4.0), &Vector2::new(1.0, -1.0), &e, 0.05, 0.315, 2.0);
        assert_eq!(u, Vector2::zeros());
        assert!(!c);

        let e = est([0.0; 4]);
        let (u, _) = pd_control(&Vector2::new(1.0, 0.0), &Vector2::zeros(), &e, 0.05, 0.315, 2.0);
        assert!((u - Vector2::new(0.05, 0.0)).norm() < 1e-15);

        let (u, c) = pd_control(&Vector2::new(500.0, -300.0), &Vector2::zeros(), &e, 0.05, 0.315, 2.0);
        assert!(c);
        assert!((u.norm() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn repulsion_points_away_inside_range_only() {
        let a = Vector2::new(200.0, 200.0);
        let f = repulsion(&Vector2::new(210.0, 200.0), &a, 35.0, 1e4, 1.0);
        assert!(f[0] > 0.0 && f[1].abs() < 1e-15);
        assert_eq!(repulsion(&Vector2::new(240.0, 200.0), &a, 35.0, 1e4, 1.0), Vector2::zeros());
    }
}
