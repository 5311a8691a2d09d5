/// Distances below this floor are treated as the floor; estimates can coincide
/// with the attacker transiently.
pub const MIN_DISTANCE: f64 = 1e-3;

/// `½ β (1/D − 1/r)²` inside the effective range, zero outside.
pub fn repulsive_potential(d: f64, r_effect: f64, beta: f64) -> f64 {
    let d = d.max(MIN_DISTANCE);
    if d > r_effect {
        return 0.0;
    }
    let g = 1.0 / d - 1.0 / r_effect;
    0.5 * beta * g * g
}

/// `dU/dD`. Zero at and beyond the boundary and below the distance floor.
pub fn repulsive_gradient(d: f64, r_effect: f64, beta: f64) -> f64 {
    if d >= r_effect || d < MIN_DISTANCE {
        return 0.0;
    }
    -beta * (1.0 / d - 1.0 / r_effect) / (d * d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(repulsive_potential(60.0, 30.0, 1e4), 0.0);
        assert_eq!(repulsive_potential(30.0, 30.0, 1e4), 0.0);
        let u = repulsive_potential(15.0, 30.0, 1e4);
        assert!((u - 1e4 / 1800.0).abs() < 1e-9);
        assert!((u - 5.5556).abs() < 1e-4);
    }

    #[test]
    fn floor_applies_to_nonpositive_distance() {
        let at_floor = repulsive_potential(MIN_DISTANCE, 30.0, 1.0);
        assert_eq!(repulsive_potential(0.0, 30.0, 1.0), at_floor);
        assert_eq!(repulsive_potential(-4.0, 30.0, 1.0), at_floor);
        assert!(at_floor.is_finite());
    }

    #[test]
    fn continuous_and_strictly_decreasing_inside() {
        let r = 30.0;
        let mut prev = f64::INFINITY;
        let mut d = 0.01;
        while d <= r {
            let u = repulsive_potential(d, r, 1e4);
            assert!(u < prev, "not decreasing at {d}");
            assert!((repulsive_potential(d + 1e-9, r, 1e4) - u).abs() < 1e-9 * 1e4 / (d * d * d).min(1.0));
            prev = u;
            d += 0.01;
        }
        assert!(repulsive_potential(r - 1e-9, r, 1e4) < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for d in [1.0, 5.0, 12.0, 29.0] {
            let h = 1e-6;
            let fd = (repulsive_potential(d + h, 30.0, 1e4) - repulsive_potential(d - h, 30.0, 1e4)) / (2.0 * h);
            let g = repulsive_gradient(d, 30.0, 1e4);
            assert!((fd - g).abs() <= 1e-5 * g.abs().max(1.0));
        }
    }
}
