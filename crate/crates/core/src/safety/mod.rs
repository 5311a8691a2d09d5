//! Safety-critical control level: escape time, the repulsive potential and
//! the escape controller (ESC).

mod escape;
mod mpc;
mod potential;

pub use escape::{escape_time, EscapeQuery, ESCAPE_ITERATION_CAP};
pub use mpc::{solve_esc, EscProblem, EscSolution, SolverOptions};
pub(crate) use mpc::first_control;
pub use potential::{repulsive_gradient, repulsive_potential, MIN_DISTANCE};

use nalgebra::Vector2;

use crate::{Error, Result};

/// `d(attacker, p_{k_a + k_esc}) − r_effect`. Positive means the agent was
/// outside the effective range when its escape time ran out.
pub fn safety_margin(true_traj: &[Vector2<f64>], attacker: &Vector2<f64>, r_effect: f64, k_a: usize, k_esc: usize) -> Result<f64> {
    let idx = k_a + k_esc;
    let p = true_traj.get(idx).ok_or_else(|| {
        Error::Contract(format!("trajectory has {} samples, escape deadline is tick {idx}", true_traj.len()))
    })?;
    Ok((p - attacker).norm() - r_effect)
}
