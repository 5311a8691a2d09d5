//! Escape controller: a finite-horizon program over the control sequence,
//! solved by single shooting with sequential quadratic (Newton-type) steps.
//!
//! Both bounds are handled by a logarithmic barrier whose weight is driven
//! towards zero, so every iterate is strictly feasible. Each step minimises
//! a convexified quadratic model with a Riccati sweep in `O(N)`. The
//! returned rollout is re-simulated through the saturating plant, which is
//! a no-op unless the estimate starts over speed.

use nalgebra::{DVector, Matrix2, Matrix2x4, Matrix4, Matrix4x2, Vector2, Vector4};

use super::potential::{repulsive_gradient, repulsive_potential, MIN_DISTANCE};
use crate::dynamics::AgentModel;
use crate::estimation::EstimatorState;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EscProblem {
    /// Prediction horizon `N` (ticks).
    pub horizon: usize,
    pub q: Matrix4<f64>,
    pub r: Matrix2<f64>,
    pub beta: f64,
    pub r_effect: f64,
    /// Added to `r_effect` inside the penalty so that the optimum settles
    /// strictly outside the true range.
    pub penalty_margin: f64,
    /// Estimated attacker position.
    pub attacker: Vector2<f64>,
    /// Goal state for rollout states `1..=N`.
    pub goals: Vec<Vector4<f64>>,
    /// Rollout index from which the repulsive penalty counts.
    pub k_esc: usize,
    pub v_max: f64,
    pub a_max: f64,
}

impl EscProblem {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Contract("escape horizon must be positive".into()));
        }
        if self.horizon < self.k_esc {
            return Err(Error::Contract(format!("horizon {} shorter than escape time {}", self.horizon, self.k_esc)));
        }
        if self.goals.len() != self.horizon {
            return Err(Error::dim("escape goals", self.horizon, self.goals.len()));
        }
        let q_ok = self.q.symmetric_eigenvalues().min() > 0.0 && (self.q - self.q.transpose()).abs().max() < 1e-12;
        let r_ok = self.r.symmetric_eigenvalues().min() > 0.0 && (self.r - self.r.transpose()).abs().max() < 1e-12;
        if !(q_ok && r_ok) {
            return Err(Error::Contract("escape weights must be symmetric positive definite".into()));
        }
        if !(self.beta > 0.0 && self.r_effect >= 0.0 && self.penalty_margin >= 0.0 && self.v_max > 0.0 && self.a_max > 0.0) {
            return Err(Error::Contract("escape scalars out of range".into()));
        }
        Ok(())
    }

    fn penalty_radius(&self) -> f64 {
        self.r_effect + self.penalty_margin
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_iter: usize,
    /// Stationarity tolerance on the gradient norm of the barrier objective
    /// at its final weight.
    pub tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { max_iter: 400, tol: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EscSolution {
    /// Effective inputs `u_0 … u_{N−1}`.
    pub controls: Vec<Vector2<f64>>,
    /// Predicted states `x_0 … x_N`.
    pub rollout: Vec<Vector4<f64>>,
    /// Program cost (without the barrier) of the returned and seed sequences.
    pub cost: f64,
    pub initial_cost: f64,
    /// Gradient norm of the barrier objective at its final weight, which is
    /// the stationarity residual of the bound-constrained program.
    pub projected_gradient_norm: f64,
    pub iterations: usize,
    /// Iteration cap reached without meeting the stationarity tolerance.
    pub degraded: bool,
}

impl EscSolution {
    /// Distance from the attacker estimate at rollout index `i`.
    pub fn distance_at(&self, i: usize, attacker: &Vector2<f64>) -> Option<f64> {
        self.rollout.get(i).map(|x| (Vector2::new(x[0], x[1]) - attacker).norm())
    }
}

/// Barrier weights `τ`, decreased in turn with warm starts.
const BARRIER_SCHEDULE: [f64; 6] = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7];

/// Candidates are pulled this far inside the bounds before solving.
const INTERIOR: f64 = 0.99;

/// Value, gradient and Hessian of `−τ log(1 − ‖w‖²/c²)`, or `None` outside
/// the open disk of radius `c`.
fn barrier(w: &Vector2<f64>, c: f64, tau: f64) -> Option<(f64, Vector2<f64>, Matrix2<f64>)> {
    let slack = c * c - w.norm_squared();
    if !(slack > 0.0) {
        return None;
    }
    let value = -tau * (slack / (c * c)).ln();
    let grad = (2.0 * tau / slack) * w;
    let hess = (2.0 * tau / slack) * Matrix2::identity() + (4.0 * tau / (slack * slack)) * w * w.transpose();
    Some((value, grad, hess))
}

struct Plant {
    a: Matrix4<f64>,
    b: Matrix4x2<f64>,
    bv_inv: Matrix2<f64>,
    v_max: f64,
    a_max: f64,
}

impl Plant {
    fn new(model: &AgentModel, v_max: f64, a_max: f64) -> Result<Self> {
        if model.state_dim() != 4 || model.input_dim() != 2 {
            return Err(Error::dim(
                "escape controller model",
                "4 states, 2 inputs",
                format!("{} states, {} inputs", model.state_dim(), model.input_dim()),
            ));
        }
        let a = Matrix4::from_iterator(model.a.iter().cloned());
        let b = Matrix4x2::from_iterator(model.b.iter().cloned());
        let bv: Matrix2<f64> = b.fixed_view::<2, 2>(2, 0).into_owned();
        let bv_inv = bv
            .try_inverse()
            .ok_or_else(|| Error::Numerical("velocity block of B is singular".into()))?;
        Ok(Self { a, b, bv_inv, v_max, a_max })
    }

    fn rollout(&self, x0: &Vector4<f64>, u: &[Vector2<f64>]) -> Vec<Vector4<f64>> {
        let mut xs = Vec::with_capacity(u.len() + 1);
        xs.push(*x0);
        for ui in u {
            let x = xs.last().unwrap();
            xs.push(self.a * x + self.b * ui);
        }
        xs
    }

    /// Input that reaches velocity `v` from `x`, clipped to `a_max`.
    fn input_towards(&self, x: &Vector4<f64>, v: &Vector2<f64>, a_max: f64) -> Vector2<f64> {
        let ax = self.a * x;
        clip(&(self.bv_inv * (v - ax.fixed_rows::<2>(2))), a_max)
    }

    /// Step with `u` clipped to `a_max` and the speed clamped to `v_max`,
    /// returning the effective input that realises it.
    fn saturated_step(&self, x: &Vector4<f64>, u: &Vector2<f64>) -> (Vector4<f64>, Vector2<f64>) {
        let u = clip(u, self.a_max);
        let next = self.a * x + self.b * u;
        let v: Vector2<f64> = next.fixed_rows::<2>(2).into_owned();
        let speed = v.norm();
        if speed <= self.v_max {
            return (next, u);
        }
        let u_eff = self.input_towards(x, &(v * (self.v_max / speed)), self.a_max);
        (self.a * x + self.b * u_eff, u_eff)
    }
}

fn clip(u: &Vector2<f64>, a_max: f64) -> Vector2<f64> {
    let n = u.norm();
    if n > a_max {
        u * (a_max / n)
    } else {
        *u
    }
}

/// Second-order data of the objective at one control sequence.
struct Expansion {
    cost: f64,
    /// Gradient with respect to each `u_i`.
    grad: Vec<Vector2<f64>>,
    /// Stage gradients and convexified Hessians for states `1..=N`.
    gx: Vec<Vector4<f64>>,
    hx: Vec<Matrix4<f64>>,
    /// Input gradients and Hessians of the control terms.
    gu: Vec<Vector2<f64>>,
    hu: Vec<Matrix2<f64>>,
}

struct Objective<'a> {
    problem: &'a EscProblem,
    plant: Plant,
    x0: Vector4<f64>,
    /// Speed bound on states `1..=N`. Equal to `v_max` unless the estimate
    /// starts over speed, in which case it relaxes and shrinks back.
    speed_cap: Vec<f64>,
    tau: f64,
}

impl Objective<'_> {
    /// Program cost of state `i ≥ 1` without the barrier, with its gradient
    /// and a PSD Hessian (the negative tangential part of the repulsion
    /// Hessian is dropped).
    fn stage(&self, i: usize, x: &Vector4<f64>) -> (f64, Vector4<f64>, Matrix4<f64>) {
        let p = self.problem;
        let e = x - p.goals[i - 1];
        let qe = p.q * e;
        let mut cost = e.dot(&qe);
        let mut grad = 2.0 * qe;
        let mut hess = 2.0 * p.q;
        if i >= p.k_esc {
            let rel = Vector2::new(x[0], x[1]) - p.attacker;
            let d = rel.norm();
            let radius = p.penalty_radius();
            cost += repulsive_potential(d, radius, p.beta);
            if d >= MIN_DISTANCE && d < radius {
                let n = rel / d;
                let g = repulsive_gradient(d, radius, p.beta) * n;
                grad[0] += g[0];
                grad[1] += g[1];
                let inv = 1.0 / d - 1.0 / radius;
                let curv = p.beta * (1.0 / d.powi(4) + 2.0 * inv / d.powi(3));
                let mut blk = hess.fixed_view_mut::<2, 2>(0, 0);
                blk += curv * n * n.transpose();
            }
        }
        (cost, grad, hess)
    }

    /// Stage data including the speed barrier.
    fn barrier_stage(&self, i: usize, x: &Vector4<f64>) -> Option<(f64, Vector4<f64>, Matrix4<f64>)> {
        let (mut cost, mut grad, mut hess) = self.stage(i, x);
        let (c, g, h) = barrier(&Vector2::new(x[2], x[3]), self.speed_cap[i - 1], self.tau)?;
        cost += c;
        grad[2] += g[0];
        grad[3] += g[1];
        let mut blk = hess.fixed_view_mut::<2, 2>(2, 2);
        blk += h;
        Some((cost, grad, hess))
    }

    fn control(&self, u: &Vector2<f64>) -> Option<(f64, Vector2<f64>, Matrix2<f64>)> {
        let r = &self.problem.r;
        let (c, g, h) = barrier(u, self.problem.a_max, self.tau)?;
        Some((u.dot(&(r * u)) + c, 2.0 * r * u + g, 2.0 * r + h))
    }

    /// Program cost without the barrier.
    fn program_cost(&self, u: &[Vector2<f64>]) -> f64 {
        let xs = self.plant.rollout(&self.x0, u);
        u.iter()
            .enumerate()
            .map(|(i, ui)| ui.dot(&(self.problem.r * ui)) + self.stage(i + 1, &xs[i + 1]).0)
            .sum()
    }

    /// Barrier objective; infinite outside the strict interior.
    fn cost(&self, u: &[Vector2<f64>]) -> f64 {
        let xs = self.plant.rollout(&self.x0, u);
        let mut total = 0.0;
        for (i, ui) in u.iter().enumerate() {
            match (self.control(ui), self.barrier_stage(i + 1, &xs[i + 1])) {
                (Some(c), Some(s)) => total += c.0 + s.0,
                _ => return f64::INFINITY,
            }
        }
        total
    }

    /// Expansion at a strictly interior sequence.
    fn expand(&self, u: &[Vector2<f64>]) -> Option<Expansion> {
        let n = u.len();
        let xs = self.plant.rollout(&self.x0, u);
        let mut ex = Expansion {
            cost: 0.0,
            grad: vec![Vector2::zeros(); n],
            gx: Vec::with_capacity(n),
            hx: Vec::with_capacity(n),
            gu: Vec::with_capacity(n),
            hu: Vec::with_capacity(n),
        };
        for i in 0..n {
            let (cs, gs, hs) = self.barrier_stage(i + 1, &xs[i + 1])?;
            let (cu, gu, hu) = self.control(&u[i])?;
            ex.cost += cs + cu;
            ex.gx.push(gs);
            ex.hx.push(hs);
            ex.gu.push(gu);
            ex.hu.push(hu);
        }
        // adjoint: λ_i = ∇ℓ_i + Aᵀ λ_{i+1}
        let mut lambda = Vector4::zeros();
        for i in (0..n).rev() {
            lambda += ex.gx[i];
            ex.grad[i] = ex.gu[i] + self.plant.b.transpose() * lambda;
            lambda = self.plant.a.transpose() * lambda;
        }
        Some(ex)
    }

    /// Minimiser of the quadratic model around `ex`, as an open-loop input
    /// correction. `damping` adds `λ I` to the Hessian in input space. The
    /// model is strictly convex, so every gain is defined.
    fn newton_direction(&self, ex: &Expansion, damping: f64) -> Result<Vec<Vector2<f64>>> {
        let n = ex.grad.len();
        let (a, b) = (&self.plant.a, &self.plant.b);
        let mut big_k: Vec<Matrix2x4<f64>> = vec![Matrix2x4::zeros(); n];
        let mut small_k = vec![Vector2::zeros(); n];
        let mut vxx = Matrix4::zeros();
        let mut vx = Vector4::zeros();
        for i in (0..n).rev() {
            // state i+1 carries stage data index i
            vxx += ex.hx[i];
            vx += ex.gx[i];
            let qu = ex.gu[i] + b.transpose() * vx;
            let quu = ex.hu[i] + Matrix2::identity() * damping + b.transpose() * vxx * b;
            let qux = b.transpose() * vxx * a;
            let chol = quu
                .cholesky()
                .ok_or_else(|| Error::Numerical("escape step model lost definiteness".into()))?;
            big_k[i] = -chol.solve(&qux);
            small_k[i] = -chol.solve(&qu);
            let qxx = a.transpose() * vxx * a;
            vx = a.transpose() * vx + qux.transpose() * small_k[i];
            vxx = qxx + qux.transpose() * big_k[i];
            vxx = 0.5 * (vxx + vxx.transpose());
        }
        let mut dx = Vector4::zeros();
        let mut du = Vec::with_capacity(n);
        for i in 0..n {
            let d = big_k[i] * dx + small_k[i];
            dx = a * dx + b * d;
            du.push(d);
        }
        Ok(du)
    }

    /// Pull a candidate strictly inside both bounds by clipping the input
    /// and, where the speed would get too close to its cap, steering the
    /// velocity back inside.
    fn repair(&self, u: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
        let a_in = INTERIOR * self.problem.a_max;
        let mut x = self.x0;
        let mut out = Vec::with_capacity(u.len());
        for (i, ui) in u.iter().enumerate() {
            let mut ui = clip(ui, a_in);
            let next = self.plant.a * x + self.plant.b * ui;
            let v: Vector2<f64> = next.fixed_rows::<2>(2).into_owned();
            let cap = INTERIOR * self.speed_cap[i];
            if v.norm() > cap {
                ui = self.plant.input_towards(&x, &(v * (cap / v.norm())), a_in);
            }
            x = self.plant.a * x + self.plant.b * ui;
            out.push(ui);
        }
        out
    }

    /// Damped Newton on the barrier objective until the gradient norm falls
    /// below `tol`. Returns the gradient norm reached.
    fn minimise(&self, u: &mut Vec<Vector2<f64>>, tol: f64, budget: &mut usize) -> Result<f64> {
        let Some(mut ex) = self.expand(u) else {
            return Ok(f64::INFINITY);
        };
        let mut gnorm = norm(&ex.grad);
        let mut damping = 1e-8;
        while gnorm > tol && *budget > 0 {
            *budget -= 1;
            let du = self.newton_direction(&ex, damping)?;
            let slope: f64 = du.iter().zip(&ex.grad).map(|(d, g)| d.dot(g)).sum();
            if !(slope < 0.0) {
                break;
            }
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..60 {
                let cand: Vec<_> = u.iter().zip(&du).map(|(ui, d)| ui + d * t).collect();
                if self.cost(&cand) <= ex.cost + 1e-4 * t * slope {
                    accepted = Some(cand);
                    break;
                }
                t *= 0.5;
            }
            let Some(next) = accepted else { break };
            // Levenberg-Marquardt style: trust the model more after full steps.
            damping = if t == 1.0 { (damping * 0.3).max(1e-12) } else { (damping * 10.0).min(1e6) };
            *u = next;
            ex = self.expand(u).expect("accepted iterate is interior");
            gnorm = norm(&ex.grad);
        }
        Ok(gnorm)
    }
}

fn norm(g: &[Vector2<f64>]) -> f64 {
    g.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt()
}

/// Solve the escape program from the current estimate.
///
/// Candidate initial sequences are: acceleration radially away from the
/// attacker up to full speed, coasting, and `warm_start` when given. Each is
/// pulled strictly inside the bounds and the cheapest seeds the solver.
/// Returns the best iterate found; `degraded` is set when the iteration cap
/// or a failed line search stops it short of stationarity.
pub fn solve_esc(
    problem: &EscProblem,
    est: &EstimatorState,
    model: &AgentModel,
    warm_start: Option<&[Vector2<f64>]>,
    opts: &SolverOptions,
) -> Result<EscSolution> {
    problem.validate()?;
    let plant = Plant::new(model, problem.v_max, problem.a_max)?;
    if est.x_hat.len() != 4 {
        return Err(Error::dim("escape controller estimate", 4, est.x_hat.len()));
    }
    let x0 = Vector4::from_iterator(est.x_hat.iter().cloned());
    let n = problem.horizon;
    let over = Vector2::new(x0[2], x0[3]).norm() - problem.v_max;
    let shrink = 0.5 * problem.a_max * model.dt;
    let speed_cap = (1..=n)
        .map(|i| problem.v_max + (over + 1e-3 - shrink * i as f64).max(0.0))
        .collect();
    let mut obj = Objective {
        problem,
        plant,
        x0,
        speed_cap,
        tau: BARRIER_SCHEDULE[0],
    };

    let away = Vector2::new(x0[0], x0[1]) - problem.attacker;
    let dir = if away.norm() > MIN_DISTANCE {
        away / away.norm()
    } else {
        Vector2::new(1.0, 0.0)
    };
    let mut radial = Vec::with_capacity(n);
    let mut x = x0;
    for _ in 0..n {
        let u = obj.plant.input_towards(&x, &(dir * problem.v_max), problem.a_max);
        x = obj.plant.a * x + obj.plant.b * u;
        radial.push(u);
    }
    let mut candidates = vec![radial, vec![Vector2::zeros(); n]];
    if let Some(ws) = warm_start {
        let mut ws: Vec<_> = ws.iter().take(n).cloned().collect();
        let tail = ws.last().cloned().unwrap_or_else(Vector2::zeros);
        ws.resize(n, tail);
        candidates.push(ws);
    }
    let mut seed = None;
    for c in candidates {
        let c = obj.repair(&c);
        let f = obj.cost(&c);
        if f.is_finite() && seed.as_ref().is_none_or(|(_, best)| f < *best) {
            seed = Some((c, f));
        }
    }
    let (seed, _) = seed.ok_or_else(|| Error::Numerical("no strictly feasible escape candidate".into()))?;
    let initial_cost = obj.program_cost(&seed);

    let mut u = seed.clone();
    let mut budget = opts.max_iter;
    let mut gnorm = f64::INFINITY;
    for (j, &tau) in BARRIER_SCHEDULE.iter().enumerate() {
        obj.tau = tau;
        let last = j + 1 == BARRIER_SCHEDULE.len();
        let tol = if last { opts.tol } else { opts.tol.max(1e-3) };
        gnorm = obj.minimise(&mut u, tol, &mut budget)?;
    }
    let mut cost = obj.program_cost(&u);
    if cost > initial_cost {
        u = seed;
        cost = initial_cost;
        gnorm = obj.expand(&u).map_or(f64::INFINITY, |ex| norm(&ex.grad));
    }
    let iterations = opts.max_iter - budget;

    let mut x = x0;
    let mut rollout = Vec::with_capacity(n + 1);
    let mut controls = Vec::with_capacity(n);
    rollout.push(x);
    for ui in &u {
        let (next, eff) = obj.plant.saturated_step(&x, ui);
        controls.push(eff);
        rollout.push(next);
        x = next;
    }
    let degraded = gnorm > opts.tol;
    if degraded {
        log::debug!("escape solver stopped after {iterations} iterations with gradient norm {gnorm:.3e}");
    }
    Ok(EscSolution {
        controls,
        rollout,
        cost,
        initial_cost,
        projected_gradient_norm: gnorm,
        iterations,
        degraded,
    })
}

/// Dynamic-size view of the solution's first control, for the plant.
pub(crate) fn first_control(sol: &EscSolution) -> DVector<f64> {
    let u = sol.controls.first().cloned().unwrap_or_else(Vector2::zeros);
    DVector::from_row_slice(&[u[0], u[1]])
}
