//! Tick loop tying coordination, sensing, estimation, detection and control
//! together.

use nalgebra::{DVector, Vector2, Vector4};

use super::config::ScenarioConfig;
use super::control::{clamp, pd_control, repulsion};
use super::trace::{AgentSummary, ControlMode, Episode, RolloutRecord, RunSummary, SimTrace, TraceRow};
use crate::coordination::{advance, coord_input, CoordState};
use crate::detection::{cusum_step, estimate_attack, innovation_cov, DetectorState};
use crate::dynamics::{self, in_spoof_range, position_of, AgentModel, TrueState};
use crate::estimation::{self, EstimatorState, StackedModels};
use crate::localization::{SignalModel, UkfState};
use crate::noise::{Channel, NoiseSource, NoiseStreams};
use crate::safety::{escape_time, first_control, solve_esc, EscProblem, EscapeQuery, SolverOptions};
use crate::trajectory::BezierPath;
use crate::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct SimOptions {
    /// Keep every ESC rollout in the trace.
    pub verbose_rollouts: bool,
    /// Order in which agents are processed within a tick. Results must not
    /// depend on it.
    pub eval_order: Option<Vec<usize>>,
}

struct Agent {
    path: BezierPath,
    x: TrueState,
    x_prev: TrueState,
    est1: EstimatorState,
    est2: Option<EstimatorState>,
    det: DetectorState,
    u_prev: DVector<f64>,
    mode: ControlMode,
    ever_attacked: bool,
    /// Robust mode with the repulsive term pushing the agent away.
    barrier_active: bool,
    in_range: bool,
    ukf: Option<UkfState>,
    attacker_est: Option<Vector2<f64>>,
    warm: Option<Vec<Vector2<f64>>>,
    episode: Option<usize>,
    process: NoiseSource,
    gps: NoiseSource,
    imu: NoiseSource,
    signal: NoiseSource,
    summary: AgentSummary,
}

impl Agent {
    fn control_estimate(&self) -> &EstimatorState {
        match (&self.mode, &self.est2) {
            (ControlMode::Esc, Some(e)) => e,
            _ => &self.est1,
        }
    }
}

/// Run a scenario with default options.
pub fn run(config: &ScenarioConfig) -> Result<SimTrace> {
    run_with(config, &SimOptions::default())
}

pub fn run_with(config: &ScenarioConfig, opts: &SimOptions) -> Result<SimTrace> {
    config.validate()?;
    let model = config.agent_model()?;
    let stacked = StackedModels::new(&model);
    let graph = config.graph()?;
    let n_agents = config.agents.len();
    let order: Vec<usize> = match &opts.eval_order {
        Some(o) => {
            let mut sorted = o.clone();
            sorted.sort_unstable();
            if sorted != (0..n_agents).collect::<Vec<_>>() {
                return Err(Error::config("eval_order", "must be a permutation of the agent indices"));
            }
            o.clone()
        }
        None => (0..n_agents).collect(),
    };
    let streams = NoiseStreams::new(config.seed, config.noise);
    let dc = &config.detector;
    let at = &config.attacker;
    let esc = &config.escape;
    let loc = &config.localization;
    let attacker_true = config.attacker_position();
    let signal = SignalModel::new(loc.p0, loc.d0)?;
    let solver = SolverOptions {
        max_iter: esc.max_iter,
        tol: esc.tol,
        ..SolverOptions::default()
    };
    let k_p = config.gains.k_p;
    let k_i = config.gains.k_i;

    let mut agents = Vec::with_capacity(n_agents);
    for (i, path) in config.paths().into_iter().enumerate() {
        let x0 = TrueState::new(config.initial_state(i));
        agents.push(Agent {
            path,
            x_prev: x0.clone(),
            x: x0,
            est1: EstimatorState::new(config.initial_estimate(i), config.p0()),
            est2: None,
            det: DetectorState::new(dc.alpha, dc.delta, dc.df)?,
            u_prev: DVector::zeros(2),
            mode: ControlMode::Robust,
            ever_attacked: false,
            barrier_active: false,
            in_range: false,
            ukf: None,
            attacker_est: None,
            warm: None,
            episode: None,
            process: streams.stream(i, Channel::Process),
            gps: streams.stream(i, Channel::Gps),
            imu: streams.stream(i, Channel::Imu),
            signal: streams.stream(i, Channel::Signal),
            summary: AgentSummary {
                arrival_tick: None,
                final_position: [0.0; 2],
                distance_to_goal: 0.0,
                path_length: 0.0,
                range_entries: Vec::new(),
                detections: Vec::new(),
                input_clamps: 0,
                speed_clamps: 0,
            },
        });
    }

    let mut coord = CoordState::new(n_agents, config.coord_gains());
    let mut rows = Vec::new();
    let mut events = Vec::new();
    let mut rollouts = Vec::new();
    let mut episodes: Vec<Episode> = Vec::new();
    let mut spreads = Vec::new();
    let (mut solver_calls, mut solver_degraded, mut loc_regularized) = (0u64, 0u64, 0u64);
    let mut ticks = 0u64;

    for k in 0..config.max_ticks {
        if n_agents == 0 || coord.all_complete() {
            break;
        }
        ticks = k + 1;

        // (1) coordination from last tick's snapshot
        let z: Vec<f64> = (0..n_agents)
            .map(|i| {
                let a = &agents[i];
                // x_k is not measured yet; its one-step prediction is the
                // freshest estimate available.
                let p = if config.use_true_state {
                    a.x.position()
                } else {
                    position_of(&(&model.a * &a.control_estimate().x_hat + &model.b * &a.u_prev))
                };
                let e = (a.path.eval(coord.s[i]) - p).norm();
                coord_input(i, &coord, &graph, e, a.mode == ControlMode::Esc || a.barrier_active)
            })
            .collect();
        coord = advance(&coord, &z)?;
        spreads.push(coord.spread());

        let mut tick_rows = Vec::with_capacity(n_agents);
        for &i in &order {
            let a = &mut agents[i];
            let s_i = coord.s[i];

            if k > 0 {
                // (2) measurement with spoofing when in range
                let in_range = at.enabled && in_spoof_range(&attacker_true, &a.x, at.r_effect)?;
                if in_range && !a.in_range {
                    a.summary.range_entries.push(k);
                }
                a.in_range = in_range;
                let d = if in_range { DVector::from_row_slice(&at.d) } else { DVector::zeros(2) };
                let y = dynamics::measure(&model, &a.x, &a.x_prev, &d, &mut a.gps, &mut a.imu)?;

                // (3) detector on Est. 1's prediction, then Est. 1 update
                let d_hat = estimate_attack(&y.y_gps, &a.est1.x_hat, &a.u_prev, &model)?;
                let p_d = innovation_cov(&model, &a.est1.p);
                let (det, decision) = cusum_step(&a.det, &d_hat, &p_d)?;
                a.det = det;
                let est1_prev = a.est1.clone();
                a.est1 = estimation::update(&a.est1, &model, &stacked, &a.u_prev, &y, !decision.is_attacked())?;

                // (4) mode switch
                match (a.mode, decision.is_attacked()) {
                    (ControlMode::Robust, true) => {
                        let query = EscapeQuery {
                            zeta: config.zeta(),
                            alpha: esc.alpha,
                            p_at_attack: est1_prev.p.clone(),
                            k_a: k,
                        };
                        let k_esc = escape_time(&model, &stacked.imu_only, &query)?;
                        a.est2 = Some(estimation::update(&est1_prev, &model, &stacked, &a.u_prev, &y, false)?);
                        a.mode = ControlMode::Esc;
                        // A detection far from the believed attacker is most
                        // likely a false alarm and should not arm the barrier.
                        let near = (position_of(&est1_prev.x_hat) - config.attacker_prior()).norm()
                            <= at.r_effect + esc.penalty_margin;
                        a.ever_attacked |= near;
                        a.warm = None;
                        a.summary.detections.push(k);
                        if a.attacker_est.is_none() {
                            a.attacker_est = Some(config.attacker_prior());
                        }
                        if loc.enabled && a.ukf.is_none() {
                            a.ukf = Some(UkfState::static_emitter(
                                config.attacker_prior(),
                                nalgebra::DMatrix::identity(2, 2) * loc.prior_var,
                                nalgebra::DMatrix::identity(2, 2) * loc.process_var,
                                loc.sigma_v,
                                loc.window,
                            )?);
                        }
                        a.episode = Some(episodes.len());
                        episodes.push(Episode {
                            agent: i,
                            k_a: k,
                            k_esc,
                            range_entry: a.summary.range_entries.last().copied(),
                            deadline_missed_by_run_end: false,
                            margin: None,
                        });
                        log::info!("agent {i}: spoofing detected at tick {k}, escape time {k_esc} ticks");
                    }
                    (ControlMode::Esc, true) => {
                        let e2 = a.est2.as_ref().expect("ESC mode keeps Est. 2");
                        a.est2 = Some(estimation::update(e2, &model, &stacked, &a.u_prev, &y, false)?);
                    }
                    (ControlMode::Esc, false) => {
                        a.mode = ControlMode::Robust;
                        a.est2 = None;
                        a.warm = None;
                        log::info!("agent {i}: GPS trusted again at tick {k}");
                    }
                    (ControlMode::Robust, false) => {}
                }
            }

            // (5) control
            let target_pos = a.path.eval(s_i);
            let target_vel = a.path.eval_tangent(s_i) * (z[i] / model.dt);
            let u = match a.mode {
                ControlMode::Robust => {
                    let est = &a.est1;
                    let (mut u, _) = pd_control(&target_pos, &target_vel, est, k_p, k_i, model.a_max);
                    a.barrier_active = false;
                    if let (true, Some(att)) = (a.ever_attacked, a.attacker_est) {
                        let push = repulsion(&position_of(&est.x_hat), &att, at.r_effect + esc.penalty_margin, esc.beta, esc.repulsion_gain);
                        a.barrier_active = push != Vector2::zeros();
                        u += push;
                    }
                    clamp(u, model.a_max).0
                }
                ControlMode::Esc => {
                    a.barrier_active = false;
                    if let Some(ukf) = a.ukf.as_mut() {
                        let e2 = a.est2.as_ref().expect("ESC mode keeps Est. 2");
                        let power = signal.power(&attacker_true, &a.x.position());
                        let noise = a.signal.standard_normal(1)[0] * loc.sigma_v.sqrt();
                        ukf.push_sample(DVector::from_element(1, power + noise), position_of(&e2.x_hat));
                        if ukf.window_full() {
                            *ukf = ukf.step(&signal)?;
                            if ukf.regularized {
                                loc_regularized += 1;
                                events.push(format!("tick {k} agent {i}: localization covariance regularised"));
                            }
                            if !at.expose_truth {
                                a.attacker_est = Some(ukf.position());
                            }
                        }
                    }
                    let ep = &episodes[a.episode.expect("ESC mode has an episode")];
                    let remaining = (ep.k_a + ep.k_esc as u64).saturating_sub(k) as usize;
                    let horizon = remaining + esc.horizon_slack;
                    let goals = (1..=horizon)
                        .map(|j| {
                            let s = (s_i + j as f64 * config.gains.rho).min(1.0);
                            let p = a.path.eval(s);
                            let rate = if s < 1.0 { config.gains.rho } else { 0.0 };
                            let v = a.path.eval_tangent(s) * (rate / model.dt);
                            Vector4::new(p[0], p[1], v[0], v[1])
                        })
                        .collect();
                    let problem = EscProblem {
                        horizon,
                        q: config.q_weight(),
                        r: config.r_weight(),
                        beta: esc.beta,
                        r_effect: at.r_effect,
                        penalty_margin: esc.penalty_margin,
                        attacker: a.attacker_est.unwrap_or_else(|| config.attacker_prior()),
                        goals,
                        k_esc: remaining,
                        v_max: model.v_max,
                        a_max: model.a_max,
                    };
                    let e2 = a.est2.as_ref().expect("ESC mode keeps Est. 2");
                    let sol = solve_esc(&problem, e2, &model, a.warm.as_deref(), &solver)?;
                    solver_calls += 1;
                    if sol.degraded {
                        solver_degraded += 1;
                        events.push(format!(
                            "tick {k} agent {i}: escape solver degraded (projected gradient {:.3e})",
                            sol.projected_gradient_norm
                        ));
                    }
                    if opts.verbose_rollouts {
                        log::debug!("tick {k} agent {i}: ESC cost {:.4e} ({} iterations)", sol.cost, sol.iterations);
                        rollouts.push(RolloutRecord {
                            tick: k,
                            agent: i,
                            cost: sol.cost,
                            degraded: sol.degraded,
                            states: sol.rollout.iter().map(|x| [x[0], x[1], x[2], x[3]]).collect(),
                        });
                    }
                    let u0 = first_control(&sol);
                    a.warm = Some(sol.controls[1..].to_vec());
                    Vector2::new(u0[0], u0[1])
                }
            };

            // trace row for tick k, then deadline bookkeeping
            let est = a.control_estimate();
            let margin = at.enabled.then(|| (a.x.position() - attacker_true).norm() - at.r_effect);
            tick_rows.push(TraceRow {
                tick: k,
                agent: i,
                x: vec4(&a.x.x),
                x_hat: vec4(&est.x_hat),
                p_diag: [est.p[(0, 0)], est.p[(1, 1)], est.p[(2, 2)], est.p[(3, 3)]],
                s: s_i,
                z: z[i],
                cusum: a.det.s,
                mode: a.mode,
                u: [u[0], u[1]],
                margin,
                attacker_est: a.attacker_est.map(|p| [p[0], p[1]]),
            });
            for ep in episodes.iter_mut().filter(|e| e.agent == i && e.k_a + e.k_esc as u64 == k) {
                ep.margin = margin;
            }
            if s_i >= 1.0 && a.summary.arrival_tick.is_none() {
                a.summary.arrival_tick = Some(k);
            }

            // (6) plant step
            let u_dyn = DVector::from_row_slice(&[u[0], u[1]]);
            let step = dynamics::step(&model, &a.x, &u_dyn, &mut a.process)?;
            if step.input_clamped {
                a.summary.input_clamps += 1;
            }
            if step.speed_clamped {
                a.summary.speed_clamps += 1;
            }
            a.summary.path_length += (step.state.position() - a.x.position()).norm();
            a.x_prev = std::mem::replace(&mut a.x, step.state);
            a.u_prev = step.input;
        }
        tick_rows.sort_by_key(|r| r.agent);
        rows.extend(tick_rows);
    }

    for ep in episodes.iter_mut().filter(|e| e.k_a + e.k_esc as u64 >= ticks) {
        ep.deadline_missed_by_run_end = true;
    }
    let arrivals: Vec<Option<u64>> = agents.iter().map(|a| a.summary.arrival_tick).collect();
    let completed = n_agents > 0 && arrivals.iter().all(Option::is_some);
    let arrival_spread = completed.then(|| {
        let t: Vec<u64> = arrivals.iter().flatten().copied().collect();
        t.iter().max().unwrap() - t.iter().min().unwrap()
    });
    let warmup = spreads.len() / 10;
    let max_spread_after_warmup = spreads.iter().skip(warmup).cloned().fold(0.0, f64::max);
    let min_margin = episodes.iter().filter_map(|e| e.margin).reduce(f64::min);
    let agent_summaries = agents
        .into_iter()
        .map(|a| {
            let mut s = a.summary;
            let p = a.x.position();
            s.final_position = [p[0], p[1]];
            s.distance_to_goal = (p - a.path.end()).norm();
            s
        })
        .collect();
    let summary = RunSummary {
        seed: config.seed,
        ticks,
        completed,
        arrival_spread,
        max_spread_after_warmup,
        agents: agent_summaries,
        episodes,
        min_margin,
        solver_calls,
        solver_degraded,
        localization_regularized: loc_regularized,
        gains: config.gains.clone(),
    };
    Ok(SimTrace {
        rows,
        summary,
        events,
        rollouts,
    })
}

/// Escape time for the configured tolerance, starting from the fused
/// steady-state covariance.
pub fn configured_escape_time(config: &ScenarioConfig) -> Result<usize> {
    let model = config.agent_model()?;
    let stacked = StackedModels::new(&model);
    let p = fused_steady_state(&model, &stacked, &config.p0())?;
    escape_time(
        &model,
        &stacked.imu_only,
        &EscapeQuery {
            zeta: config.zeta(),
            alpha: config.escape.alpha,
            p_at_attack: p,
            k_a: 0,
        },
    )
}

/// Fixed point of the fused covariance recursion.
pub fn fused_steady_state(model: &AgentModel, stacked: &StackedModels, p0: &nalgebra::DMatrix<f64>) -> Result<nalgebra::DMatrix<f64>> {
    let mut p = p0.clone();
    for _ in 0..100_000 {
        let next = estimation::propagate_covariance(model, &stacked.fused, &p)?;
        let done = (&next - &p).amax() < 1e-13;
        p = next;
        if done {
            return Ok(p);
        }
    }
    Err(Error::Numerical("fused covariance did not converge".into()))
}

fn vec4(v: &DVector<f64>) -> [f64; 4] {
    [v[0], v[1], v[2], v[3]]
}

