//! Scenario configuration: TOML schema, reference defaults and validation.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::coordination::{CoordGains, CoordGraph};
use crate::dynamics::AgentModel;
use crate::linalg::{from_rows, to_rows};
use crate::trajectory::BezierPath;
use crate::{Error, Result};

const REQUIRED: [&str; 3] = ["seed", "max_ticks", "agents"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub max_ticks: u64,
    /// Disable to run every noise channel at exactly zero.
    #[serde(default = "yes")]
    pub noise: bool,
    /// Use the true state instead of the estimate in the coordination
    /// tracking error.
    #[serde(default)]
    pub use_true_state: bool,
    #[serde(default)]
    pub graph: GraphConfig,
    #[serde(default)]
    pub gains: GainsConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default)]
    pub attacker: AttackerConfig,
    #[serde(default)]
    pub escape: EscapeConfig,
    #[serde(default)]
    pub localization: LocalizationConfig,
    pub agents: Vec<AgentConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub control_points: [[f64; 2]; 4],
    /// Defaults to the first control point at rest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<[f64; 4]>,
    /// Added to the true initial state to form the initial estimate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimate_offset: Option<[f64; 4]>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    /// Neighbor lists; complete graph when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjacency: Option<Vec<Vec<usize>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GainsConfig {
    pub k_e: f64,
    pub k_s: f64,
    pub rho: f64,
    pub k_p: f64,
    pub k_i: f64,
}

impl Default for GainsConfig {
    fn default() -> Self {
        let c = CoordGains::default();
        Self {
            k_e: c.k_e,
            k_s: c.k_s,
            rho: c.rho,
            k_p: 0.05,
            k_i: 0.315,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub dt: f64,
    pub v_max: f64,
    pub a_max: f64,
    pub sigma_w: Vec<Vec<f64>>,
    pub sigma_gps: Vec<Vec<f64>>,
    pub sigma_imu: Vec<Vec<f64>>,
    pub enforce_speed_limit: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let m = AgentModel::default();
        Self {
            dt: m.dt,
            v_max: m.v_max,
            a_max: m.a_max,
            sigma_w: to_rows(&m.sigma_w),
            sigma_gps: to_rows(&m.sigma_gps),
            sigma_imu: to_rows(&m.sigma_imu),
            enforce_speed_limit: m.enforce_speed_limit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    pub p0: Vec<Vec<f64>>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            p0: to_rows(&DMatrix::identity(4, 4)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub alpha: f64,
    pub delta: f64,
    pub df: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            delta: 0.15,
            df: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackerConfig {
    pub enabled: bool,
    pub position: [f64; 2],
    pub r_effect: f64,
    /// Injected GPS offset while an agent is in range (m).
    pub d: [f64; 2],
    /// Controllers see `position + bias` when localization is off, and use it
    /// as the localization prior otherwise.
    pub bias: [f64; 2],
    /// Let the controllers use the true attacker position.
    pub expose_truth: bool,
}

impl Default for AttackerConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            position: [200.0, 200.0],
            r_effect: 30.0,
            d: [10.0, 10.0],
            bias: [0.0, 0.0],
            expose_truth: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EscapeConfig {
    /// Tolerable estimation error; its length sets the χ² degrees of freedom.
    pub zeta: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    /// `N = k_esc + horizon_slack`.
    pub horizon_slack: usize,
    pub q_diag: [f64; 4],
    pub r_diag: [f64; 2],
    pub penalty_margin: f64,
    /// Gain on the repulsive gradient added to the tracking controller after
    /// a detection.
    pub repulsion_gain: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for EscapeConfig {
    fn default() -> Self {
        Self {
            zeta: vec![10.0, 10.0, 2.0, 2.0],
            alpha: 0.01,
            beta: 1e4,
            horizon_slack: 50,
            q_diag: [1e-4, 1e-4, 1e-4, 1e-4],
            r_diag: [1e-5, 1e-5],
            penalty_margin: 10.0,
            repulsion_gain: 100.0,
            max_iter: 400,
            tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalizationConfig {
    pub enabled: bool,
    pub window: usize,
    /// Received power at the reference distance (dB).
    pub p0: f64,
    pub d0: f64,
    /// Signal-strength noise variance (dB²).
    pub sigma_v: f64,
    /// Prior variance of the attacker position (m²).
    pub prior_var: f64,
    /// Random-walk variance of the attacker position per update (m²).
    pub process_var: f64,
}

impl Default for LocalizationConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            window: 3,
            p0: -30.0,
            d0: 1.0,
            sigma_v: 0.25,
            prior_var: 25.0,
            process_var: 0.0,
        }
    }
}

fn yes() -> bool {
    true
}

fn matrix(path: &str, rows: &[Vec<f64>], n: usize) -> Result<DMatrix<f64>> {
    let m = from_rows(rows).ok_or_else(|| Error::config(path, "rows must have equal length"))?;
    if m.shape() != (n, n) {
        return Err(Error::config(path, format!("expected {n}x{n}, got {}x{}", m.nrows(), m.ncols())));
    }
    Ok(m)
}

fn positive(path: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::config(path, format!("must be finite and positive, got {v}")))
    }
}

impl ScenarioConfig {
    /// Three-agent reference mission with every other setting at its default.
    pub fn reference(seed: u64, max_ticks: u64) -> Self {
        let agents = BezierPath::reference_paths()
            .iter()
            .map(|p| AgentConfig {
                control_points: p.p.map(|q| [q[0], q[1]]),
                initial_state: None,
                estimate_offset: None,
            })
            .collect();
        Self {
            seed,
            max_ticks,
            noise: true,
            use_true_state: false,
            graph: GraphConfig::default(),
            gains: GainsConfig::default(),
            model: ModelConfig::default(),
            estimator: EstimatorConfig::default(),
            detector: DetectorConfig::default(),
            attacker: AttackerConfig::default(),
            escape: EscapeConfig::default(),
            localization: LocalizationConfig::default(),
            agents,
        }
    }

    /// Reference mission with the reference spoofer switched on.
    pub fn reference_attack(seed: u64, max_ticks: u64) -> Self {
        let mut c = Self::reference(seed, max_ticks);
        c.attacker.enabled = true;
        c
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let value: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::config("<document>", e.message().to_string()))?;
        let missing: Vec<&str> = REQUIRED.iter().copied().filter(|k| !value.contains_key(*k)).collect();
        if !missing.is_empty() {
            return Err(Error::config(missing.join(", "), "missing required field(s)"));
        }
        let de = toml::Deserializer::new(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref())?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<document>", e.to_string()))
    }

    /// Write atomically (temporary file, then rename).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        super::trace::write_atomic(path.as_ref(), self.to_toml_string()?.as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.gains;
        for (name, v) in [("gains.k_e", g.k_e), ("gains.k_s", g.k_s), ("gains.rho", g.rho), ("gains.k_p", g.k_p), ("gains.k_i", g.k_i)] {
            positive(name, v)?;
        }
        self.agent_model()?.validate()?;
        let p0 = matrix("estimator.p0", &self.estimator.p0, 4)?;
        if crate::linalg::min_eigenvalue(&p0) < -1e-12 {
            return Err(Error::config("estimator.p0", "must be positive semi-definite"));
        }
        for (i, a) in self.agents.iter().enumerate() {
            let p = a.control_points;
            BezierPath::new(p[0], p[1], p[2], p[3]).map_err(|_| Error::config(format!("agents[{i}].control_points"), "must be finite"))?;
            for (field, v) in [("initial_state", a.initial_state), ("estimate_offset", a.estimate_offset)] {
                if v.is_some_and(|v| v.iter().any(|c| !c.is_finite())) {
                    return Err(Error::config(format!("agents[{i}].{field}"), "must be finite"));
                }
            }
        }
        self.graph()?;
        let d = &self.detector;
        crate::detection::DetectorState::new(d.alpha, d.delta, d.df)?;
        let at = &self.attacker;
        if !(at.r_effect >= 0.0 && at.r_effect.is_finite()) {
            return Err(Error::config("attacker.r_effect", "must be non-negative"));
        }
        let e = &self.escape;
        if e.zeta.is_empty() || e.zeta.len() > 4 || e.zeta.iter().any(|z| !(z.is_finite() && *z > 0.0)) {
            return Err(Error::config("escape.zeta", "1 to 4 strictly positive tolerances"));
        }
        if !(e.alpha > 0.0 && e.alpha < 1.0) {
            return Err(Error::config("escape.alpha", "must lie in (0, 1)"));
        }
        positive("escape.beta", e.beta)?;
        for (i, q) in e.q_diag.iter().enumerate() {
            positive(&format!("escape.q_diag[{i}]"), *q)?;
        }
        for (i, r) in e.r_diag.iter().enumerate() {
            positive(&format!("escape.r_diag[{i}]"), *r)?;
        }
        if !(e.penalty_margin >= 0.0 && e.repulsion_gain >= 0.0) {
            return Err(Error::config("escape", "penalty_margin and repulsion_gain must be non-negative"));
        }
        positive("escape.tol", e.tol)?;
        let l = &self.localization;
        if l.window == 0 {
            return Err(Error::config("localization.window", "must be at least 1"));
        }
        positive("localization.d0", l.d0)?;
        positive("localization.sigma_v", l.sigma_v)?;
        positive("localization.prior_var", l.prior_var)?;
        if !(l.process_var >= 0.0) {
            return Err(Error::config("localization.process_var", "must be non-negative"));
        }
        Ok(())
    }

    pub fn agent_model(&self) -> Result<AgentModel> {
        let m = &self.model;
        positive("model.dt", m.dt)?;
        let mut model = AgentModel::double_integrator(m.dt);
        model.v_max = m.v_max;
        model.a_max = m.a_max;
        model.sigma_w = matrix("model.sigma_w", &m.sigma_w, 4)?;
        model.sigma_gps = matrix("model.sigma_gps", &m.sigma_gps, 2)?;
        model.sigma_imu = matrix("model.sigma_imu", &m.sigma_imu, 2)?;
        model.enforce_speed_limit = m.enforce_speed_limit;
        Ok(model)
    }

    pub fn graph(&self) -> Result<CoordGraph> {
        match &self.graph.adjacency {
            None => Ok(CoordGraph::complete(self.agents.len())),
            Some(adj) => {
                if adj.len() != self.agents.len() {
                    return Err(Error::config("graph.adjacency", format!("{} lists for {} agents", adj.len(), self.agents.len())));
                }
                CoordGraph::from_adjacency(adj)
            }
        }
    }

    pub fn coord_gains(&self) -> CoordGains {
        CoordGains {
            k_e: self.gains.k_e,
            k_s: self.gains.k_s,
            rho: self.gains.rho,
        }
    }

    pub fn paths(&self) -> Vec<BezierPath> {
        self.agents
            .iter()
            .map(|a| {
                let p = a.control_points;
                BezierPath::new(p[0], p[1], p[2], p[3]).expect("validated control points")
            })
            .collect()
    }

    pub fn initial_state(&self, agent: usize) -> DVector<f64> {
        let a = &self.agents[agent];
        let x = a
            .initial_state
            .unwrap_or([a.control_points[0][0], a.control_points[0][1], 0.0, 0.0]);
        DVector::from_row_slice(&x)
    }

    pub fn initial_estimate(&self, agent: usize) -> DVector<f64> {
        let offset = self.agents[agent].estimate_offset.unwrap_or([0.0; 4]);
        self.initial_state(agent) + DVector::from_row_slice(&offset)
    }

    pub fn p0(&self) -> DMatrix<f64> {
        from_rows(&self.estimator.p0).expect("validated covariance")
    }

    pub fn attacker_position(&self) -> Vector2<f64> {
        Vector2::from(self.attacker.position)
    }

    /// What the controllers believe before any localization.
    pub fn attacker_prior(&self) -> Vector2<f64> {
        if self.attacker.expose_truth {
            self.attacker_position()
        } else {
            self.attacker_position() + Vector2::from(self.attacker.bias)
        }
    }

    pub fn zeta(&self) -> DVector<f64> {
        DVector::from_row_slice(&self.escape.zeta)
    }

    pub fn q_weight(&self) -> Matrix4<f64> {
        Matrix4::from_diagonal(&Vector4::from(self.escape.q_diag))
    }

    pub fn r_weight(&self) -> Matrix2<f64> {
        Matrix2::from_diagonal(&Vector2::from(self.escape.r_diag))
    }
}
