//! Per-tick trace rows, run summary and their on-disk formats.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::GainsConfig;
use crate::Result;

pub const CSV_HEADER: &str =
    "tick,agent,x1,x2,x3,x4,xhat1,xhat2,xhat3,xhat4,P11,P22,P33,P44,s,z,S,mode,u1,u2,margin,ax,ay";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    Robust,
    Esc,
}

impl ControlMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ControlMode::Robust => "robust",
            ControlMode::Esc => "esc",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub tick: u64,
    pub agent: usize,
    pub x: [f64; 4],
    pub x_hat: [f64; 4],
    pub p_diag: [f64; 4],
    pub s: f64,
    pub z: f64,
    pub cusum: f64,
    pub mode: ControlMode,
    pub u: [f64; 2],
    /// Distance to the true attacker minus the effective range, when an
    /// attacker is configured.
    pub margin: Option<f64>,
    /// Attacker estimate used by the controllers, when one exists.
    pub attacker_est: Option<[f64; 2]>,
}

/// One detection episode: from a trusted→attacked switch to the deadline.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Episode {
    pub agent: usize,
    /// Detection tick.
    pub k_a: u64,
    pub k_esc: usize,
    /// Most recent tick the agent physically entered the effective range.
    pub range_entry: Option<u64>,
    /// `k_a + k_esc` exceeded the run length.
    pub deadline_missed_by_run_end: bool,
    /// Safety margin at `k_a + k_esc`.
    pub margin: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentSummary {
    pub arrival_tick: Option<u64>,
    pub final_position: [f64; 2],
    pub distance_to_goal: f64,
    pub path_length: f64,
    pub range_entries: Vec<u64>,
    pub detections: Vec<u64>,
    pub input_clamps: u64,
    pub speed_clamps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub ticks: u64,
    pub completed: bool,
    pub arrival_spread: Option<u64>,
    /// `max |s_i − s_j|` over ticks after the first 10% of the run.
    pub max_spread_after_warmup: f64,
    pub agents: Vec<AgentSummary>,
    pub episodes: Vec<Episode>,
    pub min_margin: Option<f64>,
    pub solver_calls: u64,
    pub solver_degraded: u64,
    pub localization_regularized: u64,
    pub gains: GainsConfig,
}

impl RunSummary {
    /// Any episode whose margin at the deadline is not strictly positive.
    pub fn safety_violated(&self) -> bool {
        self.episodes.iter().any(|e| e.margin.is_some_and(|m| m <= 0.0))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serialises")
    }
}

/// Optional record of the ESC's predicted rollout at one tick.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RolloutRecord {
    pub tick: u64,
    pub agent: usize,
    pub cost: f64,
    pub degraded: bool,
    pub states: Vec<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub rows: Vec<TraceRow>,
    pub summary: RunSummary,
    /// Degraded solves, clamping and numerical events, in tick order.
    pub events: Vec<String>,
    pub rollouts: Vec<RolloutRecord>,
}

impl SimTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.rows.len() * 200 + CSV_HEADER.len() + 1);
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            write!(out, "{},{}", r.tick, r.agent).unwrap();
            for v in r.x.iter().chain(&r.x_hat).chain(&r.p_diag) {
                write!(out, ",{v}").unwrap();
            }
            write!(out, ",{},{},{},{},{},{}", r.s, r.z, r.cusum, r.mode.as_str(), r.u[0], r.u[1]).unwrap();
            match r.margin {
                Some(m) => write!(out, ",{m}").unwrap(),
                None => out.push(','),
            }
            match r.attacker_est {
                Some([ax, ay]) => write!(out, ",{ax},{ay}").unwrap(),
                None => out.push_str(",,"),
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }

    pub fn write_summary(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.summary.to_json().as_bytes())
    }

    pub fn write_rollouts(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.rollouts).expect("rollouts serialise");
        write_atomic(path, text.as_bytes())
    }

    /// `trace.csv`, `summary.json` and, if recorded, `rollouts.json` in `dir`.
    pub fn emit(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.write_csv(&dir.join("trace.csv"))?;
        self.write_summary(&dir.join("summary.json"))?;
        if !self.rollouts.is_empty() {
            self.write_rollouts(&dir.join("rollouts.json"))?;
        }
        Ok(())
    }

    /// Positions of one agent indexed by tick.
    pub fn positions(&self, agent: usize) -> Vec<nalgebra::Vector2<f64>> {
        self.rows
            .iter()
            .filter(|r| r.agent == agent)
            .map(|r| nalgebra::Vector2::new(r.x[0], r.x[1]))
            .collect()
    }
}

/// Write to a sibling temporary file and rename over the target, so readers
/// never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = PathBuf::from(path);
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    tmp.set_file_name(format!(".{name}.partial"));
    let result = (|| -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}
