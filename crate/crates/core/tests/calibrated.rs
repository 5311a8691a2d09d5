//! Closed-loop behaviour with the re-tuned gains shipped in
//! `scenarios/calibrated*.toml`. These are regression checks for the tuned
//! configuration, not the reference-gain acceptance thresholds.

use std::path::PathBuf;

use swarm_escape::scenario::{run, ScenarioConfig};

fn scenario(name: &str) -> ScenarioConfig {
    ScenarioConfig::load(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)).unwrap()
}

#[test]
fn calibrated_nominal_mission_arrives_together() {
    let s = run(&scenario("calibrated.toml")).unwrap().summary;
    assert!(s.completed, "ticks {}", s.ticks);
    assert!(s.arrival_spread.unwrap() <= 5, "spread {:?}", s.arrival_spread);
    for a in &s.agents {
        assert!(a.distance_to_goal <= 5.0, "{a:?}");
    }
    assert!(s.episodes.iter().all(|e| e.range_entry.is_none()));
}

#[test]
fn calibrated_attack_is_detected_at_range_entry() {
    let s = run(&scenario("calibrated_attack.toml")).unwrap().summary;
    let entries: Vec<u64> = s.agents.iter().flat_map(|a| a.range_entries.iter().copied()).collect();
    assert!(!entries.is_empty(), "no agent entered the effective range");
    for &r in &entries {
        assert!(
            s.episodes.iter().any(|e| e.range_entry == Some(r) && e.k_a <= r + 10),
            "entry at {r} not detected within 10 ticks: {:?}",
            s.episodes
        );
    }
    assert!(s.completed);
    assert!(s.arrival_spread.unwrap() <= 10);
    assert!(s.solver_calls > 0);
    assert!(s.solver_degraded * 100 <= s.solver_calls, "{} of {} solver calls degraded", s.solver_degraded, s.solver_calls);
}

#[test]
fn calibrated_attack_campaign_keeps_completing() {
    let base = scenario("calibrated_attack.toml");
    let mut completed = 0;
    for seed in 0..20 {
        let mut c = base.clone();
        c.seed = seed;
        let s = run(&c).unwrap().summary;
        completed += (s.completed && s.arrival_spread.is_some_and(|t| t <= 10)) as usize;
        // Escape margins hover around zero for this geometry; only require
        // the agent to end each episode near the boundary.
        for e in &s.episodes {
            if let Some(m) = e.margin {
                assert!(m > -10.0, "seed {seed}: margin {m} at {:?}", e);
            }
        }
    }
    assert!(completed >= 18, "{completed}/20 calibrated attack runs completed");
}
