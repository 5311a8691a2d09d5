//! Time-critical coordination: consensus over the per-agent progress variable
//! `s ∈ [0, 1]` and the rate law that advances each agent's virtual target.

use std::collections::VecDeque;

use crate::{Error, Result};

/// Undirected communication graph between agents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoordGraph {
    neighbors: Vec<Vec<usize>>,
}

impl CoordGraph {
    /// Builds a graph from unordered edges. Self-loops and out-of-range
    /// indices are rejected; duplicate edges are merged.
    pub fn new(n_agents: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut neighbors = vec![Vec::new(); n_agents];
        for &(i, j) in edges {
            if i >= n_agents || j >= n_agents {
                return Err(Error::config("graph", format!("edge ({i}, {j}) references a missing agent")));
            }
            if i == j {
                return Err(Error::config("graph", format!("self-loop on agent {i}")));
            }
            if !neighbors[i].contains(&j) {
                neighbors[i].push(j);
                neighbors[j].push(i);
            }
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        let graph = Self { neighbors };
        if n_agents > 1 && !graph.is_connected() {
            log::warn!("coordination graph is not connected; consensus cannot span all agents");
        }
        Ok(graph)
    }

    /// Builds a graph from an adjacency list. Every listed neighbor must be
    /// listed back.
    pub fn from_adjacency(adjacency: &[Vec<usize>]) -> Result<Self> {
        let n = adjacency.len();
        let mut edges = Vec::new();
        for (i, list) in adjacency.iter().enumerate() {
            for &j in list {
                if j >= n {
                    return Err(Error::config(format!("graph.adjacency[{i}]"), format!("neighbor {j} out of range")));
                }
                if !adjacency[j].contains(&i) {
                    return Err(Error::config(
                        format!("graph.adjacency[{i}]"),
                        format!("edge {i} -> {j} has no reverse edge; graph must be undirected"),
                    ));
                }
                edges.push((i, j));
            }
        }
        Self::new(n, &edges)
    }

    pub fn complete(n: usize) -> Self {
        let edges: Vec<_> = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect();
        Self::new(n, &edges).expect("complete graph is valid")
    }

    pub fn line(n: usize) -> Self {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Self::new(n, &edges).expect("line graph is valid")
    }

    pub fn n_agents(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn adjacency(&self) -> &[Vec<usize>] {
        &self.neighbors
    }

    pub fn is_connected(&self) -> bool {
        let n = self.n_agents();
        if n == 0 {
            return true;
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for &j in &self.neighbors[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen.into_iter().all(|v| v)
    }
}

/// Coordination gains: tracking gain `k_e`, consensus gain `k_s` and the
/// reference rate `rho` (progress per tick).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordGains {
    pub k_e: f64,
    pub k_s: f64,
    pub rho: f64,
}

impl CoordGains {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("gains.k_e", self.k_e), ("gains.k_s", self.k_s), ("gains.rho", self.rho)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(name, "must be finite and positive"));
            }
        }
        Ok(())
    }
}

impl Default for CoordGains {
    fn default() -> Self {
        Self {
            k_e: 0.005,
            k_s: 0.005,
            rho: 1.0 / 1200.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordState {
    pub s: Vec<f64>,
    pub gains: CoordGains,
}

impl CoordState {
    pub fn new(n_agents: usize, gains: CoordGains) -> Self {
        Self {
            s: vec![0.0; n_agents],
            gains,
        }
    }

    /// `max_{i,j} |s_i - s_j|`.
    pub fn spread(&self) -> f64 {
        let lo = self.s.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if self.s.is_empty() {
            0.0
        } else {
            hi - lo
        }
    }

    pub fn all_complete(&self) -> bool {
        self.s.iter().all(|&s| s >= 1.0)
    }
}

/// Progress increment `z_i` for agent `i`.
///
/// `z = max(-k_e e - k_s Σ_j (s_i - s_j) + ρ + [attacked] k_e e, 0)`. When the
/// agent is flagged as attacked the tracking term is cancelled so the virtual
/// target keeps moving while the agent detours.
pub fn coord_input(i: usize, coord: &CoordState, graph: &CoordGraph, tracking_error: f64, attacked: bool) -> f64 {
    let g = &coord.gains;
    let e = tracking_error.max(0.0);
    let consensus: f64 = graph.neighbors(i).iter().map(|&j| coord.s[i] - coord.s[j]).sum();
    let compensation = if attacked { g.k_e * e } else { 0.0 };
    (-g.k_e * e - g.k_s * consensus + g.rho + compensation).max(0.0)
}

/// `s_i ← min(s_i + z_i, 1)`.
pub fn advance(coord: &CoordState, z: &[f64]) -> Result<CoordState> {
    if z.len() != coord.s.len() {
        return Err(Error::dim("coordination increments", coord.s.len(), z.len()));
    }
    if let Some((i, &zi)) = z.iter().enumerate().find(|(_, &zi)| !(zi >= 0.0)) {
        return Err(Error::Contract(format!("negative progress increment z[{i}] = {zi}")));
    }
    Ok(CoordState {
        s: coord.s.iter().zip(z).map(|(s, dz)| (s + dz).min(1.0)).collect(),
        gains: coord.gains,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const RHO: f64 = 1.0 / 1200.0;

    fn state(s: Vec<f64>) -> CoordState {
        CoordState {
            s,
            gains: CoordGains::default(),
        }
    }

    #[test]
    fn rate_examples() {
        let g = CoordGraph::complete(3);
        let c = state(vec![0.3; 3]);
        assert!((coord_input(0, &c, &g, 0.0, false) - RHO).abs() < 1e-18);
        assert!((coord_input(1, &c, &g, 123.4, true) - RHO).abs() < 1e-15);
        // -0.005 * 1000 + 1/1200 < 0
        assert_eq!(coord_input(2, &c, &g, 1000.0, false), 0.0);
    }

    #[test]
    fn consensus_term_pulls_toward_neighbors() {
        let g = CoordGraph::complete(3);
        let c = state(vec![0.5, 0.4, 0.4]);
        let lead = coord_input(0, &c, &g, 0.0, false);
        let lag = coord_input(1, &c, &g, 0.0, false);
        assert!(lead < RHO && lag > RHO);
        assert!((lag - (RHO + 0.005 * 0.1)).abs() < 1e-15);
    }

    #[test]
    fn advance_examples() {
        let c = advance(&state(vec![0.5; 3]), &[RHO; 3]).unwrap();
        assert!(c.s.iter().all(|&s| (s - (0.5 + RHO)).abs() < 1e-15));
        let c = advance(&state(vec![1.0, 0.999, 1.0]), &[RHO, 0.01, RHO]).unwrap();
        assert_eq!(c.s, vec![1.0, 1.0, 1.0]);
        let c = advance(&state(vec![0.0; 3]), &[0.0; 3]).unwrap();
        assert_eq!(c.s, vec![0.0; 3]);
        assert!(matches!(advance(&state(vec![0.0; 3]), &[0.0, -1e-9, 0.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn graph_validation() {
        assert!(CoordGraph::new(3, &[(0, 0)]).is_err());
        assert!(CoordGraph::new(3, &[(0, 5)]).is_err());
        assert!(CoordGraph::from_adjacency(&[vec![1], vec![]]).is_err());
        let g = CoordGraph::from_adjacency(&[vec![1], vec![0, 2], vec![1]]).unwrap();
        assert_eq!(g, CoordGraph::line(3));
        assert!(g.is_connected());
        assert!(!CoordGraph::new(3, &[(0, 1)]).unwrap().is_connected());
    }

    // Attack-free, zero tracking error: the spread never grows and contracts
    // below 1e-3 within 5000 ticks.
    #[test]
    fn consensus_contracts_on_small_graphs() {
        for graph in [CoordGraph::line(3), CoordGraph::complete(3)] {
            for start in [vec![0.0, 0.05, 0.1], vec![0.1, 0.0, 0.05], vec![0.05, 0.1, 0.0]] {
                let mut c = state(start);
                let mut prev = c.spread();
                let mut reached = None;
                for k in 0..5000 {
                    let z: Vec<f64> = (0..3).map(|i| coord_input(i, &c, &graph, 0.0, false)).collect();
                    c = advance(&c, &z).unwrap();
                    let spread = c.spread();
                    assert!(spread <= prev + 1e-15, "spread grew at tick {k}");
                    prev = spread;
                    if spread < 1e-3 && reached.is_none() {
                        reached = Some(k);
                    }
                }
                assert!(reached.is_some());
            }
        }
    }
}
