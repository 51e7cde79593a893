//! Undirected weighted graphs and the random generators (Erdős–Rényi,
//! Barabási–Albert) that the benchmark dynamics run on.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub u: NodeId,
    pub v: NodeId,
    pub weight: f64,
}

/// An undirected graph with a per-node neighbor index.
///
/// Edges are stored once with `u < v`; the neighbor index lists every edge
/// from both endpoints with the same weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n_nodes: usize,
    edges: Vec<Edge>,
    neighbors: Vec<Vec<(NodeId, f64)>>,
}

/// Flattened directed view of a graph: one entry per (receiver, sender)
/// ordered pair, grouped by receiver. Used by every vectorised right-hand
/// side evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectedPairs {
    pub receiver: Vec<usize>,
    pub sender: Vec<usize>,
    pub weight: Vec<f64>,
    pub unit_weights: bool,
}

impl Graph {
    pub fn new(n_nodes: usize, edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        if n_nodes == 0 {
            return Err(Error::invalid("graph needs at least one node"));
        }
        let mut stored: Vec<Edge> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for e in edges {
            if e.u >= n_nodes || e.v >= n_nodes {
                return Err(Error::invalid(format!(
                    "edge ({}, {}) references a node outside 0..{n_nodes}",
                    e.u, e.v
                )));
            }
            if e.u == e.v {
                return Err(Error::invalid(format!("self-loop on node {}", e.u)));
            }
            if !e.weight.is_finite() {
                return Err(Error::invalid(format!("non-finite weight on ({}, {})", e.u, e.v)));
            }
            let (u, v) = if e.u < e.v { (e.u, e.v) } else { (e.v, e.u) };
            if !seen.insert((u, v)) {
                return Err(Error::invalid(format!("duplicate edge ({u}, {v})")));
            }
            stored.push(Edge { u, v, weight: e.weight });
        }
        let mut neighbors = vec![Vec::new(); n_nodes];
        for e in &stored {
            neighbors[e.u].push((e.v, e.weight));
            neighbors[e.v].push((e.u, e.weight));
        }
        for list in &mut neighbors {
            list.sort_by_key(|&(n, _)| n);
        }
        Ok(Graph { n_nodes, edges: stored, neighbors })
    }

    /// Graph without edges.
    pub fn empty(n_nodes: usize) -> Result<Self> {
        Graph::new(n_nodes, std::iter::empty())
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn neighbors(&self, v: NodeId) -> &[(NodeId, f64)] {
        &self.neighbors[v]
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.neighbors[v].len()
    }

    pub fn directed_pairs(&self) -> DirectedPairs {
        let total: usize = self.neighbors.iter().map(Vec::len).sum();
        let mut receiver = Vec::with_capacity(total);
        let mut sender = Vec::with_capacity(total);
        let mut weight = Vec::with_capacity(total);
        for (v, list) in self.neighbors.iter().enumerate() {
            for &(u, w) in list {
                receiver.push(v);
                sender.push(u);
                weight.push(w);
            }
        }
        let unit_weights = weight.iter().all(|&w| w == 1.0);
        DirectedPairs { receiver, sender, weight, unit_weights }
    }

    /// Relabel nodes: node `v` of `self` becomes node `perm[v]`.
    pub fn permuted(&self, perm: &[NodeId]) -> Result<Graph> {
        if perm.len() != self.n_nodes {
            return Err(Error::Shape(format!(
                "permutation of length {} for {} nodes",
                perm.len(),
                self.n_nodes
            )));
        }
        Graph::new(
            self.n_nodes,
            self.edges.iter().map(|e| Edge { u: perm[e.u], v: perm[e.v], weight: e.weight }),
        )
    }

    /// Same graph with every edge weight multiplied by `factor`.
    pub fn scaled_weights(&self, factor: f64) -> Result<Graph> {
        Graph::new(
            self.n_nodes,
            self.edges.iter().map(|e| Edge { weight: e.weight * factor, ..*e }),
        )
    }

    /// Edge-list text: a `#nodes=<n>` header then one `u v weight` line per edge.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("#nodes={}\n", self.n_nodes);
        for e in &self.edges {
            let _ = writeln!(out, "{} {} {:?}", e.u, e.v, e.weight);
        }
        out
    }

    pub fn from_edge_list(text: &str) -> Result<Graph> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::format("edge list", "empty input"))?;
        let n_nodes: usize = header
            .trim()
            .strip_prefix("#nodes=")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format("edge list", format!("bad header {header:?}")))?;
        let mut edges = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let mut next = |name: &str| {
                parts.next().ok_or_else(|| {
                    Error::format("edge list", format!("line {}: missing {name}", i + 2))
                })
            };
            let u = next("u")?;
            let v = next("v")?;
            let w = next("weight")?;
            let bad = || Error::format("edge list", format!("line {}: {line:?}", i + 2));
            edges.push(Edge {
                u: u.parse().map_err(|_| bad())?,
                v: v.parse().map_err(|_| bad())?,
                weight: w.parse().map_err(|_| bad())?,
            });
        }
        Graph::new(n_nodes, edges)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_edge_list())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Graph> {
        Graph::from_edge_list(&std::fs::read_to_string(path)?)
    }
}

/// Erdős–Rényi G(n, p): each unordered pair is present independently with
/// probability `p`.
pub fn gen_er(n: usize, p: f64, seed: u64) -> Result<Graph> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("edge probability {p} outside [0, 1]")));
    }
    let mut rng = rng::rng(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if rng.random::<f64>() < p {
                edges.push(Edge { u, v, weight: 1.0 });
            }
        }
    }
    Graph::new(n, edges)
}

/// Barabási–Albert preferential attachment.
///
/// Starts from `m` isolated seed nodes. Node `m` attaches to all of them;
/// every later node attaches `m` distinct edges whose targets are drawn from
/// the repeated-endpoint list, i.e. proportionally to current degree.
pub fn gen_ba(n: usize, m: usize, seed: u64) -> Result<Graph> {
    if m == 0 || m >= n {
        return Err(Error::invalid(format!("attachment count m={m} must satisfy 1 <= m < n={n}")));
    }
    let mut rng = rng::rng(seed);
    let mut edges = Vec::with_capacity((n - m) * m);
    let mut repeated: Vec<NodeId> = Vec::with_capacity(2 * (n - m) * m);
    let mut targets: Vec<NodeId> = (0..m).collect();
    for source in m..n {
        for &t in &targets {
            edges.push(Edge { u: t, v: source, weight: 1.0 });
        }
        repeated.extend_from_slice(&targets);
        repeated.extend(std::iter::repeat_n(source, m));
        targets.clear();
        while targets.len() < m {
            let pick = repeated[rng.random_range(0..repeated.len())];
            if !targets.contains(&pick) {
                targets.push(pick);
            }
        }
    }
    Graph::new(n, edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn er_extremes() {
        assert_eq!(gen_er(4, 1.0, 3).unwrap().n_edges(), 6);
        assert_eq!(gen_er(4, 0.0, 3).unwrap().n_edges(), 0);
        assert!(gen_er(4, 1.5, 3).is_err());
        assert!(gen_er(4, -0.1, 3).is_err());
    }

    #[test]
    fn er_mean_edge_count_matches_binomial() {
        // p * C(200, 2) = 398; std of the count is sqrt(19900 * 0.02 * 0.98)
        let n_seeds = 100;
        let counts: Vec<f64> =
            (0..n_seeds).map(|s| gen_er(200, 0.02, s).unwrap().n_edges() as f64).collect();
        let mean = counts.iter().sum::<f64>() / n_seeds as f64;
        let std_err = (19900.0_f64 * 0.02 * 0.98).sqrt() / (n_seeds as f64).sqrt();
        assert!((mean - 398.0).abs() < 3.0 * std_err, "mean {mean}");
    }

    #[test]
    fn ba_edge_counts() {
        assert_eq!(gen_ba(200, 3, 1).unwrap().n_edges(), 591);
        let g = gen_ba(4, 3, 9).unwrap();
        assert_eq!(g.n_edges(), 3);
        assert_eq!(g.degree(3), 3);
        assert!(gen_ba(3, 3, 0).is_err());
        assert!(gen_ba(5, 0, 0).is_err());
    }

    #[test]
    fn ba_min_degree() {
        let g = gen_ba(50, 3, 11).unwrap();
        for v in 3..50 {
            assert!(g.degree(v) >= 3, "node {v} has degree {}", g.degree(v));
        }
    }

    #[test]
    fn rejects_bad_edges() {
        let e = |u, v| Edge { u, v, weight: 1.0 };
        assert!(Graph::new(3, [e(0, 0)]).is_err());
        assert!(Graph::new(3, [e(0, 3)]).is_err());
        assert!(Graph::new(3, [e(0, 1), e(1, 0)]).is_err());
    }

    #[test]
    fn neighbor_index_is_symmetric() {
        let g = gen_ba(60, 3, 5).unwrap();
        for v in 0..g.n_nodes() {
            for &(u, w) in g.neighbors(v) {
                assert!(g.neighbors(u).iter().any(|&(x, wx)| x == v && wx == w));
            }
        }
    }

    #[test]
    fn edge_list_round_trip() {
        let g = Graph::new(
            5,
            [Edge { u: 0, v: 4, weight: 0.1 + 0.2 }, Edge { u: 2, v: 1, weight: 1.0 / 3.0 }],
        )
        .unwrap();
        let text = g.to_edge_list();
        let back = Graph::from_edge_list(&text).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.to_edge_list(), text);
        assert!(Graph::from_edge_list("nodes=3\n").is_err());
        assert!(Graph::from_edge_list("#nodes=3\n0 x 1\n").is_err());
    }

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(gen_ba(80, 3, 42).unwrap().to_edge_list(), gen_ba(80, 3, 42).unwrap().to_edge_list());
        assert_eq!(gen_er(80, 0.05, 42).unwrap().to_edge_list(), gen_er(80, 0.05, 42).unwrap().to_edge_list());
        assert_ne!(gen_ba(80, 3, 42).unwrap().to_edge_list(), gen_ba(80, 3, 43).unwrap().to_edge_list());
    }
}
