//! Communication graphs and symmetric doubly stochastic mixing matrices.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Path,
    Ring,
    Star,
    Complete,
}

impl TopologyKind {
    pub const ALL: [TopologyKind; 4] = [TopologyKind::Path, TopologyKind::Ring, TopologyKind::Star, TopologyKind::Complete];

    pub fn name(self) -> &'static str {
        match self {
            TopologyKind::Path => "path",
            TopologyKind::Ring => "ring",
            TopologyKind::Star => "star",
            TopologyKind::Complete => "complete",
        }
    }

    /// Uniform weights for the regular graphs, Metropolis otherwise.
    pub fn default_scheme(self) -> WeightScheme {
        match self {
            TopologyKind::Ring | TopologyKind::Complete => WeightScheme::UniformNeighbor,
            TopologyKind::Path | TopologyKind::Star => WeightScheme::Metropolis,
        }
    }
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TopologyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TopologyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::arg(format!("unknown topology `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    UniformNeighbor,
    Metropolis,
}

/// Undirected connected graph without stored self-loops.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Graph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl Graph {
    /// Builds a graph from unordered pairs; rejects self-loops, out-of-range
    /// nodes and disconnected graphs.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::arg("graph needs at least one node"));
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::arg(format!("edge ({a}, {b}) out of range for {n} nodes")));
            }
            if a == b {
                return Err(Error::arg(format!("self-loop at node {a}")));
            }
            set.insert((a.min(b), a.max(b)));
        }
        let g = Self { n, edges: set };
        if !g.is_connected() {
            return Err(Error::DegenerateTopology("graph is disconnected".into()));
        }
        Ok(g)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.n];
        for &(a, b) in &self.edges {
            d[a] += 1;
            d[b] += 1;
        }
        d
    }

    fn is_connected(&self) -> bool {
        let mut adj = vec![Vec::new(); self.n];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; self.n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

pub fn build_graph(kind: TopologyKind, n: usize) -> Result<Graph> {
    let min = if kind == TopologyKind::Ring { 3 } else { 2 };
    if n < min {
        return Err(Error::arg(format!("{kind} graph needs n >= {min}, got {n}")));
    }
    let edges: Vec<(usize, usize)> = match kind {
        TopologyKind::Path => (0..n - 1).map(|i| (i, i + 1)).collect(),
        TopologyKind::Ring => (0..n).map(|i| (i, (i + 1) % n)).collect(),
        TopologyKind::Star => (1..n).map(|i| (0, i)).collect(),
        TopologyKind::Complete => (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect(),
    };
    Graph::new(n, edges)
}

/// Dense symmetric doubly stochastic matrix with its contraction factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingMatrix {
    n: usize,
    weights: Vec<Vec<f64>>,
    rho: f64,
}

impl MixingMatrix {
    /// Validates symmetry, stochasticity and nonnegativity, then computes
    /// `rho`. A matrix that does not contract is a degenerate-topology error.
    pub fn from_weights(weights: Vec<Vec<f64>>) -> Result<Self> {
        let n = weights.len();
        if n == 0 || weights.iter().any(|r| r.len() != n) {
            return Err(Error::arg("mixing matrix must be square and nonempty"));
        }
        for i in 0..n {
            let row: f64 = weights[i].iter().sum();
            if (row - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::invariant(format!("row {i} sums to {row}")));
            }
            for j in 0..n {
                let w = weights[i][j];
                if !w.is_finite() || w < 0.0 {
                    return Err(Error::invariant(format!("entry ({i}, {j}) = {w}")));
                }
                if (w - weights[j][i]).abs() > STOCHASTIC_TOL {
                    return Err(Error::invariant(format!("asymmetric at ({i}, {j})")));
                }
            }
        }
        let rho = spectral_rho_of(&weights);
        if rho >= 1.0 - 1e-12 {
            return Err(Error::DegenerateTopology(format!("rho = {rho} does not contract")));
        }
        Ok(Self { n, weights, rho })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i][j]
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Whether every positive off-diagonal weight lies on a graph edge.
    pub fn respects(&self, graph: &Graph) -> bool {
        graph.n() == self.n
            && (0..self.n).all(|i| (0..self.n).all(|j| i == j || self.weights[i][j] == 0.0 || graph.has_edge(i, j)))
    }

    /// `x_i <- sum_j w_ij x_j` over stacked node vectors.
    pub fn apply(&self, stacked: &[Vec<f64>]) -> Vec<Vec<f64>> {
        assert_eq!(stacked.len(), self.n);
        let d = stacked.first().map_or(0, Vec::len);
        (0..self.n)
            .map(|i| {
                let mut out = vec![0.0; d];
                for (j, x) in stacked.iter().enumerate() {
                    let w = self.weights[i][j];
                    if w != 0.0 {
                        crate::linalg::axpy(w, x, &mut out);
                    }
                }
                out
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses a dumped matrix and recomputes `rho` rather than trusting it.
    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Raw {
            weights: Vec<Vec<f64>>,
        }
        let raw: Raw = serde_json::from_str(text)?;
        Self::from_weights(raw.weights)
    }
}

pub fn build_mixing(graph: &Graph, scheme: WeightScheme) -> Result<MixingMatrix> {
    let n = graph.n();
    let deg = graph.degrees();
    let mut w = vec![vec![0.0; n]; n];
    match scheme {
        WeightScheme::UniformNeighbor => {
            if deg.iter().any(|&d| d != deg[0]) {
                return Err(Error::arg("uniform_neighbor weights need a regular graph"));
            }
            let v = 1.0 / (deg[0] + 1) as f64;
            for (a, b) in graph.edges() {
                w[a][b] = v;
                w[b][a] = v;
            }
            for (i, row) in w.iter_mut().enumerate() {
                row[i] = v;
            }
        }
        WeightScheme::Metropolis => {
            for (a, b) in graph.edges() {
                let v = 1.0 / (1 + deg[a].max(deg[b])) as f64;
                w[a][b] = v;
                w[b][a] = v;
            }
            for i in 0..n {
                let off: f64 = (0..n).filter(|&j| j != i).map(|j| w[i][j]).sum();
                w[i][i] = 1.0 - off;
            }
        }
    }
    MixingMatrix::from_weights(w)
}

/// `build_mixing(build_graph(kind, n), kind.default_scheme())`.
pub fn default_mixing(kind: TopologyKind, n: usize) -> Result<MixingMatrix> {
    build_mixing(&build_graph(kind, n)?, kind.default_scheme())
}

fn spectral_rho_of(weights: &[Vec<f64>]) -> f64 {
    let n = weights.len();
    let inv = 1.0 / n as f64;
    let shifted = DMatrix::from_fn(n, n, |i, j| weights[i][j] - inv);
    let eig = shifted.symmetric_eigen();
    eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// `||W - (1/n) 1 1^T||` for a symmetric doubly stochastic `W`; errors when
/// the matrix does not contract.
pub fn spectral_rho(weights: &[Vec<f64>]) -> Result<f64> {
    let rho = spectral_rho_of(weights);
    if rho >= 1.0 - 1e-12 {
        return Err(Error::DegenerateTopology(format!("rho = {rho} does not contract")));
    }
    Ok(rho)
}
