//! Communication graphs, Laplacians and the per-constraint sparsity pattern.
//!
//! Nodes are 0-based throughout the library. Scenario files use 1-based
//! agent numbers and convert at the boundary.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::{DMatrix, DVector};

use crate::linalg::symmetric_eigenvalues;

use crate::error::{Error, Result};

/// Undirected graph with unit edge weights.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    adjacency: Vec<BTreeSet<usize>>,
}

impl Graph {
    /// Builds a graph from an edge list. Self-loops, duplicate edges and
    /// out-of-range endpoints are rejected.
    pub fn new(node_count: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::InvalidGraph("graph needs at least one node".into()));
        }
        let mut adjacency = vec![BTreeSet::new(); node_count];
        for &(i, j) in edges {
            if i >= node_count || j >= node_count {
                return Err(Error::InvalidGraph(format!(
                    "edge ({}, {}) out of range for {} nodes",
                    i + 1,
                    j + 1,
                    node_count
                )));
            }
            if i == j {
                return Err(Error::InvalidGraph(format!("self-loop at node {}", i + 1)));
            }
            if !adjacency[i].insert(j) {
                return Err(Error::InvalidGraph(format!(
                    "duplicate edge ({}, {})",
                    i + 1,
                    j + 1
                )));
            }
            adjacency[j].insert(i);
        }
        Ok(Self { adjacency })
    }

    /// Path 0 - 1 - ... - (n-1).
    pub fn path(node_count: usize) -> Result<Self> {
        let edges: Vec<_> = (1..node_count).map(|i| (i - 1, i)).collect();
        Self::new(node_count, &edges)
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, node: usize) -> &BTreeSet<usize> {
        &self.adjacency[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency[node].len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i].contains(&j)
    }

    /// Edges as `(i, j)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(i, nbrs)| nbrs.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
            .collect()
    }

    pub fn is_connected(&self) -> bool {
        let all: Vec<usize> = (0..self.node_count()).collect();
        self.induces_connected(&all)
    }

    /// True iff the subgraph induced by `nodes` is connected. The empty set
    /// and singletons count as connected.
    pub fn induces_connected(&self, nodes: &[usize]) -> bool {
        let members: BTreeSet<usize> = nodes.iter().copied().collect();
        let Some(&start) = members.iter().next() else {
            return true;
        };
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &v in &self.adjacency[u] {
                if members.contains(&v) && seen.insert(v) {
                    queue.push_back(v);
                }
            }
        }
        seen.len() == members.len()
    }

    pub fn laplacian(&self) -> DMatrix<f64> {
        let all: Vec<usize> = (0..self.node_count()).collect();
        self.induced_subgraph_laplacian(&all)
    }

    /// N x N Laplacian of the graph that keeps only edges with both
    /// endpoints in `nodes`. Rows and columns of excluded nodes are zero.
    pub fn induced_subgraph_laplacian(&self, nodes: &[usize]) -> DMatrix<f64> {
        let n = self.node_count();
        let members: BTreeSet<usize> = nodes.iter().copied().filter(|&i| i < n).collect();
        let mut lap = DMatrix::zeros(n, n);
        for &i in &members {
            for &j in self.adjacency[i].intersection(&members) {
                lap[(i, j)] = -1.0;
                lap[(i, i)] += 1.0;
            }
        }
        lap
    }

    /// Spectral norm of the Laplacian (its largest eigenvalue).
    pub fn laplacian_norm(&self) -> f64 {
        symmetric_eigenvalues(&self.laplacian())
            .iter()
            .fold(0.0_f64, |acc, &v| acc.max(v))
    }
}

/// Which agents take part in which coupling constraint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityPattern {
    agents_of_constraint: Vec<BTreeSet<usize>>,
    constraints_of_agent: Vec<BTreeSet<usize>>,
}

impl SparsityPattern {
    /// Pattern from the index sets `I_m`, one per constraint.
    pub fn from_constraint_sets(agent_count: usize, sets: Vec<BTreeSet<usize>>) -> Result<Self> {
        let mut constraints_of_agent = vec![BTreeSet::new(); agent_count];
        for (m, set) in sets.iter().enumerate() {
            for &i in set {
                if i >= agent_count {
                    return Err(Error::InvalidProblem(format!(
                        "constraint {} references agent {} of {}",
                        m + 1,
                        i + 1,
                        agent_count
                    )));
                }
                constraints_of_agent[i].insert(m);
            }
        }
        Ok(Self {
            agents_of_constraint: sets,
            constraints_of_agent,
        })
    }

    /// Every agent in every constraint.
    pub fn dense(agent_count: usize, constraint_count: usize) -> Self {
        let all: BTreeSet<usize> = (0..agent_count).collect();
        Self::from_constraint_sets(agent_count, vec![all; constraint_count])
            .expect("indices in range")
    }

    pub fn agent_count(&self) -> usize {
        self.constraints_of_agent.len()
    }

    pub fn constraint_count(&self) -> usize {
        self.agents_of_constraint.len()
    }

    /// `I_m`.
    pub fn agents_of(&self, constraint: usize) -> &BTreeSet<usize> {
        &self.agents_of_constraint[constraint]
    }

    /// `M_i`.
    pub fn constraints_of(&self, agent: usize) -> &BTreeSet<usize> {
        &self.constraints_of_agent[agent]
    }

    pub fn involves(&self, agent: usize, constraint: usize) -> bool {
        self.agents_of_constraint[constraint].contains(&agent)
    }

    /// A constraint touched by at most one agent needs no auxiliary variables.
    pub fn is_local(&self, constraint: usize) -> bool {
        self.agents_of_constraint[constraint].len() <= 1
    }

    /// `N_i^m = N_i ∩ I_m`.
    pub fn relevant_neighbors(&self, graph: &Graph, agent: usize, constraint: usize) -> Vec<usize> {
        graph
            .neighbors(agent)
            .intersection(&self.agents_of_constraint[constraint])
            .copied()
            .collect()
    }
}

/// Per-constraint connectivity of the induced subgraphs.
pub fn check_consistency(graph: &Graph, pattern: &SparsityPattern) -> Vec<bool> {
    (0..pattern.constraint_count())
        .map(|m| {
            let nodes: Vec<usize> = pattern.agents_of(m).iter().copied().collect();
            graph.induces_connected(&nodes)
        })
        .collect()
}

/// Reordering between the agent-major `(i, m) -> i*M + m` and the
/// constraint-major `(i, m) -> m*N + i` layouts of an NM-vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    /// `forward[k]` is the destination of source index `k`.
    forward: Vec<usize>,
}

impl Permutation {
    pub fn identity(size: usize) -> Self {
        Self {
            forward: (0..size).collect(),
        }
    }

    pub fn agents_to_constraints(agent_count: usize, constraint_count: usize) -> Self {
        let forward = (0..agent_count * constraint_count)
            .map(|k| {
                let (i, m) = (k / constraint_count, k % constraint_count);
                m * agent_count + i
            })
            .collect();
        Self { forward }
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    /// 0-based destination index of each source index.
    pub fn mapping(&self) -> &[usize] {
        &self.forward
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.forward.len()];
        for (src, &dst) in self.forward.iter().enumerate() {
            inv[dst] = src;
        }
        Self { forward: inv }
    }

    /// `self` first, then `other`.
    pub fn then(&self, other: &Permutation) -> Self {
        Self {
            forward: self.forward.iter().map(|&k| other.forward[k]).collect(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.forward.iter().enumerate().all(|(k, &v)| k == v)
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        assert_eq!(v.len(), self.forward.len(), "permutation size mismatch");
        let mut out = DVector::zeros(v.len());
        for (src, &dst) in self.forward.iter().enumerate() {
            out[dst] = v[src];
        }
        out
    }

    /// `J` with `J * v == self.apply(v)`.
    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.forward.len();
        let mut j = DMatrix::zeros(n, n);
        for (src, &dst) in self.forward.iter().enumerate() {
            j[(dst, src)] = 1.0;
        }
        j
    }
}
