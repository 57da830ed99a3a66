//! Seeded generators for randomized scenarios and test instances.

use std::collections::BTreeSet;

use ccflow::{AgentSpec, CoupledProblem, Graph, QuadraticCost};
use nalgebra::{DMatrix, DVector};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rng64 = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng64 {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn vector(rng: &mut Rng64, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

pub fn matrix(rng: &mut Rng64, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
}

/// `R'R + floor I` with uniform `R`.
pub fn positive_definite(rng: &mut Rng64, d: usize, floor: f64) -> DMatrix<f64> {
    let r = matrix(rng, d, d, 1.0);
    r.transpose() * &r + DMatrix::identity(d, d) * floor
}

/// Random spanning tree plus each remaining edge with probability `extra`.
pub fn connected_graph(rng: &mut Rng64, n: usize, extra: f64) -> Graph {
    let mut edges = BTreeSet::new();
    for k in 1..n {
        edges.insert((rng.random_range(0..k), k));
    }
    for i in 0..n {
        for j in i + 1..n {
            if !edges.contains(&(i, j)) && rng.random_bool(extra) {
                edges.insert((i, j));
            }
        }
    }
    Graph::new(n, &edges.into_iter().collect::<Vec<_>>()).expect("tree edges are valid")
}

/// Connected node set of `size` nodes grown from a random seed node.
pub fn connected_subset(rng: &mut Rng64, graph: &Graph, size: usize) -> BTreeSet<usize> {
    let mut set = BTreeSet::from([rng.random_range(0..graph.node_count())]);
    while set.len() < size.min(graph.node_count()) {
        let frontier: Vec<usize> = set
            .iter()
            .flat_map(|&i| graph.neighbors(i).iter().copied())
            .filter(|j| !set.contains(j))
            .collect();
        set.insert(*frontier.choose(rng).expect("graph is connected"));
    }
    set
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomSpec {
    pub agents: usize,
    pub constraints: usize,
    /// Local dimension is `constraints + U{0..=extra_dims}`.
    pub extra_dims: usize,
    /// Each constraint involves a random connected agent subset instead of
    /// every agent.
    pub sparse: bool,
}

/// Strongly convex coupled problem with a strictly feasible random point
/// (returned alongside). Every agent has at least as many variables as
/// constraints, so the local programs are feasible for any `y`.
pub fn coupled_problem(rng: &mut Rng64, spec: &RandomSpec) -> (CoupledProblem, DVector<f64>) {
    let n = spec.agents;
    let m = spec.constraints;
    let graph = connected_graph(rng, n, 0.3);
    let supports: Vec<BTreeSet<usize>> = (0..m)
        .map(|_| {
            if spec.sparse {
                let size = rng.random_range(1..=n);
                connected_subset(rng, &graph, size)
            } else {
                (0..n).collect()
            }
        })
        .collect();
    let dims: Vec<usize> = (0..n)
        .map(|_| m + rng.random_range(0..=spec.extra_dims))
        .collect();
    let interior: Vec<DVector<f64>> = dims.iter().map(|&d| vector(rng, d, 1.0)).collect();
    let slack: Vec<f64> = (0..m).map(|_| rng.random_range(0.2..1.5)).collect();
    let agents = (0..n)
        .map(|i| {
            let d = dims[i];
            let cost = QuadraticCost::new(positive_definite(rng, d, 0.5), vector(rng, d, 1.0), 0.0)
                .expect("positive definite");
            let mut coupling = DMatrix::zeros(d, m);
            let mut offsets = DVector::zeros(m);
            for (k, support) in supports.iter().enumerate() {
                if support.contains(&i) {
                    let mut col = vector(rng, d, 1.0);
                    if col.norm() < 0.2 {
                        col.add_scalar_mut(0.5);
                    }
                    offsets[k] = -col.dot(&interior[i]) - slack[k] / support.len() as f64;
                    coupling.set_column(k, &col);
                }
            }
            AgentSpec::new(cost, coupling, offsets).expect("consistent shapes")
        })
        .collect();
    let problem = CoupledProblem::new(agents, graph).expect("generated problem is valid");
    let x = problem.stack(&interior);
    (problem, x)
}

/// Problem with `sum d_i <= 4` and at most six rows: one to three shared
/// constraints plus single-agent ones.
pub fn tiny_problem(rng: &mut Rng64) -> CoupledProblem {
    let n = rng.random_range(1..=3);
    let mut dims = vec![1; n];
    for _ in 0..rng.random_range(0..=(4 - n)) {
        let i = rng.random_range(0..n);
        dims[i] += 1;
    }
    let shared = rng.random_range(1..=3);
    let locals = rng.random_range(0..=(6 - shared));
    let owners: Vec<usize> = (0..locals).map(|_| rng.random_range(0..n)).collect();
    let m = shared + locals;
    let graph = connected_graph(rng, n, 0.5);
    let interior: Vec<DVector<f64>> = dims.iter().map(|&d| vector(rng, d, 1.0)).collect();
    let agents = (0..n)
        .map(|i| {
            let d = dims[i];
            let cost = QuadraticCost::new(positive_definite(rng, d, 0.2), vector(rng, d, 2.0), 0.0)
                .expect("positive definite");
            let mut coupling = DMatrix::zeros(d, m);
            let mut offsets = DVector::zeros(m);
            for k in 0..m {
                if k < shared || owners[k - shared] == i {
                    let col = vector(rng, d, 1.0);
                    offsets[k] = -col.dot(&interior[i]) - rng.random_range(0.0..0.5);
                    coupling.set_column(k, &col);
                }
            }
            AgentSpec::new(cost, coupling, offsets).expect("consistent shapes")
        })
        .collect();
    CoupledProblem::new(agents, graph).expect("generated problem is valid")
}

/// Identity-Hessian local program data `(A, x_nom, shift)` with `A` of size
/// `d x m`, `m <= d <= 4`, and condition number at most 100.
pub fn tracking_program(rng: &mut Rng64) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
    loop {
        let d = rng.random_range(1..=4);
        let m = rng.random_range(1..=d);
        let a = matrix(rng, d, m, 1.0);
        let sv = a.clone().svd(false, false).singular_values;
        if sv.min() <= 0.0 || sv.max() / sv.min() > 100.0 {
            continue;
        }
        return (a, vector(rng, d, 2.0), vector(rng, m, 1.5));
    }
}

/// `y` with the entries a structure leaves unallocated set to zero.
pub fn auxiliary(
    rng: &mut Rng64,
    problem: &CoupledProblem,
    structure: ccflow::Structure,
    scale: f64,
) -> DVector<f64> {
    let mut y = vector(
        rng,
        problem.agent_count() * problem.constraint_count(),
        scale,
    );
    for (k, live) in problem.auxiliary_mask(structure).into_iter().enumerate() {
        if !live {
            y[k] = 0.0;
        }
    }
    y
}
