#![allow(dead_code)]

use std::collections::BTreeSet;

use ccflow::{AgentSpec, CoupledProblem, Graph, QuadraticCost};
use nalgebra::{DMatrix, DVector};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| uniform(rng, -scale, scale))
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| uniform(rng, -scale, scale))
}

/// Random spanning tree plus extra edges with probability `extra`.
pub fn connected_graph(rng: &mut ChaCha8Rng, n: usize, extra: f64) -> Graph {
    let mut edges = BTreeSet::new();
    for k in 1..n {
        let parent = rng.random_range(0..k);
        edges.insert((parent, k));
    }
    for i in 0..n {
        for j in i + 1..n {
            if !edges.contains(&(i, j)) && rng.random_bool(extra) {
                edges.insert((i, j));
            }
        }
    }
    Graph::new(n, &edges.into_iter().collect::<Vec<_>>()).unwrap()
}

/// Connected node set of the given size grown from a random seed node.
pub fn connected_subset(rng: &mut ChaCha8Rng, graph: &Graph, size: usize) -> BTreeSet<usize> {
    let n = graph.node_count();
    let mut set = BTreeSet::from([rng.random_range(0..n)]);
    while set.len() < size.min(n) {
        let frontier: Vec<usize> = set
            .iter()
            .flat_map(|&i| graph.neighbors(i).iter().copied())
            .filter(|j| !set.contains(j))
            .collect();
        set.insert(*frontier.choose(rng).unwrap());
    }
    set
}

/// Positive definite `R'R + floor I`.
pub fn pd_matrix(rng: &mut ChaCha8Rng, d: usize, floor: f64) -> DMatrix<f64> {
    let r = random_matrix(rng, d, d, 1.0);
    r.transpose() * &r + DMatrix::identity(d, d) * floor
}

pub struct Instance {
    pub problem: CoupledProblem,
    /// Strictly feasible stacked point used to place the offsets.
    pub interior: DVector<f64>,
}

#[derive(Clone, Copy)]
pub struct Shape {
    pub agents: usize,
    pub constraints: usize,
    /// Extra local dimensions on top of the number of constraints.
    pub extra_dims: usize,
    /// When false every constraint involves every agent.
    pub sparse: bool,
}

/// Random strongly convex problem whose offsets make a random point
/// strictly feasible. Every agent has at least as many variables as
/// constraints and generic columns, so each local program is feasible for
/// every `y`.
pub fn instance(rng: &mut ChaCha8Rng, shape: Shape) -> Instance {
    let n = shape.agents;
    let m = shape.constraints;
    let graph = connected_graph(rng, n, 0.3);
    let supports: Vec<BTreeSet<usize>> = (0..m)
        .map(|_| {
            if shape.sparse {
                let size = rng.random_range(1..=n);
                connected_subset(rng, &graph, size)
            } else {
                (0..n).collect()
            }
        })
        .collect();
    let dims: Vec<usize> = (0..n)
        .map(|_| m + rng.random_range(0..=shape.extra_dims))
        .collect();
    let interior_parts: Vec<DVector<f64>> =
        dims.iter().map(|&d| random_vector(rng, d, 1.0)).collect();
    let slack: Vec<f64> = (0..m).map(|_| uniform(rng, 0.2, 1.5)).collect();
    let agents = (0..n)
        .map(|i| {
            let d = dims[i];
            let cost = QuadraticCost::new(pd_matrix(rng, d, 0.5), random_vector(rng, d, 1.0), 0.0)
                .unwrap();
            let mut coupling = DMatrix::zeros(d, m);
            let mut offsets = DVector::zeros(m);
            for (k, support) in supports.iter().enumerate() {
                if support.contains(&i) {
                    let mut col = random_vector(rng, d, 1.0);
                    if col.norm() < 0.2 {
                        col.add_scalar_mut(0.5);
                    }
                    offsets[k] = -col.dot(&interior_parts[i]) - slack[k] / support.len() as f64;
                    coupling.set_column(k, &col);
                }
            }
            AgentSpec::new(cost, coupling, offsets).unwrap()
        })
        .collect();
    let problem = CoupledProblem::new(agents, graph).unwrap();
    let interior = problem.stack(&interior_parts);
    Instance { problem, interior }
}

/// Every subset of `0..p` as a sorted index list.
pub fn subsets(p: usize) -> impl Iterator<Item = Vec<usize>> {
    (0u32..(1u32 << p)).map(move |mask| (0..p).filter(|&k| mask & (1 << k) != 0).collect())
}

/// Exhaustive active-set enumeration for `min 1/2 x'Hx + g'x  s.t.  A x + b <= 0`
/// with positive definite `H`: solves the KKT system of every candidate
/// active set and keeps the best primal-dual feasible one.
pub fn enumerate_qp(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Option<(DVector<f64>, f64)> {
    let n = g.len();
    let p = b.len();
    let mut best: Option<(DVector<f64>, f64)> = None;
    for set in subsets(p) {
        let k = set.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(h);
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&(-g));
        for (r, &j) in set.iter().enumerate() {
            for c in 0..n {
                kkt[(n + r, c)] = a[(j, c)];
                kkt[(c, n + r)] = a[(j, c)];
            }
            rhs[n + r] = -b[j];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else {
            continue;
        };
        let x = sol.rows(0, n).into_owned();
        let lambda = sol.rows(n, k);
        let feasible = (a * &x + b).iter().all(|&r| r <= 1e-9);
        if !feasible || lambda.iter().any(|&l| l < -1e-9) {
            continue;
        }
        let value = 0.5 * x.dot(&(h * &x)) + g.dot(&x);
        if best.as_ref().is_none_or(|(_, v)| value < *v) {
            best = Some((x, value));
        }
    }
    best
}
