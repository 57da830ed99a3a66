//! Constraint-coupled problems
//!
//! ```text
//!     minimize    sum_i f_i(x_i)
//!     subject to  sum_i a_i^m' x_i + b_i^m <= 0,   m = 1..M
//! ```
//!
//! over agents on a communication graph, with convex quadratic `f_i`.
//! Auxiliary allocation vectors `y` are stored constraint-major,
//! `y[m * N + i] = y_i^m`.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};

use crate::linalg::{symmetric_eigen, symmetric_eigenvalues};

use crate::error::{Error, Result};
use crate::network::{Graph, SparsityPattern};
use crate::qp::{QpOptions, QuadraticProgram};

/// How coupling constraints are split into local ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Structure {
    /// Every agent keeps a copy of every shared constraint and exchanges
    /// auxiliary variables with all of its neighbors.
    Dense,
    /// Agent `i` keeps only the constraints in `M_i` and exchanges with
    /// `N_i^m = N_i ∩ I_m`.
    Sparse,
}

/// `f(x) = 1/2 x' Q x + q' x + constant` with `Q` symmetric PSD.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCost {
    hessian: DMatrix<f64>,
    linear: DVector<f64>,
    constant: f64,
}

impl QuadraticCost {
    pub fn new(hessian: DMatrix<f64>, linear: DVector<f64>, constant: f64) -> Result<Self> {
        let d = linear.len();
        if hessian.nrows() != d || hessian.ncols() != d {
            return Err(Error::Dimension {
                what: "cost hessian",
                expected: d,
                actual: hessian.nrows(),
            });
        }
        let scale = hessian.amax().max(1.0);
        if (&hessian - hessian.transpose()).amax() > 1e-12 * scale {
            return Err(Error::InvalidProblem(
                "cost hessian is not symmetric".into(),
            ));
        }
        if d > 0 {
            let min_eig = symmetric_eigenvalues(&hessian).min();
            if min_eig < -1e-10 * scale {
                return Err(Error::InvalidProblem(format!(
                    "cost hessian is not positive semidefinite (eigenvalue {min_eig:e})"
                )));
            }
        }
        Ok(Self {
            hessian,
            linear,
            constant,
        })
    }

    /// `1/2 |x - target|^2`.
    pub fn tracking(target: &DVector<f64>) -> Self {
        let d = target.len();
        Self {
            hessian: DMatrix::identity(d, d),
            linear: -target,
            constant: 0.5 * target.norm_squared(),
        }
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.hessian
    }

    pub fn linear(&self) -> &DVector<f64> {
        &self.linear
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn evaluate(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.linear.dot(x) + self.constant
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.hessian * x + &self.linear
    }

    /// True for `Q = I`, the case with a closed-form primal in terms of the
    /// multipliers.
    pub fn is_identity_hessian(&self) -> bool {
        let d = self.dim();
        (&self.hessian - DMatrix::<f64>::identity(d, d)).amax() == 0.0
    }
}

/// One agent's private data: cost, coupling columns `a_i^m` and offsets `b_i^m`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    cost: QuadraticCost,
    /// d_i x M, column m is `a_i^m`.
    coupling: DMatrix<f64>,
    offsets: DVector<f64>,
}

impl AgentSpec {
    pub fn new(cost: QuadraticCost, coupling: DMatrix<f64>, offsets: DVector<f64>) -> Result<Self> {
        if coupling.nrows() != cost.dim() {
            return Err(Error::Dimension {
                what: "coupling matrix rows",
                expected: cost.dim(),
                actual: coupling.nrows(),
            });
        }
        if coupling.ncols() != offsets.len() {
            return Err(Error::Dimension {
                what: "coupling offsets",
                expected: coupling.ncols(),
                actual: offsets.len(),
            });
        }
        Ok(Self {
            cost,
            coupling,
            offsets,
        })
    }

    /// Takes the constraint rows `A_i'` (M x d_i) instead of `A_i`.
    pub fn from_rows(
        cost: QuadraticCost,
        rows: DMatrix<f64>,
        offsets: DVector<f64>,
    ) -> Result<Self> {
        Self::new(cost, rows.transpose(), offsets)
    }

    pub fn dim(&self) -> usize {
        self.cost.dim()
    }

    pub fn cost(&self) -> &QuadraticCost {
        &self.cost
    }

    pub fn coupling(&self) -> &DMatrix<f64> {
        &self.coupling
    }

    pub fn offsets(&self) -> &DVector<f64> {
        &self.offsets
    }

    pub fn constraint_count(&self) -> usize {
        self.offsets.len()
    }

    /// `a_i^m' x_i + b_i^m`.
    pub fn contribution(&self, constraint: usize, x: &DVector<f64>) -> f64 {
        self.coupling.column(constraint).dot(x) + self.offsets[constraint]
    }

    fn touches(&self, constraint: usize) -> bool {
        self.offsets[constraint] != 0.0
            || self.coupling.column(constraint).iter().any(|&v| v != 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CentralizedSolution {
    pub x: DVector<f64>,
    pub cost: f64,
    pub multipliers: DVector<f64>,
    pub kkt_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledProblem {
    agents: Vec<AgentSpec>,
    graph: Graph,
    pattern: SparsityPattern,
    starts: Vec<usize>,
}

impl CoupledProblem {
    /// Derives the sparsity pattern from the nonzero columns and offsets.
    pub fn new(agents: Vec<AgentSpec>, graph: Graph) -> Result<Self> {
        let m = Self::check_agents(&agents, &graph)?;
        let sets = (0..m)
            .map(|k| {
                agents
                    .iter()
                    .enumerate()
                    .filter(|(_, a)| a.touches(k))
                    .map(|(i, _)| i)
                    .collect::<BTreeSet<usize>>()
            })
            .collect();
        let pattern = SparsityPattern::from_constraint_sets(agents.len(), sets)?;
        Ok(Self::assemble(agents, graph, pattern))
    }

    /// Uses a declared pattern. Agents outside `I_m` must have a zero column
    /// and a zero offset for constraint `m`.
    pub fn with_pattern(
        agents: Vec<AgentSpec>,
        graph: Graph,
        pattern: SparsityPattern,
    ) -> Result<Self> {
        let m = Self::check_agents(&agents, &graph)?;
        if pattern.constraint_count() != m || pattern.agent_count() != agents.len() {
            return Err(Error::InvalidProblem(format!(
                "pattern is {} agents x {} constraints, problem is {} x {}",
                pattern.agent_count(),
                pattern.constraint_count(),
                agents.len(),
                m
            )));
        }
        for (i, agent) in agents.iter().enumerate() {
            for k in 0..m {
                if agent.touches(k) && !pattern.involves(i, k) {
                    return Err(Error::InvalidProblem(format!(
                        "agent {} has nonzero data for constraint {} outside the declared pattern",
                        i + 1,
                        k + 1
                    )));
                }
            }
        }
        Ok(Self::assemble(agents, graph, pattern))
    }

    fn check_agents(agents: &[AgentSpec], graph: &Graph) -> Result<usize> {
        let first = agents
            .first()
            .ok_or_else(|| Error::InvalidProblem("problem needs at least one agent".into()))?;
        if graph.node_count() != agents.len() {
            return Err(Error::Dimension {
                what: "graph nodes vs agents",
                expected: agents.len(),
                actual: graph.node_count(),
            });
        }
        let m = first.constraint_count();
        for agent in agents {
            if agent.constraint_count() != m {
                return Err(Error::Dimension {
                    what: "constraints per agent",
                    expected: m,
                    actual: agent.constraint_count(),
                });
            }
        }
        Ok(m)
    }

    fn assemble(agents: Vec<AgentSpec>, graph: Graph, pattern: SparsityPattern) -> Self {
        let mut starts = Vec::with_capacity(agents.len() + 1);
        let mut acc = 0;
        for a in &agents {
            starts.push(acc);
            acc += a.dim();
        }
        starts.push(acc);
        Self {
            agents,
            graph,
            pattern,
            starts,
        }
    }

    pub fn agents(&self) -> &[AgentSpec] {
        &self.agents
    }

    pub fn agent(&self, i: usize) -> &AgentSpec {
        &self.agents[i]
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn pattern(&self) -> &SparsityPattern {
        &self.pattern
    }

    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    pub fn constraint_count(&self) -> usize {
        self.pattern.constraint_count()
    }

    pub fn total_dim(&self) -> usize {
        self.starts[self.agents.len()]
    }

    /// Position of `y_i^m` in a constraint-major NM-vector.
    pub fn y_index(&self, agent: usize, constraint: usize) -> usize {
        constraint * self.agent_count() + agent
    }

    pub fn agent_slice(&self, x: &DVector<f64>, agent: usize) -> DVector<f64> {
        x.rows(self.starts[agent], self.agents[agent].dim())
            .into_owned()
    }

    pub fn stack(&self, parts: &[DVector<f64>]) -> DVector<f64> {
        let mut x = DVector::zeros(self.total_dim());
        for (i, part) in parts.iter().enumerate() {
            x.rows_mut(self.starts[i], part.len()).copy_from(part);
        }
        x
    }

    /// Constraints appearing in agent `i`'s local program. Constraints that
    /// touch a single agent never get auxiliary variables; in dense mode every
    /// other constraint is copied to every agent.
    pub fn agent_constraints(&self, agent: usize, structure: Structure) -> Vec<usize> {
        (0..self.constraint_count())
            .filter(|&m| match structure {
                Structure::Sparse => self.pattern.involves(agent, m),
                Structure::Dense => self.pattern.involves(agent, m) || !self.pattern.is_local(m),
            })
            .collect()
    }

    /// Neighbors exchanging `y^m` and `c^m` with agent `i`.
    pub fn exchange_neighbors(
        &self,
        agent: usize,
        constraint: usize,
        structure: Structure,
    ) -> Vec<usize> {
        if self.pattern.is_local(constraint) {
            return Vec::new();
        }
        match structure {
            Structure::Dense => self.graph.neighbors(agent).iter().copied().collect(),
            Structure::Sparse => {
                if self.pattern.involves(agent, constraint) {
                    self.pattern
                        .relevant_neighbors(&self.graph, agent, constraint)
                } else {
                    Vec::new()
                }
            }
        }
    }

    /// Number of auxiliary scalars that are actually allocated and exchanged.
    pub fn auxiliary_scalar_count(&self, structure: Structure) -> usize {
        (0..self.constraint_count())
            .filter(|&m| !self.pattern.is_local(m))
            .map(|m| match structure {
                Structure::Dense => self.agent_count(),
                Structure::Sparse => self.pattern.agents_of(m).len(),
            })
            .sum()
    }

    /// True where `y_i^m` is a live auxiliary variable; all other entries of
    /// `y` stay zero.
    pub fn auxiliary_mask(&self, structure: Structure) -> Vec<bool> {
        let n = self.agent_count();
        let mut mask = vec![false; n * self.constraint_count()];
        for m in 0..self.constraint_count() {
            if self.pattern.is_local(m) {
                continue;
            }
            for i in 0..n {
                mask[self.y_index(i, m)] = match structure {
                    Structure::Dense => true,
                    Structure::Sparse => self.pattern.involves(i, m),
                };
            }
        }
        mask
    }

    fn check_x(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.total_dim() {
            return Err(Error::Dimension {
                what: "stacked primal vector",
                expected: self.total_dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    fn check_y(&self, y: &DVector<f64>) -> Result<()> {
        let expected = self.agent_count() * self.constraint_count();
        if y.len() != expected {
            return Err(Error::Dimension {
                what: "auxiliary vector",
                expected,
                actual: y.len(),
            });
        }
        Ok(())
    }

    pub fn total_cost(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_x(x)?;
        Ok((0..self.agent_count())
            .map(|i| self.agents[i].cost.evaluate(&self.agent_slice(x, i)))
            .sum())
    }

    /// `sum_i a_i^m' x_i + b_i^m` for every constraint.
    pub fn coupling_residuals(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_x(x)?;
        let mut r = DVector::zeros(self.constraint_count());
        for (i, agent) in self.agents.iter().enumerate() {
            let xi = self.agent_slice(x, i);
            for m in 0..self.constraint_count() {
                r[m] += agent.contribution(m, &xi);
            }
        }
        Ok(r)
    }

    /// Residuals of the local constraints
    /// `a_i^m' x_i + b_i^m + sum_{j in nbrs} (y_i^m - y_j^m)` in constraint-major
    /// layout. Entries for constraints an agent does not hold are zero.
    pub fn local_residuals(
        &self,
        x: &DVector<f64>,
        y: &DVector<f64>,
        structure: Structure,
    ) -> Result<DVector<f64>> {
        self.check_x(x)?;
        self.check_y(y)?;
        let mut r = DVector::zeros(y.len());
        for i in 0..self.agent_count() {
            let xi = self.agent_slice(x, i);
            for m in self.agent_constraints(i, structure) {
                r[self.y_index(i, m)] =
                    self.agents[i].contribution(m, &xi) + self.allocation(y, i, m, structure);
            }
        }
        Ok(r)
    }

    /// `sum_{j in nbrs(i, m)} (y_i^m - y_j^m)`.
    pub fn allocation(
        &self,
        y: &DVector<f64>,
        agent: usize,
        constraint: usize,
        structure: Structure,
    ) -> f64 {
        let yi = y[self.y_index(agent, constraint)];
        self.exchange_neighbors(agent, constraint, structure)
            .into_iter()
            .map(|j| yi - y[self.y_index(j, constraint)])
            .sum()
    }

    /// The whole problem as one QP over the stacked `x`.
    pub fn stacked_qp(&self) -> QuadraticProgram {
        let n = self.total_dim();
        let m = self.constraint_count();
        let mut hessian = DMatrix::zeros(n, n);
        let mut linear = DVector::zeros(n);
        let mut rows = DMatrix::zeros(m, n);
        let mut offsets = DVector::zeros(m);
        for (i, agent) in self.agents.iter().enumerate() {
            let (s, d) = (self.starts[i], agent.dim());
            hessian
                .view_mut((s, s), (d, d))
                .copy_from(agent.cost.hessian());
            linear.rows_mut(s, d).copy_from(agent.cost.linear());
            rows.view_mut((0, s), (m, d))
                .copy_from(&agent.coupling.transpose());
            offsets += &agent.offsets;
        }
        QuadraticProgram {
            hessian,
            linear,
            rows,
            offsets,
        }
    }

    /// Solves the coupled problem directly as a single QP.
    pub fn centralized_solve(&self) -> Result<CentralizedSolution> {
        let qp = self.stacked_qp();
        let sol = qp.solve(None, &QpOptions::default())?;
        let kkt_residual = qp.kkt_residual(&sol.x, &sol.multipliers);
        let cost = self.total_cost(&sol.x)?;
        Ok(CentralizedSolution {
            x: sol.x,
            cost,
            multipliers: sol.multipliers,
            kkt_residual,
        })
    }

    /// Dense-mode allocation that makes a coupled-feasible `x` feasible for
    /// every local constraint.
    pub fn lift_feasible_point(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.lift_feasible_point_with(x, Structure::Dense)
    }

    /// For each shared constraint, splits the total `sum_i v_i^m` evenly over
    /// the agents holding it and returns the minimum-norm `y^m` with
    /// `L_m y^m = w^m - v^m`, where `L_m` is the full Laplacian (dense) or the
    /// Laplacian induced on `I_m` (sparse).
    pub fn lift_feasible_point_with(
        &self,
        x: &DVector<f64>,
        structure: Structure,
    ) -> Result<DVector<f64>> {
        let residuals = self.coupling_residuals(x)?;
        let n = self.agent_count();
        let scale = 1.0
            + x.amax()
            + self
                .agents
                .iter()
                .map(|a| a.offsets.amax())
                .fold(0.0, f64::max);
        for (m, &r) in residuals.iter().enumerate() {
            if r > 1e-12 * scale {
                return Err(Error::PointInfeasible {
                    constraint: m,
                    residual: r,
                });
            }
        }
        let parts: Vec<DVector<f64>> = (0..n).map(|i| self.agent_slice(x, i)).collect();
        let mut y = DVector::zeros(n * self.constraint_count());
        let mut full_pinv = None;
        for m in 0..self.constraint_count() {
            if self.pattern.is_local(m) {
                continue;
            }
            let holders: Vec<usize> = match structure {
                Structure::Dense => (0..n).collect(),
                Structure::Sparse => self.pattern.agents_of(m).iter().copied().collect(),
            };
            if !self.graph.induces_connected(&holders) {
                return Err(match structure {
                    Structure::Dense => Error::Disconnected,
                    Structure::Sparse => Error::InconsistentPattern {
                        constraint: m,
                        agents: holders,
                    },
                });
            }
            let v: Vec<f64> = holders
                .iter()
                .map(|&i| self.agents[i].contribution(m, &parts[i]))
                .collect();
            let share = v.iter().sum::<f64>() / holders.len() as f64;
            let mut rhs = DVector::zeros(n);
            for (&i, vi) in holders.iter().zip(&v) {
                rhs[i] = share - vi;
            }
            let ym = match structure {
                Structure::Dense => {
                    let pinv =
                        full_pinv.get_or_insert_with(|| laplacian_pinv(&self.graph.laplacian()));
                    &*pinv * rhs
                }
                Structure::Sparse => {
                    laplacian_pinv(&self.graph.induced_subgraph_laplacian(&holders)) * rhs
                }
            };
            for i in 0..n {
                y[self.y_index(i, m)] = ym[i];
            }
        }
        Ok(y)
    }

    /// Sufficient Slater test: the columns an agent uses in its local program
    /// are linearly independent.
    pub fn slater_rank_flags(&self, structure: Structure) -> Vec<bool> {
        (0..self.agent_count())
            .map(|i| {
                let cols = self.agent_constraints(i, structure);
                let a = self.agents[i].coupling.select_columns(&cols);
                numerical_rank(&a, 1e-10) == cols.len()
            })
            .collect()
    }
}

/// Rank from a column-pivoted QR, with diagonal entries below
/// `rel_tol` times the leading one treated as zero.
pub fn numerical_rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    crate::linalg::numerical_rank(a, rel_tol)
}

fn laplacian_pinv(lap: &DMatrix<f64>) -> DMatrix<f64> {
    let n = lap.nrows();
    let (eigenvalues, eigenvectors) = symmetric_eigen(lap);
    let tol = 1e-10 * eigenvalues.amax().max(1.0);
    let mut pinv = DMatrix::zeros(n, n);
    for (k, &lam) in eigenvalues.iter().enumerate() {
        if lam > tol {
            let v = eigenvectors.column(k);
            pinv += (v * v.transpose()) / lam;
        }
    }
    pinv
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_agent(q: f64, a: &[f64], b: &[f64]) -> AgentSpec {
        let cost =
            QuadraticCost::new(DMatrix::from_element(1, 1, q), DVector::zeros(1), 0.0).unwrap();
        AgentSpec::new(
            cost,
            DMatrix::from_row_slice(1, a.len(), a),
            DVector::from_row_slice(b),
        )
        .unwrap()
    }

    #[test]
    fn residuals_of_zero_problem_vanish() {
        let g = Graph::path(2).unwrap();
        let p = CoupledProblem::new(
            vec![
                scalar_agent(1.0, &[0.0], &[0.0]),
                scalar_agent(1.0, &[0.0], &[0.0]),
            ],
            g,
        )
        .unwrap();
        assert_eq!(
            p.coupling_residuals(&DVector::zeros(2)).unwrap(),
            DVector::zeros(1)
        );
    }

    #[test]
    fn residuals_arithmetic() {
        let g = Graph::path(2).unwrap();
        let p = CoupledProblem::new(
            vec![
                scalar_agent(1.0, &[1.0], &[-1.0]),
                scalar_agent(1.0, &[1.0], &[-1.0]),
            ],
            g,
        )
        .unwrap();
        let r = p
            .coupling_residuals(&DVector::from_row_slice(&[0.5, 0.5]))
            .unwrap();
        assert_eq!(r[0], -1.0);
        assert!(p.coupling_residuals(&DVector::zeros(3)).is_err());
    }

    #[test]
    fn centralized_single_agent_projection() {
        let p = CoupledProblem::new(
            vec![scalar_agent(1.0, &[-1.0], &[1.0])],
            Graph::new(1, &[]).unwrap(),
        )
        .unwrap();
        let sol = p.centralized_solve().unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-12);
        assert!((sol.cost - 0.5).abs() < 1e-12);
        assert!(sol.kkt_residual <= 1e-8);
    }

    #[test]
    fn centralized_two_agents() {
        let g = Graph::path(2).unwrap();
        let p = CoupledProblem::new(
            vec![
                scalar_agent(1.0, &[-1.0], &[1.0]),
                scalar_agent(1.0, &[-1.0], &[1.0]),
            ],
            g,
        )
        .unwrap();
        let sol = p.centralized_solve().unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-12 && (sol.x[1] - 1.0).abs() < 1e-12);
        assert!((sol.cost - 1.0).abs() < 1e-12);
        assert!((sol.multipliers[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn centralized_reports_infeasible() {
        // x <= -1 and -x <= -1 on one agent
        let p = CoupledProblem::new(
            vec![scalar_agent(1.0, &[1.0, -1.0], &[1.0, 1.0])],
            Graph::new(1, &[]).unwrap(),
        )
        .unwrap();
        assert!(matches!(
            p.centralized_solve(),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn lift_two_node_path() {
        // v = (1, -3): w = (-1, -1), L y = (-2, 2), min-norm y = (-1, 1)
        let g = Graph::path(2).unwrap();
        let p = CoupledProblem::new(
            vec![
                scalar_agent(1.0, &[1.0], &[0.0]),
                scalar_agent(1.0, &[1.0], &[0.0]),
            ],
            g,
        )
        .unwrap();
        let x = DVector::from_row_slice(&[1.0, -3.0]);
        let y = p.lift_feasible_point(&x).unwrap();
        assert!((y[0] + 1.0).abs() < 1e-12 && (y[1] - 1.0).abs() < 1e-12);
        let local = p.local_residuals(&x, &y, Structure::Dense).unwrap();
        assert!((local[0] + 1.0).abs() < 1e-12 && (local[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn lift_equal_split_is_zero() {
        let g = Graph::path(3).unwrap();
        let agents = (0..3).map(|_| scalar_agent(1.0, &[1.0], &[-1.0])).collect();
        let p = CoupledProblem::new(agents, g).unwrap();
        let y = p
            .lift_feasible_point(&DVector::from_element(3, 0.25))
            .unwrap();
        assert!(y.amax() < 1e-14);
    }

    #[test]
    fn lift_rejects_infeasible_and_disconnected() {
        let g = Graph::path(2).unwrap();
        let p = CoupledProblem::new(
            vec![
                scalar_agent(1.0, &[1.0], &[0.0]),
                scalar_agent(1.0, &[1.0], &[0.0]),
            ],
            g,
        )
        .unwrap();
        assert!(matches!(
            p.lift_feasible_point(&DVector::from_row_slice(&[1.0, 1.0])),
            Err(Error::PointInfeasible { .. })
        ));
        let g = Graph::new(2, &[]).unwrap();
        let p = CoupledProblem::new(
            vec![
                scalar_agent(1.0, &[1.0], &[0.0]),
                scalar_agent(1.0, &[1.0], &[0.0]),
            ],
            g,
        )
        .unwrap();
        assert!(matches!(
            p.lift_feasible_point(&DVector::from_row_slice(&[1.0, -3.0])),
            Err(Error::Disconnected)
        ));
    }

    #[test]
    fn rank_flags() {
        let cost = QuadraticCost::new(DMatrix::identity(2, 2), DVector::zeros(2), 0.0).unwrap();
        let full =
            AgentSpec::new(cost.clone(), DMatrix::identity(2, 2), DVector::zeros(2)).unwrap();
        let g = Graph::new(1, &[]).unwrap();
        let p = CoupledProblem::with_pattern(vec![full], g.clone(), SparsityPattern::dense(1, 2))
            .unwrap();
        assert_eq!(p.slater_rank_flags(Structure::Dense), vec![true]);

        // constraint 2 is shared by agents 2 and 3 only
        let a1 = AgentSpec::new(
            cost.clone(),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
            DVector::zeros(2),
        )
        .unwrap();
        let a2 = AgentSpec::new(cost, DMatrix::identity(2, 2), DVector::zeros(2)).unwrap();
        let p = CoupledProblem::new(vec![a1, a2.clone(), a2], Graph::path(3).unwrap()).unwrap();
        assert_eq!(
            p.slater_rank_flags(Structure::Dense),
            vec![false, true, true]
        );
        assert_eq!(
            p.slater_rank_flags(Structure::Sparse),
            vec![true, true, true]
        );
    }

    #[test]
    fn pattern_derived_from_zero_columns() {
        let g = Graph::path(2).unwrap();
        let p = CoupledProblem::new(
            vec![
                scalar_agent(1.0, &[1.0, 1.0], &[0.0, 0.0]),
                scalar_agent(1.0, &[1.0, 0.0], &[0.0, 0.0]),
            ],
            g.clone(),
        )
        .unwrap();
        assert_eq!(p.pattern().agents_of(1), &BTreeSet::from([0]));
        assert_eq!(p.auxiliary_scalar_count(Structure::Dense), 2);
        assert_eq!(p.auxiliary_scalar_count(Structure::Sparse), 2);
        assert_eq!(p.agent_constraints(1, Structure::Dense), vec![0]);
        assert!(CoupledProblem::with_pattern(
            vec![
                scalar_agent(1.0, &[1.0], &[0.0]),
                scalar_agent(1.0, &[1.0], &[0.0])
            ],
            g,
            SparsityPattern::from_constraint_sets(2, vec![BTreeSet::from([0])]).unwrap(),
        )
        .is_err());
    }

    #[test]
    fn rejects_indefinite_cost() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(QuadraticCost::new(h, DVector::zeros(2), 0.0).is_err());
    }
}
