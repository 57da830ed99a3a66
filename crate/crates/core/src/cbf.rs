//! Safe formation control of single-integrator agents under affine,
//! time-varying control barrier functions.
//!
//! Each barrier `h(t, p) = alpha + beta t + sum_i gamma_i' p_i` turns into the
//! input constraint `sum_i a_i' x_i + b_i <= 0` with `a_i = -gamma_i` and
//! `sum_i b_i = -k h - beta`, whose satisfaction keeps `dh/dt >= -k h`. The
//! resulting QP, `min sum_i 1/2 |x_i - x_nom,i|^2` under those rows, is solved
//! centrally, by the auxiliary-variable flow, or naively with `y = 0`.

use nalgebra::{DMatrix, DVector, Vector2};

use crate::error::{Error, Result};
use crate::flows::{solve_round, FlowParams, Round, Variant};
use crate::localqp::LocalSolution;
use crate::network::Graph;
use crate::problem::{AgentSpec, CoupledProblem, QuadraticCost};

pub type Point = Vector2<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct AffineBarrier {
    pub offset: f64,
    pub time_slope: f64,
    pub state_weights: Vec<Point>,
    pub class_k_gain: f64,
}

/// How the constant `-k h - beta` is divided among the agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BudgetSplit {
    /// `b_i = -k gamma_i' p_i - (k (alpha + beta t) + beta) / N`: each agent
    /// carries its own state term plus an equal share of the constants.
    #[default]
    Local,
    /// `b_i = (-k h - beta) / N`.
    Even,
}

/// Input-constraint row of one barrier at a given state.
#[derive(Debug, Clone, PartialEq)]
pub struct CbfRow {
    pub a: Vec<Point>,
    pub b: Vec<f64>,
}

impl AffineBarrier {
    pub fn new(
        offset: f64,
        time_slope: f64,
        state_weights: Vec<Point>,
        class_k_gain: f64,
    ) -> Result<Self> {
        if state_weights.iter().all(|w| w.x == 0.0 && w.y == 0.0) {
            return Err(Error::InvalidProblem(
                "barrier needs at least one nonzero state weight".into(),
            ));
        }
        if !(class_k_gain > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "class-K gain must be positive, got {class_k_gain}"
            )));
        }
        Ok(Self {
            offset,
            time_slope,
            state_weights,
            class_k_gain,
        })
    }

    pub fn agent_count(&self) -> usize {
        self.state_weights.len()
    }

    pub fn value(&self, time: f64, positions: &[Point]) -> f64 {
        self.offset
            + self.time_slope * time
            + self
                .state_weights
                .iter()
                .zip(positions)
                .map(|(w, p)| w.dot(p))
                .sum::<f64>()
    }

    pub fn row(&self, time: f64, positions: &[Point], split: BudgetSplit) -> CbfRow {
        let n = self.agent_count() as f64;
        let k = self.class_k_gain;
        let a = self.state_weights.iter().map(|w| -w).collect();
        let b = match split {
            BudgetSplit::Local => {
                let shared = (k * (self.offset + self.time_slope * time) + self.time_slope) / n;
                self.state_weights
                    .iter()
                    .zip(positions)
                    .map(|(w, p)| -k * w.dot(p) - shared)
                    .collect()
            }
            BudgetSplit::Even => {
                let share = (-k * self.value(time, positions) - self.time_slope) / n;
                vec![share; self.agent_count()]
            }
        };
        CbfRow { a, b }
    }
}

/// Targets `p_i,d`; agent `i` only uses `p_i,d - p_j,d` for its neighbors,
/// plus its own target if it is the leader.
#[derive(Debug, Clone, PartialEq)]
pub struct FormationSpec {
    pub targets: Vec<Point>,
    pub leader: Option<usize>,
}

impl FormationSpec {
    /// `p_ij,d = p_i,d - p_j,d`.
    pub fn desired_relative(&self, i: usize, j: usize) -> Point {
        self.targets[i] - self.targets[j]
    }
}

/// `x_nom,i = sum_{j in N_i} (p_ij,d - p_ij) + delta_i (p_i,d - p_i)`.
pub fn nominal_controller(
    positions: &[Point],
    formation: &FormationSpec,
    graph: &Graph,
) -> Vec<Point> {
    (0..positions.len())
        .map(|i| {
            let mut u: Point = graph
                .neighbors(i)
                .iter()
                .map(|&j| formation.desired_relative(i, j) - (positions[i] - positions[j]))
                .sum();
            if formation.leader == Some(i) {
                u += formation.targets[i] - positions[i];
            }
            u
        })
        .collect()
}

/// `sum_i 1/2 |x_i - x_nom,i|^2`.
pub fn pointwise_cost(x: &[Point], x_nom: &[Point]) -> f64 {
    x.iter()
        .zip(x_nom)
        .map(|(a, b)| 0.5 * (a - b).norm_squared())
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ControllerMode {
    Nominal,
    Centralized,
    Distributed,
    Naive,
}

impl ControllerMode {
    pub const ALL: [ControllerMode; 4] = [
        ControllerMode::Nominal,
        ControllerMode::Centralized,
        ControllerMode::Distributed,
        ControllerMode::Naive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ControllerMode::Nominal => "nominal",
            ControllerMode::Centralized => "centralized",
            ControllerMode::Distributed => "distributed",
            ControllerMode::Naive => "naive",
        }
    }
}

impl std::str::FromStr for ControllerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown controller mode `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CbfScenario {
    pub graph: Graph,
    pub formation: FormationSpec,
    pub barriers: Vec<AffineBarrier>,
    pub initial: Vec<Point>,
    pub mode: ControllerMode,
    /// `dt`, `horizon`, `gain`, `variant` and `saturation` drive the
    /// closed loop; the distributed mode applies one flow step per Euler step.
    pub flow: FlowParams,
    pub split: BudgetSplit,
}

impl CbfScenario {
    pub fn agent_count(&self) -> usize {
        self.graph.node_count()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.agent_count();
        let check = |what, len| {
            if len == n {
                Ok(())
            } else {
                Err(Error::Dimension {
                    what,
                    expected: n,
                    actual: len,
                })
            }
        };
        check("initial positions", self.initial.len())?;
        check("formation targets", self.formation.targets.len())?;
        for b in &self.barriers {
            check("barrier state weights", b.agent_count())?;
        }
        if let Some(leader) = self.formation.leader {
            if leader >= n {
                return Err(Error::InvalidProblem(format!(
                    "leader {} out of range",
                    leader + 1
                )));
            }
        }
        if self.barriers.is_empty() {
            return Err(Error::InvalidProblem(
                "scenario needs at least one barrier".into(),
            ));
        }
        self.flow.validate()
    }

    /// Barrier values at `(time, positions)`.
    pub fn barrier_values(&self, time: f64, positions: &[Point]) -> Vec<f64> {
        self.barriers
            .iter()
            .map(|b| b.value(time, positions))
            .collect()
    }

    /// The frozen-time safety-filter QP as a coupled problem, plus the
    /// nominal inputs it tracks.
    pub fn frozen_problem(
        &self,
        time: f64,
        positions: &[Point],
    ) -> Result<(CoupledProblem, Vec<Point>)> {
        let nominal = nominal_controller(positions, &self.formation, &self.graph);
        let rows: Vec<CbfRow> = self
            .barriers
            .iter()
            .map(|b| b.row(time, positions, self.split))
            .collect();
        let m = rows.len();
        let agents = (0..self.agent_count())
            .map(|i| {
                let target = DVector::from_column_slice(nominal[i].as_slice());
                let mut coupling = DMatrix::zeros(2, m);
                let mut offsets = DVector::zeros(m);
                for (k, row) in rows.iter().enumerate() {
                    coupling.set_column(k, &row.a[i]);
                    offsets[k] = row.b[i];
                }
                AgentSpec::new(QuadraticCost::tracking(&target), coupling, offsets)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((CoupledProblem::new(agents, self.graph.clone())?, nominal))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopRecord {
    pub step: usize,
    pub time: f64,
    pub positions: Vec<Point>,
    pub nominal: Vec<Point>,
    pub commands: Vec<Point>,
    /// `h^m(t, p)` for each barrier.
    pub barrier_values: Vec<f64>,
    /// `sum_i a_i^m' x_i + b_i^m` of the applied commands.
    pub condition_residuals: Vec<f64>,
    pub pointwise_cost: f64,
    /// Optimal value of the frozen-time centralized QP.
    pub frozen_optimal_cost: f64,
    /// Value of the local programs with `y = 0` at this state.
    pub frozen_naive_cost: f64,
    /// Consensus error of the distributed round (zero for the other modes).
    pub consensus: f64,
    pub y: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopTrace {
    pub mode: ControllerMode,
    pub records: Vec<ClosedLoopRecord>,
}

impl ClosedLoopTrace {
    /// Minimum over time of each barrier value.
    pub fn safety_minima(&self) -> Vec<f64> {
        let m = self.records.first().map_or(0, |r| r.barrier_values.len());
        (0..m)
            .map(|k| {
                self.records
                    .iter()
                    .map(|r| r.barrier_values[k])
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    /// Left Riemann sum of the pointwise cost.
    pub fn integrated_cost(&self, dt: f64) -> f64 {
        self.records.iter().map(|r| r.pointwise_cost).sum::<f64>() * dt
    }

    /// Left Riemann sum of the frozen naive cost.
    pub fn integrated_naive_cost(&self, dt: f64) -> f64 {
        self.records
            .iter()
            .map(|r| r.frozen_naive_cost)
            .sum::<f64>()
            * dt
    }
}

fn points_from(x: &DVector<f64>) -> Vec<Point> {
    x.as_slice()
        .chunks(2)
        .map(|c| Point::new(c[0], c[1]))
        .collect()
}

/// Forward-Euler co-simulation of the agents and the chosen controller.
/// Records the state at every step `0..=steps` together with the command
/// applied from it.
pub fn simulate(scenario: &CbfScenario) -> Result<ClosedLoopTrace> {
    scenario.validate()?;
    let params = &scenario.flow;
    let n = scenario.agent_count();
    let m = scenario.barriers.len();
    let structure = params.variant.structure();
    let mut positions = scenario.initial.clone();
    let mut y = DVector::zeros(n * m);
    let zero_y = DVector::zeros(n * m);
    let mut warm: Option<Vec<LocalSolution>> = None;
    let mut naive_warm: Option<Vec<LocalSolution>> = None;
    let mut records = Vec::with_capacity(params.steps() + 1);

    for k in 0..=params.steps() {
        let time = k as f64 * params.dt;
        let fail = |e: Error| Error::StepFailed {
            time,
            source: Box::new(e),
        };
        let (problem, nominal) = scenario.frozen_problem(time, &positions).map_err(fail)?;
        let central = problem.centralized_solve().map_err(fail)?;
        let naive: Round =
            solve_round(&problem, structure, &zero_y, naive_warm.as_deref()).map_err(fail)?;

        let (commands, consensus, distributed_round) = match scenario.mode {
            ControllerMode::Nominal => (nominal.clone(), 0.0, None),
            ControllerMode::Centralized => (points_from(&central.x), 0.0, None),
            ControllerMode::Naive => (points_from(&naive.primal), 0.0, None),
            ControllerMode::Distributed => {
                let round = solve_round(&problem, structure, &y, warm.as_deref()).map_err(fail)?;
                let commands = points_from(&round.primal);
                let consensus = round.consensus_error();
                (commands, consensus, Some(round))
            }
        };

        let stacked = DVector::from_iterator(2 * n, commands.iter().flat_map(|c| [c.x, c.y]));
        let condition_residuals = problem
            .coupling_residuals(&stacked)?
            .iter()
            .copied()
            .collect();
        records.push(ClosedLoopRecord {
            step: k,
            time,
            barrier_values: scenario.barrier_values(time, &positions),
            condition_residuals,
            pointwise_cost: pointwise_cost(&commands, &nominal),
            frozen_optimal_cost: central.cost,
            frozen_naive_cost: naive.phi,
            consensus,
            y: y.clone(),
            positions: positions.clone(),
            nominal,
            commands: commands.clone(),
        });

        naive_warm = Some(naive.solutions);
        if let Some(round) = distributed_round {
            let scale = params.dt * params.gain;
            y = match params.variant {
                Variant::Sign => &y - round.subgradient.map(|v| params.saturation.apply(v)) * scale,
                Variant::Dense | Variant::Sparse => &y - &round.subgradient * scale,
            };
            warm = Some(round.solutions);
        }
        for (p, u) in positions.iter_mut().zip(&commands) {
            *p += params.dt * u;
        }
    }
    Ok(ClosedLoopTrace {
        mode: scenario.mode,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(n: usize, w: Point) -> Vec<Point> {
        vec![w; n]
    }

    #[test]
    fn row_of_first_barrier() {
        let b = AffineBarrier::new(30.0, 1.0, uniform(9, Point::new(-0.1, -0.1)), 1.0).unwrap();
        let p: Vec<Point> = (0..9)
            .map(|i| Point::new(i as f64, 2.0 * i as f64))
            .collect();
        let t = 2.5;
        let h = b.value(t, &p);
        for split in [BudgetSplit::Local, BudgetSplit::Even] {
            let row = b.row(t, &p, split);
            assert!(row.a.iter().all(|a| *a == Point::new(0.1, 0.1)));
            let total: f64 = row.b.iter().sum();
            assert!((total - (-h - 1.0)).abs() < 1e-12);
        }
        let local = b.row(t, &p, BudgetSplit::Local);
        for (i, bi) in local.b.iter().enumerate() {
            let expected = 0.1 * (p[i].x + p[i].y) - (31.0 + t) / 9.0;
            assert!((bi - expected).abs() < 1e-13);
        }
    }

    #[test]
    fn row_of_second_barrier() {
        let b = AffineBarrier::new(10.0, 1.0, uniform(9, Point::new(-0.1, 0.1)), 1.0).unwrap();
        let row = b.row(0.0, &uniform(9, Point::zeros()), BudgetSplit::Local);
        assert!(row.a.iter().all(|a| *a == Point::new(0.1, -0.1)));
        assert!(row.b.iter().all(|&v| (v + 11.0 / 9.0).abs() < 1e-15));
    }

    #[test]
    fn barrier_needs_nonzero_weight() {
        assert!(AffineBarrier::new(1.0, 0.0, uniform(2, Point::zeros()), 1.0).is_err());
        assert!(AffineBarrier::new(1.0, 0.0, uniform(2, Point::new(1.0, 0.0)), 0.0).is_err());
    }

    #[test]
    fn nominal_two_agents() {
        let g = Graph::path(2).unwrap();
        let f = FormationSpec {
            targets: vec![Point::new(0.0, 0.0), Point::new(2.0, 0.0)],
            leader: None,
        };
        // too close: the pair spreads apart
        let u = nominal_controller(&[Point::new(0.0, 0.0), Point::new(1.0, 0.0)], &f, &g);
        assert_eq!(u, vec![Point::new(-1.0, 0.0), Point::new(1.0, 0.0)]);
    }

    #[test]
    fn nominal_zero_at_target() {
        let g = Graph::path(3).unwrap();
        let targets = vec![
            Point::new(1.0, 2.0),
            Point::new(-1.0, 0.5),
            Point::new(3.0, 3.0),
        ];
        let f = FormationSpec {
            targets: targets.clone(),
            leader: Some(1),
        };
        assert!(nominal_controller(&targets, &f, &g)
            .iter()
            .all(|u| u.norm() == 0.0));
    }

    #[test]
    fn pointwise_cost_values() {
        let x = [Point::new(3.0, 4.0)];
        assert_eq!(pointwise_cost(&x, &[Point::zeros()]), 12.5);
        assert_eq!(pointwise_cost(&x, &x), 0.0);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!(
            "naive".parse::<ControllerMode>().unwrap(),
            ControllerMode::Naive
        );
        assert!("other".parse::<ControllerMode>().is_err());
    }
}
