//! Built-in problem instances: a nine-agent resource allocation problem and
//! a nine-agent formation transition under two coupled barriers.

use nalgebra::{DMatrix, DVector};

use crate::cbf::{AffineBarrier, BudgetSplit, CbfScenario, ControllerMode, FormationSpec, Point};
use crate::error::Result;
use crate::flows::{FlowParams, Variant};
use crate::network::Graph;
use crate::problem::{AgentSpec, CoupledProblem, QuadraticCost};

pub const NINE: usize = 9;

/// Ring 1-2-...-9-1 with chords (1,5) and (3,7), 0-based.
pub fn default_graph() -> Graph {
    let mut edges: Vec<(usize, usize)> = (0..NINE).map(|i| (i, (i + 1) % NINE)).collect();
    edges.extend([(0, 4), (2, 6)]);
    Graph::new(NINE, &edges).expect("static edge list")
}

/// `ceil(10 sin(i j) + 20)` for 1-based `i`, `j`.
pub fn resource_coefficient(i: usize, j: usize) -> f64 {
    (10.0 * ((i * j) as f64).sin() + 20.0).ceil()
}

/// Demand-minus-supply rows: product demands `x_1..x_3` consume resources
/// supplied by `x_4..x_6`.
#[rustfmt::skip]
const BALANCE: [f64; 18] = [
    0.0, 2.0, 1.0, -1.0,  0.0,  0.0,
    2.0, 0.0, 1.0,  0.0, -1.0,  0.0,
    1.0, 1.0, 0.0,  0.0,  0.0, -1.0,
];

/// Nine agents with six variables each. Constraints 1-3 couple all agents
/// (total supply covers total demand); constraint `4 + 3(i-1) + k` is agent
/// `i`'s own lower bound `x_{i,k+1} >= h_{i,k+1}`.
pub fn resource_allocation(graph: Graph) -> Result<CoupledProblem> {
    let balance = DMatrix::from_row_slice(3, 6, &BALANCE);
    let hessian = 2.0 * balance.transpose() * &balance;
    let m = 3 + 3 * NINE;
    let agents = (0..NINE)
        .map(|i| {
            let h = |j: usize| resource_coefficient(i + 1, j);
            let linear =
                DVector::from_iterator(6, (1..=6).map(|j| if j >= 4 { h(j) } else { 0.0 }));
            let cost = QuadraticCost::new(hessian.clone(), linear, 0.0)?;
            let mut rows = DMatrix::zeros(m, 6);
            let mut offsets = DVector::zeros(m);
            rows.view_mut((0, 0), (3, 6)).copy_from(&balance);
            for k in 0..3 {
                let row = 3 + 3 * i + k;
                rows[(row, k)] = -1.0;
                offsets[row] = h(k + 1);
            }
            AgentSpec::from_rows(cost, rows, offsets)
        })
        .collect::<Result<Vec<_>>>()?;
    CoupledProblem::new(agents, graph)
}

#[rustfmt::skip]
pub const FORMATION_INITIAL: [f64; 18] = [4.0, 6.0, 2.0, 8.0, 0.0, 10.0, -2.0, 8.0, -4.0, 6.0, 2.0, 12.0, -2.0, 12.0, 4.0, 14.0, -4.0, 14.0];
#[rustfmt::skip]
pub const FORMATION_TARGET: [f64; 18] = [60.0, 16.0, 60.0, 13.0, 60.0, 10.0, 60.0, 7.0, 60.0, 4.0, 63.0, 13.0, 63.0, 7.0, 66.0, 16.0, 66.0, 4.0];
/// Agent 3, 0-based.
pub const FORMATION_LEADER: usize = 2;
pub const FORMATION_HORIZON: f64 = 60.0;

pub fn points(flat: &[f64]) -> Vec<Point> {
    flat.chunks(2).map(|c| Point::new(c[0], c[1])).collect()
}

/// The two barriers `30 + t - 0.1 sum(p_1 + p_2)` and `10 + t - 0.1 sum(p_1 - p_2)`.
pub fn formation_barriers() -> Vec<AffineBarrier> {
    vec![
        AffineBarrier::new(30.0, 1.0, vec![Point::new(-0.1, -0.1); NINE], 1.0)
            .expect("nonzero weights"),
        AffineBarrier::new(10.0, 1.0, vec![Point::new(-0.1, 0.1); NINE], 1.0)
            .expect("nonzero weights"),
    ]
}

pub fn formation(graph: Graph, mode: ControllerMode) -> CbfScenario {
    CbfScenario {
        graph,
        formation: FormationSpec {
            targets: points(&FORMATION_TARGET),
            leader: Some(FORMATION_LEADER),
        },
        barriers: formation_barriers(),
        initial: points(&FORMATION_INITIAL),
        mode,
        flow: FlowParams {
            horizon: FORMATION_HORIZON,
            variant: Variant::Sign,
            ..FlowParams::default()
        },
        split: BudgetSplit::Local,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coefficient_closed_form() {
        assert_eq!(resource_coefficient(1, 1), 29.0);
        assert_eq!(resource_coefficient(2, 3), 18.0);
    }

    #[test]
    fn default_graph_shape() {
        let g = default_graph();
        assert!(g.is_connected());
        assert_eq!(g.edges().len(), 11);
        assert!(g.has_edge(0, 8) && g.has_edge(0, 4) && g.has_edge(2, 6));
    }

    #[test]
    fn resource_problem_shape() {
        let p = resource_allocation(default_graph()).unwrap();
        assert_eq!(p.constraint_count(), 30);
        assert_eq!(p.total_dim(), 54);
        for m in 0..3 {
            assert_eq!(p.pattern().agents_of(m).len(), 9);
        }
        for m in 3..30 {
            assert!(p.pattern().is_local(m));
        }
        let rows = p
            .agent(0)
            .coupling()
            .select_columns(&p.agent_constraints(0, crate::problem::Structure::Sparse))
            .transpose();
        #[rustfmt::skip]
        let printed = DMatrix::from_row_slice(6, 6, &[
             0.0,  2.0,  1.0, -1.0,  0.0,  0.0,
             2.0,  0.0,  1.0,  0.0, -1.0,  0.0,
             1.0,  1.0,  0.0,  0.0,  0.0, -1.0,
            -1.0,  0.0,  0.0,  0.0,  0.0,  0.0,
             0.0, -1.0,  0.0,  0.0,  0.0,  0.0,
             0.0,  0.0, -1.0,  0.0,  0.0,  0.0,
        ]);
        assert_eq!(rows, printed);
    }
}
