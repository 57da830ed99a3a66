mod common;

use ccflow::flows::{initial_state, run_flow, step, FlowParams, Variant};
use ccflow::{CoupledProblem, Permutation, Structure};
use common::{Instance, Shape};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn random_problem(rng: &mut ChaCha8Rng, sparse: bool) -> CoupledProblem {
    let shape = Shape {
        agents: rng.random_range(2..=5),
        constraints: rng.random_range(1..=3),
        extra_dims: 1,
        sparse,
    };
    let Instance { problem, .. } = common::instance(rng, shape);
    problem
}

fn params(variant: Variant, horizon: f64) -> FlowParams {
    FlowParams {
        variant,
        horizon,
        ..FlowParams::default()
    }
}

#[test]
fn sparse_and_dense_traces_coincide_on_dense_patterns() {
    let mut rng = common::rng(31);
    for _ in 0..10 {
        let problem = random_problem(&mut rng, false);
        let dense = run_flow(&problem, &params(Variant::Dense, 1.0), None).unwrap();
        let sparse = run_flow(&problem, &params(Variant::Sparse, 1.0), None).unwrap();
        assert_eq!(dense.records, sparse.records);
        assert_eq!(dense.auxiliary_scalars, sparse.auxiliary_scalars);
    }
}

#[test]
fn traces_never_violate_coupling_constraints() {
    let mut rng = common::rng(32);
    for trial in 0..24 {
        let sparse = trial % 2 == 1;
        let problem = random_problem(&mut rng, sparse);
        let cost = problem.centralized_solve().unwrap().cost;
        let variants: &[Variant] = if sparse {
            &[Variant::Sparse]
        } else {
            &[Variant::Dense, Variant::Sparse, Variant::Sign]
        };
        for &variant in variants {
            let trace = run_flow(&problem, &params(variant, 2.0), None).unwrap();
            assert!(
                trace.max_violation() <= 1e-6,
                "{variant:?}: {}",
                trace.max_violation()
            );
            // every locally feasible stack is globally feasible, so phi bounds the optimum
            assert!(trace
                .records
                .iter()
                .all(|r| r.phi >= cost - 1e-8 * (1.0 + cost.abs())));
        }
    }
}

#[test]
fn dense_flow_descends() {
    let mut rng = common::rng(33);
    for _ in 0..12 {
        let problem = random_problem(&mut rng, false);
        let trace = run_flow(&problem, &params(Variant::Dense, 3.0), None).unwrap();
        for w in trace.records.windows(2) {
            assert!(
                w[1].phi <= w[0].phi + 1e-6,
                "phi rose by {}",
                w[1].phi - w[0].phi
            );
        }
    }
}

#[test]
fn auxiliary_sums_are_conserved() {
    let mut rng = common::rng(34);
    for trial in 0..12 {
        let sparse = trial % 2 == 1;
        let problem = random_problem(&mut rng, sparse);
        let variant = if sparse {
            Variant::Sparse
        } else {
            Variant::Dense
        };
        let y0 = common::random_vector(
            &mut rng,
            problem.agent_count() * problem.constraint_count(),
            1.0,
        );
        let trace = run_flow(&problem, &params(variant, 1.0), Some(&y0)).unwrap();
        let sums = |y: &nalgebra::DVector<f64>| -> Vec<f64> {
            (0..problem.constraint_count())
                .map(|m| {
                    (0..problem.agent_count())
                        .map(|i| y[problem.y_index(i, m)])
                        .sum()
                })
                .collect()
        };
        let start = sums(&trace.records[0].y);
        for r in &trace.records {
            for (a, b) in sums(&r.y).iter().zip(&start) {
                assert!((a - b).abs() <= 1e-9);
            }
        }
    }
}

#[test]
fn multiplier_stacks_agree_under_the_permutation() {
    let mut rng = common::rng(35);
    for trial in 0..6 {
        let problem = random_problem(&mut rng, trial % 2 == 1);
        let n = problem.agent_count();
        let m = problem.constraint_count();
        let p = params(
            if trial % 2 == 1 {
                Variant::Sparse
            } else {
                Variant::Dense
            },
            0.5,
        );
        let perm = Permutation::agents_to_constraints(n, m);
        let mut state = initial_state(&problem, p.variant, None).unwrap();
        for _ in 0..p.steps() {
            let agent_major = state.c_agent_major(&problem);
            for i in 0..n {
                for k in 0..m {
                    assert_eq!(
                        agent_major[i * m + k],
                        state.round.solutions[i].multipliers[k]
                    );
                }
            }
            assert_eq!(perm.apply(&agent_major), *state.c());
            state = step(&problem, &p, &state).unwrap();
        }
    }
}

#[test]
fn static_example_allocates_twenty_seven_scalars() {
    let problem =
        ccflow::scenarios::resource_allocation(ccflow::scenarios::default_graph()).unwrap();
    let mut p = params(Variant::Sparse, 0.05);
    let trace = run_flow(&problem, &p, None).unwrap();
    assert_eq!(trace.auxiliary_scalars, 27);
    p.variant = Variant::Dense;
    assert_eq!(run_flow(&problem, &p, None).unwrap().auxiliary_scalars, 27);
    assert_eq!(problem.auxiliary_scalar_count(Structure::Sparse), 27);
}
