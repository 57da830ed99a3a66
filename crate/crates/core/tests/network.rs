mod common;

use ccflow::network::{check_consistency, Permutation};
use ccflow::Graph;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn graph_strategy() -> impl Strategy<Value = Graph> {
    (1usize..=8, any::<u64>()).prop_map(|(n, seed)| {
        let mut rng = common::rng(seed);
        common::connected_graph(&mut rng, n, 0.35)
    })
}

proptest! {
    #[test]
    fn laplacian_is_symmetric_with_zero_row_sums(g in graph_strategy()) {
        let l = g.laplacian();
        let n = g.node_count();
        prop_assert_eq!(&l, &l.transpose());
        let ones = DVector::from_element(n, 1.0);
        prop_assert!((ones.transpose() * &l).amax() <= 1e-10);
        let eig = l.clone().symmetric_eigen();
        let (k, min) = eig.eigenvalues.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        prop_assert!(min.abs() <= 1e-10);
        // connected: the kernel is spanned by the ones vector
        let v = eig.eigenvectors.column(k);
        prop_assert!((v.abs() - DVector::from_element(n, 1.0 / (n as f64).sqrt())).amax() <= 1e-8);
    }

    #[test]
    fn laplacian_norm_bounded_by_twice_max_degree(g in graph_strategy()) {
        let dmax = (0..g.node_count()).map(|i| g.degree(i)).max().unwrap() as f64;
        prop_assert!(g.laplacian_norm() <= 2.0 * dmax + 1e-10);
        prop_assert!(g.node_count() == 1 || g.laplacian_norm() >= dmax - 1e-10);
    }

    #[test]
    fn consistent_constraints_have_connected_induced_laplacian(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let g = common::connected_graph(&mut rng, 6, 0.2);
        let sets: Vec<_> = (0..4)
            .map(|_| {
                let size = rand::Rng::random_range(&mut rng, 1..=6);
                (0..6).filter(|_| rand::Rng::random_bool(&mut rng, 0.5)).take(size).collect()
            })
            .collect();
        let pattern = ccflow::SparsityPattern::from_constraint_sets(6, sets).unwrap();
        for (m, ok) in check_consistency(&g, &pattern).into_iter().enumerate() {
            let nodes: Vec<usize> = pattern.agents_of(m).iter().copied().collect();
            if ok && !nodes.is_empty() {
                let lap = g.induced_subgraph_laplacian(&nodes).select_rows(&nodes).select_columns(&nodes);
                prop_assert_eq!(ccflow::problem::numerical_rank(&lap, 1e-10), nodes.len() - 1);
            }
        }
    }
}

#[test]
fn permutation_inverse_exhaustive() {
    for n in 1..=8 {
        for m in 1..=8 {
            let p = Permutation::agents_to_constraints(n, m);
            assert!(p.then(&p.inverse()).is_identity());
            assert!(p.inverse().then(&p).is_identity());
        }
    }
}

/// `J [I_M (x) l_1; ...; I_M (x) l_N] w_C == (I_M (x) L) w_C`, with both
/// sides built as explicit matrices.
#[test]
fn rearrangement_identity_random() {
    let mut rng = common::rng(7);
    for trial in 0..50 {
        let n = 1 + trial % 6;
        let m = 1 + (trial / 6) % 4;
        let g = common::connected_graph(&mut rng, n, 0.4);
        let l = g.laplacian();
        let w = common::random_vector(&mut rng, n * m, 3.0);

        let block_diag = DMatrix::from_fn(n * m, n * m, |r, c| {
            if r / n == c / n {
                l[(r % n, c % n)]
            } else {
                0.0
            }
        });
        let v_c = &block_diag * &w;

        let mut stacked = DMatrix::zeros(n * m, n * m);
        for i in 0..n {
            for k in 0..m {
                for j in 0..n {
                    stacked[(i * m + k, k * n + j)] = l[(i, j)];
                }
            }
        }
        let v_a = &stacked * &w;
        let j = Permutation::agents_to_constraints(n, m);
        assert!((j.apply(&v_a) - &v_c).amax() <= 1e-12);
        assert!((j.matrix() * &v_a - &v_c).amax() <= 1e-12);
    }
}
