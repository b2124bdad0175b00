//! Spectral and structural properties of Laplacians and grounded blocks,
//! checked against reachability oracles written independently here.

mod common;

use distobs::graphs::{self, DirectedGraph};
use distobs::mas::random::random_digraph;
use nalgebra::DVector;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Boolean reachability closure by Warshall's algorithm.
fn closure(g: &DirectedGraph) -> Vec<Vec<bool>> {
    let m = g.node_count();
    let mut r = vec![vec![false; m]; m];
    for (s, d, _) in g.edges() {
        r[s][d] = true;
    }
    for (i, row) in r.iter_mut().enumerate() {
        row[i] = true;
    }
    for k in 0..m {
        for i in 0..m {
            if r[i][k] {
                for j in 0..m {
                    if r[k][j] {
                        r[i][j] = true;
                    }
                }
            }
        }
    }
    r
}

fn spanning_tree_oracle(g: &DirectedGraph) -> bool {
    closure(g).iter().any(|row| row.iter().all(|&b| b))
}

fn strongly_connected_oracle(g: &DirectedGraph) -> bool {
    closure(g).iter().all(|row| row.iter().all(|&b| b))
}

fn graph_strategy() -> impl Strategy<Value = DirectedGraph> {
    (any::<u64>(), 1usize..=8, 0.05f64..0.6).prop_map(|(seed, m, p)| {
        random_digraph(&mut ChaCha8Rng::seed_from_u64(seed), m, p)
    })
}

proptest! {
    #![proptest_config(common::config(200))]

    #[test]
    fn single_zero_eigenvalue_iff_spanning_tree(g in graph_strategy()) {
        let spec = common::eigs(&graphs::laplacian(&g));
        let zeros = spec.iter().filter(|z| z.norm() < 1e-8).count();
        prop_assert_eq!(zeros == 1, spanning_tree_oracle(&g));
        prop_assert_eq!(graphs::has_spanning_tree(&g), spanning_tree_oracle(&g));
        for z in spec.iter().filter(|z| z.norm() >= 1e-8) {
            prop_assert!(z.re > -1e-10, "eigenvalue {z} in the open left half-plane");
        }
    }

    #[test]
    fn grounded_blocks_positive_iff_strongly_connected(g in graph_strategy()) {
        let sc = strongly_connected_oracle(&g);
        prop_assert_eq!(graphs::is_strongly_connected(&g), sc);
        let all_positive = (0..g.node_count()).all(|j| {
            let s = graphs::grounded_blocks(&graphs::augment(&g, j, 1.0).unwrap()).follower_block;
            common::eigs(&s).iter().map(|z| z.re).fold(f64::INFINITY, f64::min) > 1e-9
        });
        prop_assert_eq!(all_positive, sc);
    }

    #[test]
    fn follower_row_sums_equal_leader_column(g in graph_strategy(), w in 0.1f64..3.0) {
        for j in 0..g.node_count() {
            let b = graphs::grounded_blocks(&graphs::augment(&g, j, w).unwrap());
            let ones = DVector::from_element(g.node_count(), 1.0);
            let diff = (&b.follower_block * ones - &b.leader_column).amax();
            prop_assert!(diff <= 1e-12, "row-sum mismatch {diff:e}");
            prop_assert!((b.leader_column[j] - w).abs() <= 1e-15);
        }
    }

    #[test]
    fn topological_ordering_respects_every_edge(seed in any::<u64>(), m in 1usize..=10, p in 0.0f64..0.8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut perm: Vec<usize> = (0..m).collect();
        perm.shuffle(&mut rng);
        let mut edges = Vec::new();
        for a in 0..m {
            for b in (a + 1)..m {
                if rng.random_bool(p) {
                    edges.push((perm[a], perm[b]));
                }
            }
        }
        let g = DirectedGraph::from_edges(m, &edges).unwrap();
        let order = graphs::topological_ordering(&g).unwrap();
        let mut pos = vec![usize::MAX; m];
        for (k, &v) in order.iter().enumerate() {
            prop_assert_eq!(pos[v], usize::MAX, "node listed twice");
            pos[v] = k;
        }
        for (s, d) in edges {
            prop_assert!(pos[s] < pos[d]);
        }
    }
}
