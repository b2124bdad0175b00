//! Seeded generators for random graphs and models used by property suites.
//!
//! Models sample one random agent ordering and draw every dynamics and sensing
//! edge forward along it, so both graphs are acyclic with a shared ordering.
//! Diagonal pairs `(A_ii, C_ii)` are drawn by rejection until observable with
//! a well-conditioned observability matrix.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;

use super::{AgentBlocks, CouplingMap, MasModel};
use crate::graphs::DirectedGraph;
use crate::linalg;

/// Smallest accepted ratio of extreme singular values of the observability matrix.
const MIN_OBSERVABILITY_CONDITIONING: f64 = 1e-3;

fn uniform_matrix<R: Rng + ?Sized>(rng: &mut R, r: usize, c: usize, half_width: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-half_width..=half_width))
}

pub fn random_observable_pair<R: Rng + ?Sized>(rng: &mut R, n: usize, p: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    loop {
        let a = uniform_matrix(rng, n, n, 1.5);
        let c = uniform_matrix(rng, p, n, 1.0);
        let sv = linalg::singular_values(&linalg::observability_matrix(&a, &c));
        if sv.len() >= n && sv[n - 1] > MIN_OBSERVABILITY_CONDITIONING * sv[0] {
            return (a, c);
        }
    }
}

/// Random digraph with independent edge probability `p`.
pub fn random_digraph<R: Rng + ?Sized>(rng: &mut R, m: usize, p: f64) -> DirectedGraph {
    let mut edges = Vec::new();
    for s in 0..m {
        for d in 0..m {
            if s != d && rng.random_bool(p) {
                edges.push((s, d));
            }
        }
    }
    DirectedGraph::from_edges(m, &edges).expect("valid random edges")
}

/// Random Hamiltonian cycle plus independent extra edges.
pub fn random_strongly_connected<R: Rng + ?Sized>(rng: &mut R, m: usize, extra_p: f64) -> DirectedGraph {
    let mut perm: Vec<usize> = (0..m).collect();
    perm.shuffle(rng);
    let mut edges: Vec<(usize, usize)> = if m > 1 {
        (0..m).map(|k| (perm[k], perm[(k + 1) % m])).collect()
    } else {
        Vec::new()
    };
    for s in 0..m {
        for d in 0..m {
            if s != d && rng.random_bool(extra_p) {
                edges.push((s, d));
            }
        }
    }
    DirectedGraph::from_edges(m, &edges).expect("valid random edges")
}

/// Two nonempty groups with edges only inside each group and from the
/// first group to the second; never strongly connected. Requires `m >= 2`.
pub fn random_not_strongly_connected<R: Rng + ?Sized>(rng: &mut R, m: usize, p: f64) -> DirectedGraph {
    assert!(m >= 2, "needs two nodes");
    let mut perm: Vec<usize> = (0..m).collect();
    perm.shuffle(rng);
    let cut = rng.random_range(1..m);
    let group = |v: usize| perm.iter().position(|&x| x == v).unwrap() < cut;
    let mut edges = Vec::new();
    for s in 0..m {
        for d in 0..m {
            let allowed = s != d && (group(s) == group(d) || (group(s) && !group(d)));
            if allowed && rng.random_bool(p) {
                edges.push((s, d));
            }
        }
    }
    DirectedGraph::from_edges(m, &edges).expect("valid random edges")
}

/// Random spanning tree plus independent extra undirected edges, unit weights.
pub fn random_connected_undirected<R: Rng + ?Sized>(rng: &mut R, m: usize, extra_p: f64) -> DirectedGraph {
    let mut perm: Vec<usize> = (0..m).collect();
    perm.shuffle(rng);
    let mut edges = Vec::new();
    for k in 1..m {
        let parent = perm[rng.random_range(0..k)];
        edges.push((parent, perm[k]));
        edges.push((perm[k], parent));
    }
    for s in 0..m {
        for d in (s + 1)..m {
            if rng.random_bool(extra_p) {
                edges.push((s, d));
                edges.push((d, s));
            }
        }
    }
    DirectedGraph::from_edges(m, &edges).expect("valid random edges")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomModelSpec {
    pub agents: usize,
    pub max_state_dim: usize,
    /// Probability of each forward dynamics/sensing edge.
    pub coupling_p: f64,
    /// Shift every `A_ii` so its spectral abscissa is at least 0.1.
    pub unstable_diagonal: bool,
}

/// Random model satisfying both structural assumptions, with the given
/// communication graph.
pub fn random_model<R: Rng + ?Sized>(rng: &mut R, spec: RandomModelSpec, gc: DirectedGraph) -> MasModel {
    let m = spec.agents;
    assert_eq!(gc.node_count(), m);
    let mut agents = Vec::with_capacity(m);
    for _ in 0..m {
        let n = rng.random_range(1..=spec.max_state_dim);
        let p = rng.random_range(1..=n);
        let k = rng.random_range(1..=n);
        let (mut a, c) = random_observable_pair(rng, n, p);
        if spec.unstable_diagonal {
            let abscissa = linalg::spectral_abscissa(&a);
            if abscissa < 0.1 {
                for d in 0..n {
                    a[(d, d)] += 0.1 - abscissa;
                }
            }
        }
        let b = uniform_matrix(rng, n, k, 1.0);
        agents.push(AgentBlocks::new(a, b, c).expect("consistent random blocks"));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(rng);
    let mut sc = CouplingMap::new();
    let mut oc = CouplingMap::new();
    for (pos, &i) in order.iter().enumerate() {
        for &j in &order[..pos] {
            // j precedes i, so x_j may drive agent i
            if rng.random_bool(spec.coupling_p) {
                sc.insert((i, j), uniform_matrix(rng, agents[i].state_dim(), agents[j].state_dim(), 1.0));
            }
            if rng.random_bool(spec.coupling_p) {
                oc.insert((i, j), uniform_matrix(rng, agents[i].output_dim(), agents[j].state_dim(), 1.0));
            }
        }
    }
    MasModel::new(agents, sc, oc, gc).expect("consistent random model")
}
