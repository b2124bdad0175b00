//! Weighted directed graphs and the Laplacian machinery used by the observer.
//!
//! A single [`DirectedGraph`] type serves the dynamics, sensing and
//! communication roles. Weights follow the receiver-major convention:
//! `weights[(i, j)] = w_ij > 0` iff the edge `j -> i` exists, i.e. node `j`
//! sends to (or affects) node `i`. All indices are zero-based.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, PartialEq)]
pub struct DirectedGraph {
    weights: DMatrix<f64>,
}

impl DirectedGraph {
    /// Graph with `node_count` nodes and no edges.
    pub fn empty(node_count: usize) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::Domain("a graph needs at least one node".into()));
        }
        Ok(Self {
            weights: DMatrix::zeros(node_count, node_count),
        })
    }

    /// Unit-weight graph from `(src, dst)` pairs.
    pub fn from_edges(node_count: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let weighted: Vec<_> = edges.iter().map(|&(s, d)| (s, d, 1.0)).collect();
        Self::from_weighted_edges(node_count, &weighted)
    }

    /// Graph from `(src, dst, weight)` triples. Repeated edges overwrite.
    pub fn from_weighted_edges(node_count: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut g = Self::empty(node_count)?;
        for &(src, dst, w) in edges {
            g.check_index(src)?;
            g.check_index(dst)?;
            if src == dst {
                return Err(Error::Domain(format!("self-loop at node {src}")));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Domain(format!(
                    "edge ({src}, {dst}) needs a positive finite weight, got {w}"
                )));
            }
            g.weights[(dst, src)] = w;
        }
        Ok(g)
    }

    /// Graph from a receiver-major weight matrix.
    pub fn from_weight_matrix(weights: DMatrix<f64>) -> Result<Self> {
        if !weights.is_square() || weights.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "weight matrix must be square and nonempty, got {:?}",
                weights.shape()
            )));
        }
        for i in 0..weights.nrows() {
            if weights[(i, i)] != 0.0 {
                return Err(Error::Domain(format!("self-loop at node {i}")));
            }
        }
        if weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::Domain("weights must be finite and nonnegative".into()));
        }
        Ok(Self { weights })
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i < self.node_count() {
            Ok(())
        } else {
            Err(Error::Index {
                index: i,
                len: self.node_count(),
            })
        }
    }

    pub fn node_count(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// Weight of edge `src -> dst` (zero when absent).
    pub fn weight(&self, src: usize, dst: usize) -> f64 {
        self.weights[(dst, src)]
    }

    pub fn has_edge(&self, src: usize, dst: usize) -> bool {
        self.weight(src, dst) > 0.0
    }

    /// All edges as `(src, dst, weight)`, sorted by `(src, dst)`.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let m = self.node_count();
        let mut out = Vec::new();
        for src in 0..m {
            for dst in 0..m {
                if self.has_edge(src, dst) {
                    out.push((src, dst, self.weight(src, dst)));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.weights.iter().filter(|&&w| w > 0.0).count()
    }

    /// `N_i`: nodes with an edge into `i`.
    pub fn in_neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.node_count()).filter(|&j| self.has_edge(j, i)).collect()
    }

    /// `S_i`: nodes receiving an edge from `i`.
    pub fn out_neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.node_count()).filter(|&j| self.has_edge(i, j)).collect()
    }

    pub fn in_degree(&self, i: usize) -> usize {
        self.in_neighbors(i).len()
    }

    pub fn is_source(&self, i: usize) -> bool {
        self.in_degree(i) == 0
    }

    /// Edge-set union; weights of `other` win on overlap.
    pub fn union(&self, other: &DirectedGraph) -> Result<DirectedGraph> {
        if self.node_count() != other.node_count() {
            return Err(Error::Dimension(format!(
                "cannot unite graphs on {} and {} nodes",
                self.node_count(),
                other.node_count()
            )));
        }
        let weights = self.weights.zip_map(&other.weights, |a, b| if b > 0.0 { b } else { a });
        Ok(Self { weights })
    }

    /// Undirected skeleton: every edge present in both directions, unit weights.
    pub fn undirected_skeleton(&self) -> DirectedGraph {
        let m = self.node_count();
        let weights = DMatrix::from_fn(m, m, |i, j| {
            if self.weights[(i, j)] > 0.0 || self.weights[(j, i)] > 0.0 {
                1.0
            } else {
                0.0
            }
        });
        Self { weights }
    }

    pub fn reversed(&self) -> DirectedGraph {
        Self {
            weights: self.weights.transpose(),
        }
    }

    /// Largest `|w_ij - w_ji|`.
    pub fn asymmetry(&self) -> f64 {
        linalg::max_abs_diff(&self.weights, &self.weights.transpose())
    }

    /// Nodes reachable from `start` along directed edges (including `start`).
    pub fn reachable_from(&self, start: usize) -> Vec<bool> {
        let m = self.node_count();
        let mut seen = vec![false; m];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(u) = queue.pop_front() {
            for v in 0..m {
                if !seen[v] && self.has_edge(u, v) {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }

    /// Subgraph induced by `keep` (in the given order).
    pub fn induced(&self, keep: &[usize]) -> Result<DirectedGraph> {
        for &k in keep {
            self.check_index(k)?;
        }
        let weights = DMatrix::from_fn(keep.len(), keep.len(), |a, b| self.weights[(keep[a], keep[b])]);
        DirectedGraph::from_weight_matrix(weights)
    }

    /// Copy with `extra` isolated nodes appended.
    pub fn with_extra_nodes(&self, extra: usize) -> DirectedGraph {
        let m = self.node_count() + extra;
        let mut weights = DMatrix::zeros(m, m);
        weights
            .view_mut((0, 0), self.weights.shape())
            .copy_from(&self.weights);
        Self { weights }
    }

    /// Plain-text adjacency list: a `nodes m` header, then one `src dst weight`
    /// line per edge with one-based node numbers.
    pub fn to_text(&self) -> String {
        let mut out = format!("nodes {}\n", self.node_count());
        for (src, dst, w) in self.edges() {
            let _ = writeln!(out, "{} {} {}", src + 1, dst + 1, w);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<DirectedGraph> {
        let mut lines = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("missing `nodes m` header".into()))?;
        let node_count = match header.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["nodes", m] => m
                .parse::<usize>()
                .map_err(|e| Error::Parse(format!("bad node count `{m}`: {e}")))?,
            _ => return Err(Error::Parse(format!("expected `nodes m`, got `{header}`"))),
        };
        let mut edges = Vec::new();
        for line in lines {
            let fields: Vec<_> = line.split_whitespace().collect();
            let [src, dst, w] = fields.as_slice() else {
                return Err(Error::Parse(format!("expected `src dst weight`, got `{line}`")));
            };
            let parse_node = |s: &str| -> Result<usize> {
                let k: usize = s
                    .parse()
                    .map_err(|e| Error::Parse(format!("bad node `{s}`: {e}")))?;
                k.checked_sub(1)
                    .ok_or_else(|| Error::Parse("node numbers start at 1".into()))
            };
            let w: f64 = w
                .parse()
                .map_err(|e| Error::Parse(format!("bad weight `{w}`: {e}")))?;
            edges.push((parse_node(src)?, parse_node(dst)?, w));
        }
        DirectedGraph::from_weighted_edges(node_count, &edges)
    }
}

/// `L = D - W` with `D = diag(row sums of W)`.
pub fn laplacian(g: &DirectedGraph) -> DMatrix<f64> {
    laplacian_of_weights(g.weights())
}

pub(crate) fn laplacian_of_weights(w: &DMatrix<f64>) -> DMatrix<f64> {
    let mut l = -w.clone();
    for i in 0..w.nrows() {
        l[(i, i)] += w.row(i).sum();
    }
    l
}

/// True iff some node reaches every other node (a rooted out-branching exists).
pub fn has_spanning_tree(g: &DirectedGraph) -> bool {
    (0..g.node_count()).any(|r| g.reachable_from(r).iter().all(|&s| s))
}

/// Two reachability sweeps from node 0: forward and on the reversed graph.
pub fn is_strongly_connected(g: &DirectedGraph) -> bool {
    g.reachable_from(0).iter().all(|&s| s) && g.reversed().reachable_from(0).iter().all(|&s| s)
}

/// Kahn's algorithm with smallest-index-first tie-breaking.
///
/// On failure the error carries one directed cycle, listed in edge order.
pub fn topological_ordering(g: &DirectedGraph) -> Result<Vec<usize>> {
    let m = g.node_count();
    let mut indeg: Vec<usize> = (0..m).map(|i| g.in_degree(i)).collect();
    let mut ready: BinaryHeap<Reverse<usize>> =
        (0..m).filter(|&i| indeg[i] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(m);
    while let Some(Reverse(u)) = ready.pop() {
        order.push(u);
        for v in g.out_neighbors(u) {
            indeg[v] -= 1;
            if indeg[v] == 0 {
                ready.push(Reverse(v));
            }
        }
    }
    if order.len() == m {
        return Ok(order);
    }
    let mut placed = vec![false; m];
    for &u in &order {
        placed[u] = true;
    }
    Err(Error::Cycle {
        cycle: find_cycle(g, &placed),
    })
}

/// Every unplaced node keeps an unplaced in-neighbour, so walking backwards
/// must revisit a node.
fn find_cycle(g: &DirectedGraph, placed: &[bool]) -> Vec<usize> {
    let start = placed.iter().position(|&p| !p).expect("an unplaced node");
    let mut walk = vec![start];
    let mut pos = vec![usize::MAX; g.node_count()];
    pos[start] = 0;
    let mut cur = start;
    loop {
        let prev = g
            .in_neighbors(cur)
            .into_iter()
            .find(|&p| !placed[p])
            .expect("unplaced node with unplaced predecessor");
        if pos[prev] != usize::MAX {
            let mut cycle: Vec<usize> = walk[pos[prev]..].to_vec();
            cycle.reverse();
            return cycle;
        }
        pos[prev] = walk.len();
        walk.push(prev);
        cur = prev;
    }
}

/// Consensus-weight constructions on an augmented graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightRule {
    /// Keep the communication graph's own weights and the given leader weight.
    Graph,
    Binary,
    NormalizedIn,
    NormalizedOut,
}

/// Communication graph plus a virtual leader (node 0) with one edge into
/// agent `leader_target`. Agent `k` of the base graph is node `k + 1` here.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedGraph {
    base: DirectedGraph,
    leader_target: usize,
    weights: DMatrix<f64>,
}

pub fn augment(gc: &DirectedGraph, j: usize, w_j0: f64) -> Result<AugmentedGraph> {
    gc.check_index(j)?;
    if !(w_j0 > 0.0 && w_j0.is_finite()) {
        return Err(Error::Domain(format!(
            "leader weight must be positive, got {w_j0}"
        )));
    }
    let m = gc.node_count();
    let mut weights = DMatrix::zeros(m + 1, m + 1);
    weights.view_mut((1, 1), (m, m)).copy_from(gc.weights());
    weights[(j + 1, 0)] = w_j0;
    Ok(AugmentedGraph {
        base: gc.clone(),
        leader_target: j,
        weights,
    })
}

impl AugmentedGraph {
    pub fn base(&self) -> &DirectedGraph {
        &self.base
    }

    pub fn leader_target(&self) -> usize {
        self.leader_target
    }

    /// `(m+1) x (m+1)` receiver-major weights `W^(j)`.
    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn node_count(&self) -> usize {
        self.weights.nrows()
    }

    pub fn edge_count(&self) -> usize {
        self.base.edge_count() + 1
    }

    /// Augmented-graph edge `r -> s` in augmented numbering.
    pub fn has_edge(&self, r: usize, s: usize) -> bool {
        if r == 0 {
            s == self.leader_target + 1
        } else {
            s != 0 && self.base.has_edge(r - 1, s - 1)
        }
    }

    fn in_count(&self, s: usize) -> usize {
        (0..self.node_count()).filter(|&r| self.has_edge(r, s)).count()
    }

    fn out_count(&self, r: usize) -> usize {
        (0..self.node_count()).filter(|&s| self.has_edge(r, s)).count()
    }

    /// Replace the weights; they must be positive exactly on the edge set.
    pub fn with_weights(&self, weights: DMatrix<f64>) -> Result<AugmentedGraph> {
        let n = self.node_count();
        if weights.shape() != (n, n) {
            return Err(Error::Dimension(format!(
                "augmented weights must be {n}x{n}, got {:?}",
                weights.shape()
            )));
        }
        for s in 0..n {
            for r in 0..n {
                let w = weights[(s, r)];
                let ok = if self.has_edge(r, s) { w > 0.0 && w.is_finite() } else { w == 0.0 };
                if !ok {
                    return Err(Error::Domain(format!(
                        "weight w[{s}][{r}] = {w} is incompatible with the augmented edge set"
                    )));
                }
            }
        }
        Ok(AugmentedGraph {
            base: self.base.clone(),
            leader_target: self.leader_target,
            weights,
        })
    }

    pub fn reweighted(&self, rule: WeightRule) -> AugmentedGraph {
        let weights = match rule {
            WeightRule::Graph => return self.clone(),
            WeightRule::Binary => binary_weights(self),
            WeightRule::NormalizedIn => normalized_in_weights(self),
            WeightRule::NormalizedOut => normalized_out_weights(self),
        };
        self.with_weights(weights)
            .expect("weight rules respect the edge set")
    }

    pub fn laplacian(&self) -> DMatrix<f64> {
        laplacian_of_weights(&self.weights)
    }
}

/// Partition of the augmented Laplacian: `[[0, 0], [-O, S]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundedBlocks {
    /// `O^(j) = w_j0 b_j`.
    pub leader_column: DVector<f64>,
    /// `S^(j)`, the follower block.
    pub follower_block: DMatrix<f64>,
}

pub fn grounded_blocks(ag: &AugmentedGraph) -> GroundedBlocks {
    let l = ag.laplacian();
    let m = l.nrows() - 1;
    GroundedBlocks {
        leader_column: -l.view((1, 0), (m, 1)).column(0).into_owned(),
        follower_block: l.view((1, 1), (m, m)).into_owned(),
    }
}

pub fn binary_weights(ag: &AugmentedGraph) -> DMatrix<f64> {
    let n = ag.node_count();
    DMatrix::from_fn(n, n, |s, r| if ag.has_edge(r, s) { 1.0 } else { 0.0 })
}

/// `w_sr = 1 / |N_s|` on edges: each receiving row sums to one.
pub fn normalized_in_weights(ag: &AugmentedGraph) -> DMatrix<f64> {
    let n = ag.node_count();
    DMatrix::from_fn(n, n, |s, r| {
        if ag.has_edge(r, s) {
            1.0 / ag.in_count(s) as f64
        } else {
            0.0
        }
    })
}

/// `w_sr = 1 / |S_r|` on edges: each sender's shares sum to one.
pub fn normalized_out_weights(ag: &AugmentedGraph) -> DMatrix<f64> {
    let n = ag.node_count();
    DMatrix::from_fn(n, n, |s, r| {
        if ag.has_edge(r, s) {
            1.0 / ag.out_count(r) as f64
        } else {
            0.0
        }
    })
}

/// Second-smallest Laplacian eigenvalue (by real part).
///
/// With `require_undirected`, the weights must be symmetric to 1e-12 and
/// the symmetric eigensolver is used.
pub fn algebraic_connectivity(g: &DirectedGraph, require_undirected: bool) -> Result<f64> {
    let l = laplacian(g);
    if g.node_count() < 2 {
        return Ok(0.0);
    }
    let mut values: Vec<f64> = if require_undirected {
        let asym = g.asymmetry();
        if asym > 1e-12 {
            return Err(Error::Symmetry { asymmetry: asym });
        }
        l.symmetric_eigenvalues().iter().copied().collect()
    } else {
        linalg::eigenvalues(&l).iter().map(|z| z.re).collect()
    };
    values.sort_by(f64::total_cmp);
    let tol = 1e-8 * l.abs().row_sum().max().max(1.0);
    let lambda2 = values[1];
    Ok(if lambda2.abs() < tol { 0.0 } else { lambda2 })
}

/// Count of Laplacian eigenvalues with modulus below `1e-8 * ||L||_1`.
pub fn zero_eigenvalue_count(l: &DMatrix<f64>) -> usize {
    let tol = 1e-8 * l.abs().row_sum().max().max(1.0);
    linalg::eigenvalues(l).iter().filter(|z| z.norm() < tol).count()
}
