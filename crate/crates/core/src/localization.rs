//! Cooperative localization of integrator agents from relative and absolute
//! position measurements.
//!
//! A relative edge `(s, d)` means agent `d` measures `p_s - p_d`; in the graph
//! `G_o^+` that is an edge `s -> d`, so every measurement gives its holder an
//! in-edge. An anchor means the agent measures `-p_k` (its position seen from
//! the origin `O`), an edge `O -> k`.
//!
//! Double integrators carry `s_i = [p_i; v_i]` and measure relative position and
//! velocity together, so every measurement has `2h` rows instead of `h`.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphs::{self, DirectedGraph, WeightRule};
use crate::mas::{AgentBlocks, CouplingMap, MasModel};
use crate::observer::{self, InputMode, ObserverGains, ObserverState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kinematics {
    /// `p' = u`.
    Single,
    /// `p' = v`, `v' = u`.
    Double,
}

impl Kinematics {
    /// State dimension per agent in `h` spatial dimensions.
    pub fn state_dim(self, h: usize) -> usize {
        match self {
            Kinematics::Single => h,
            Kinematics::Double => 2 * h,
        }
    }

    /// `A_ii`: zero, or `J` with `p' = v`.
    pub fn system_matrix(self, h: usize) -> DMatrix<f64> {
        let d = self.state_dim(h);
        let mut a = DMatrix::zeros(d, d);
        if self == Kinematics::Double {
            a.view_mut((0, h), (h, h)).fill_with_identity();
        }
        a
    }

    /// `B_ii`: identity, or `K` driving the velocity.
    pub fn input_matrix(self, h: usize) -> DMatrix<f64> {
        let d = self.state_dim(h);
        let mut b = DMatrix::zeros(d, h);
        b.view_mut((d - h, 0), (h, h)).fill_with_identity();
        b
    }
}

/// Relative measurements between agents plus absolute measurements (anchors).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensingGraphPlus {
    m: usize,
    relative: BTreeSet<(usize, usize)>,
    anchors: BTreeSet<usize>,
}

impl SensingGraphPlus {
    pub fn new(
        m: usize,
        relative: impl IntoIterator<Item = (usize, usize)>,
        anchors: impl IntoIterator<Item = usize>,
    ) -> Result<Self> {
        let relative: BTreeSet<_> = relative.into_iter().collect();
        let anchors: BTreeSet<_> = anchors.into_iter().collect();
        for &(s, d) in &relative {
            for v in [s, d] {
                if v >= m {
                    return Err(Error::Index { index: v, len: m });
                }
            }
            if s == d {
                return Err(Error::Domain(format!("agent {s} cannot measure itself")));
            }
        }
        if let Some(&k) = anchors.iter().find(|&&k| k >= m) {
            return Err(Error::Index { index: k, len: m });
        }
        Ok(Self { m, relative, anchors })
    }

    pub fn agent_count(&self) -> usize {
        self.m
    }

    /// `(s, d)`: agent `d` measures `p_s - p_d`.
    pub fn relative_edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.relative
    }

    pub fn anchors(&self) -> &BTreeSet<usize> {
        &self.anchors
    }

    /// Total number of measurements `q`.
    pub fn observation_count(&self) -> usize {
        self.relative.len() + self.anchors.len()
    }

    /// Relative edges sorted by `(min, max, src)`.
    pub fn sorted_relative_edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<_> = self.relative.iter().copied().collect();
        edges.sort_by_key(|&(s, d)| (s.min(d), s.max(d), s));
        edges
    }

    /// Unordered agent pairs joined by at least one relative measurement.
    pub fn sensing_pairs(&self) -> BTreeSet<(usize, usize)> {
        self.relative.iter().map(|&(s, d)| (s.min(d), s.max(d))).collect()
    }

    /// Agent-only sensing graph `G_o`.
    pub fn agent_graph(&self) -> DirectedGraph {
        let edges: Vec<_> = self.relative.iter().copied().collect();
        DirectedGraph::from_edges(self.m, &edges).expect("validated edges")
    }

    /// `G_o^+` with the origin as node 0 and agent `k` as node `k + 1`.
    pub fn plus_graph(&self) -> DirectedGraph {
        let mut edges: Vec<_> = self.relative.iter().map(|&(s, d)| (s + 1, d + 1)).collect();
        edges.extend(self.anchors.iter().map(|&k| (0, k + 1)));
        DirectedGraph::from_edges(self.m + 1, &edges).expect("validated edges")
    }

    /// Measurements held by agent `i`: its anchor first, then relative
    /// sources in increasing order.
    pub fn held_by(&self, i: usize) -> (bool, Vec<usize>) {
        let anchored = self.anchors.contains(&i);
        let sources = self.relative.iter().filter(|&&(_, d)| d == i).map(|&(s, _)| s).collect();
        (anchored, sources)
    }

    /// Undirected neighbours of every agent.
    fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![BTreeSet::new(); self.m];
        for &(s, d) in &self.relative {
            adj[s].insert(d);
            adj[d].insert(s);
        }
        adj.into_iter().map(|s| s.into_iter().collect()).collect()
    }
}

/// Relative rows `C_o` and absolute rows `C_a` of the measurement matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementMatrix {
    pub relative: DMatrix<f64>,
    pub absolute: DMatrix<f64>,
}

impl MeasurementMatrix {
    /// `[C_o; C_a]`.
    pub fn stacked(&self) -> DMatrix<f64> {
        let cols = self.relative.ncols();
        let mut c = DMatrix::zeros(self.relative.nrows() + self.absolute.nrows(), cols);
        c.view_mut((0, 0), self.relative.shape()).copy_from(&self.relative);
        c.view_mut((self.relative.nrows(), 0), self.absolute.shape()).copy_from(&self.absolute);
        c
    }
}

/// Measurement matrix with `block` rows per measurement (`h` for positions,
/// `2h` for position and velocity). Relative rows follow
/// [`SensingGraphPlus::sorted_relative_edges`]; anchor rows follow agent order.
pub fn build_measurement_matrix(sg: &SensingGraphPlus, block: usize) -> MeasurementMatrix {
    let cols = block * sg.m;
    let eye = DMatrix::<f64>::identity(block, block);
    let edges = sg.sorted_relative_edges();
    let mut relative = DMatrix::zeros(block * edges.len(), cols);
    for (k, &(s, d)) in edges.iter().enumerate() {
        relative.view_mut((k * block, s * block), (block, block)).copy_from(&eye);
        relative.view_mut((k * block, d * block), (block, block)).copy_from(&(-&eye));
    }
    let mut absolute = DMatrix::zeros(block * sg.anchors.len(), cols);
    for (k, &a) in sg.anchors.iter().enumerate() {
        absolute.view_mut((k * block, a * block), (block, block)).copy_from(&(-&eye));
    }
    MeasurementMatrix { relative, absolute }
}

/// Evidence that `C_o` annihilates the all-ones vector.
#[derive(Debug, Clone, PartialEq)]
pub struct RankDeficiency {
    pub witness: DVector<f64>,
    /// `‖C_o 1‖`; exactly zero.
    pub residual: f64,
}

/// `C_o` never has full column rank: every row sums to zero.
pub fn relative_rows_rank_deficient(sg: &SensingGraphPlus, block: usize) -> RankDeficiency {
    let c = build_measurement_matrix(sg, block).relative;
    let witness = DVector::from_element(c.ncols(), 1.0);
    let residual = (&c * &witness).norm();
    RankDeficiency { witness, residual }
}

/// Whole-network observability: the undirected skeleton of `G_o^+` is
/// connected.
pub fn check_global_observability(sg: &SensingGraphPlus) -> bool {
    sg.plus_graph().undirected_skeleton().reachable_from(0).iter().all(|&r| r)
}

/// Per-agent observability of `(A_ii, C_ii)`: the agent holds at least one
/// measurement, i.e. it is not a source of `G_o^+`.
pub fn check_agent_observability(sg: &SensingGraphPlus) -> Vec<bool> {
    let plus = sg.plus_graph();
    (0..sg.m).map(|i| !plus.is_source(i + 1)).collect()
}

/// Hop distance from the anchored agents over undirected relative adjacency.
pub fn assign_layers(sg: &SensingGraphPlus) -> Result<Vec<usize>> {
    let adj = sg.neighbors();
    let mut layer = vec![usize::MAX; sg.m];
    let mut queue = VecDeque::new();
    for &a in &sg.anchors {
        layer[a] = 0;
        queue.push_back(a);
    }
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if layer[w] == usize::MAX {
                layer[w] = layer[v] + 1;
                queue.push_back(w);
            }
        }
    }
    let unreachable: Vec<usize> = (0..sg.m).filter(|&i| layer[i] == usize::MAX).collect();
    if unreachable.is_empty() {
        Ok(layer)
    } else {
        Err(Error::Layer { unreachable })
    }
}

/// Layers computed as each agent would: in synchronous rounds every agent
/// adopts one more than the smallest layer announced by a neighbour. Returns
/// the layers and the number of rounds until no agent changed.
pub fn assign_layers_by_rounds(sg: &SensingGraphPlus) -> Result<(Vec<usize>, usize)> {
    let adj = sg.neighbors();
    let mut layer: Vec<Option<usize>> = (0..sg.m).map(|i| sg.anchors.contains(&i).then_some(0)).collect();
    let mut rounds = 0;
    loop {
        let next: Vec<Option<usize>> = (0..sg.m)
            .map(|i| {
                let heard = adj[i].iter().filter_map(|&l| layer[l]).min().map(|l| l + 1);
                match (layer[i], heard) {
                    (Some(own), Some(h)) => Some(own.min(h)),
                    (own, h) => own.or(h),
                }
            })
            .collect();
        rounds += 1;
        if next == layer {
            break;
        }
        layer = next;
    }
    let unreachable: Vec<usize> = (0..sg.m).filter(|&i| layer[i].is_none()).collect();
    if !unreachable.is_empty() {
        return Err(Error::Layer { unreachable });
    }
    Ok((layer.into_iter().map(Option::unwrap).collect(), rounds))
}

/// Outcome of the acyclic orientation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DagcAssignment {
    /// Pairwise distinct positive IDs after collision resolution.
    pub ids: Vec<u64>,
    pub layers: Vec<usize>,
    /// Sensing graph with every relative pair oriented toward the holder.
    pub oriented: SensingGraphPlus,
    /// Passes over the agents until IDs were distinct (at least one).
    pub id_passes: usize,
}

impl DagcAssignment {
    /// `(s, d)` edges of `G_o*`.
    pub fn oriented_edges(&self) -> &BTreeSet<(usize, usize)> {
        self.oriented.relative_edges()
    }
}

/// IDs drawn uniformly from `1..=10^6`.
pub fn random_ids<R: Rng + ?Sized>(rng: &mut R, m: usize) -> Vec<u64> {
    (0..m).map(|_| rng.random_range(1..=1_000_000)).collect()
}

/// Orients every sensing pair so the measurement is held by the endpoint on
/// the larger layer, or with the larger ID on equal layers. Equal IDs are
/// resolved by incrementing the later agent's ID, repeated until all IDs are
/// distinct. Orientation follows the strict order on `(layer, id)`, so the
/// result is acyclic.
pub fn dagc(sg: &SensingGraphPlus, ids: &[u64]) -> Result<DagcAssignment> {
    if ids.len() != sg.m {
        return Err(Error::Dimension(format!("{} IDs for {} agents", ids.len(), sg.m)));
    }
    if ids.contains(&0) {
        return Err(Error::Domain("IDs must be positive".into()));
    }
    let layers = assign_layers(sg)?;
    let mut ids = ids.to_vec();
    let mut id_passes = 0;
    loop {
        id_passes += 1;
        let mut changed = false;
        for i in 0..sg.m {
            for j in 0..sg.m {
                if i != j && ids[i] == ids[j] {
                    ids[j] += 1;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let key = |v: usize| (layers[v], ids[v]);
    let relative = sg
        .sensing_pairs()
        .into_iter()
        .map(|(a, b)| if key(a) < key(b) { (a, b) } else { (b, a) });
    let oriented = SensingGraphPlus::new(sg.m, relative, sg.anchors.iter().copied())?;
    Ok(DagcAssignment {
        ids,
        layers,
        oriented,
        id_passes,
    })
}

/// Verdicts of the three localization convergence conditions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalizationConditions {
    /// The undirected skeleton of `G_o^+` is connected.
    pub skeleton_connected: bool,
    /// Agents that are sources of `G_o^+` (hold no measurement).
    pub sources: Vec<usize>,
    pub communication_strongly_connected: bool,
}

impl LocalizationConditions {
    pub fn hold(&self) -> bool {
        self.skeleton_connected && self.sources.is_empty() && self.communication_strongly_connected
    }
}

pub fn localization_conditions(sg: &SensingGraphPlus, gc: &DirectedGraph) -> LocalizationConditions {
    LocalizationConditions {
        skeleton_connected: check_global_observability(sg),
        sources: check_agent_observability(sg)
            .iter()
            .enumerate()
            .filter(|(_, ok)| !**ok)
            .map(|(i, _)| i)
            .collect(),
        communication_strongly_connected: graphs::is_strongly_connected(gc),
    }
}

/// Localization plant for an oriented sensing graph, without requiring every
/// agent to hold a measurement. Agent `i` stacks its anchor row block first and
/// then one block per held relative measurement in increasing source order.
pub fn assemble_localization_model(
    sg: &SensingGraphPlus,
    kin: Kinematics,
    h: usize,
    gc: DirectedGraph,
) -> Result<MasModel> {
    if h == 0 {
        return Err(Error::Domain("spatial dimension must be positive".into()));
    }
    if gc.node_count() != sg.m {
        return Err(Error::Dimension(format!(
            "communication graph has {} nodes for {} agents",
            gc.node_count(),
            sg.m
        )));
    }
    let d = kin.state_dim(h);
    let eye = DMatrix::<f64>::identity(d, d);
    let mut agents = Vec::with_capacity(sg.m);
    let mut oc = CouplingMap::new();
    for i in 0..sg.m {
        let (anchored, sources) = sg.held_by(i);
        let count = usize::from(anchored) + sources.len();
        let mut c = DMatrix::zeros(count * d, d);
        for k in 0..count {
            c.view_mut((k * d, 0), (d, d)).copy_from(&(-&eye));
        }
        let first = usize::from(anchored);
        for (k, &s) in sources.iter().enumerate() {
            let mut blk = DMatrix::zeros(count * d, d);
            blk.view_mut(((first + k) * d, 0), (d, d)).copy_from(&eye);
            oc.insert((i, s), blk);
        }
        agents.push(AgentBlocks::new(kin.system_matrix(h), kin.input_matrix(h), c)?);
    }
    MasModel::new(agents, CouplingMap::new(), oc, gc)
}

/// Localization plant for an oriented sensing graph; every agent must hold a
/// measurement.
pub fn build_localization_mas(
    sg: &SensingGraphPlus,
    kin: Kinematics,
    h: usize,
    gc: DirectedGraph,
) -> Result<MasModel> {
    if let Some(i) = check_agent_observability(sg).iter().position(|ok| !ok) {
        return Err(Error::Assumption(format!(
            "agent {i} holds no relative or absolute measurement"
        )));
    }
    assemble_localization_model(sg, kin, h, gc)
}

/// Localization plant on the orientation produced by [`dagc`].
pub fn localization_mas_from_dagc(
    assignment: &DagcAssignment,
    kin: Kinematics,
    h: usize,
    gc: DirectedGraph,
) -> Result<MasModel> {
    build_localization_mas(&assignment.oriented, kin, h, gc)
}

/// Localization observer gains: consensus weights taken from `G_c` with unit
/// leader weights and the coupling gain fixed at one.
pub fn localization_gains(
    model: &MasModel,
    luenberger: Vec<DMatrix<f64>>,
    input_mode: InputMode,
) -> Result<ObserverGains> {
    ObserverGains::from_rule(model, luenberger, 1.0, WeightRule::Graph, 1.0, input_mode)
}

/// Localization observer right-hand side; the general observer with the
/// coupling gain carried by the weights.
pub fn localization_observer(
    model: &MasModel,
    gains: &ObserverGains,
    state: &ObserverState,
    u: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<ObserverState> {
    observer::observer_derivative(model, gains, state, u, y)
}

/// Random sensing graph: each unordered pair is linked with probability
/// `pair_p` in a random direction (both directions with probability
/// `both_p`), and each agent is anchored with probability `anchor_p`.
pub fn random_sensing_graph<R: Rng + ?Sized>(
    rng: &mut R,
    m: usize,
    pair_p: f64,
    both_p: f64,
    anchor_p: f64,
) -> SensingGraphPlus {
    let mut relative = Vec::new();
    for a in 0..m {
        for b in (a + 1)..m {
            if rng.random_bool(pair_p) {
                if rng.random_bool(both_p) {
                    relative.push((a, b));
                    relative.push((b, a));
                } else if rng.random_bool(0.5) {
                    relative.push((a, b));
                } else {
                    relative.push((b, a));
                }
            }
        }
    }
    let anchors: Vec<usize> = (0..m).filter(|_| rng.random_bool(anchor_p)).collect();
    SensingGraphPlus::new(m, relative, anchors).expect("valid random sensing graph")
}

/// Random sensing graph whose skeleton is connected and has at least one
/// anchor: a random spanning tree of relative pairs plus extra pairs.
pub fn random_connected_sensing_graph<R: Rng + ?Sized>(rng: &mut R, m: usize, extra_p: f64) -> SensingGraphPlus {
    let base = random_sensing_graph(rng, m, extra_p, 0.2, 0.3);
    let mut relative: Vec<_> = base.relative.iter().copied().collect();
    let mut order: Vec<usize> = (0..m).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), rng);
    let linked = base.sensing_pairs();
    for k in 1..m {
        let parent = order[rng.random_range(0..k)];
        let child = order[k];
        if !linked.contains(&(parent.min(child), parent.max(child))) {
            relative.push(if rng.random_bool(0.5) { (parent, child) } else { (child, parent) });
        }
    }
    let mut anchors: Vec<usize> = base.anchors.iter().copied().collect();
    if anchors.is_empty() {
        anchors.push(rng.random_range(0..m));
    }
    SensingGraphPlus::new(m, relative, anchors).expect("valid random sensing graph")
}

/// Sensing file section: one-based agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensingFile {
    pub agents: usize,
    #[serde(default)]
    pub anchors: Vec<usize>,
    #[serde(default)]
    pub relative_edges: Vec<(usize, usize)>,
    /// Pinned IDs keyed by agent number.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ids: Option<BTreeMap<String, u64>>,
}

impl SensingFile {
    pub fn from_graph(sg: &SensingGraphPlus, ids: Option<&[u64]>) -> Self {
        Self {
            agents: sg.m,
            anchors: sg.anchors.iter().map(|k| k + 1).collect(),
            relative_edges: sg.relative.iter().map(|&(s, d)| (s + 1, d + 1)).collect(),
            ids: ids.map(|ids| ids.iter().enumerate().map(|(i, &v)| ((i + 1).to_string(), v)).collect()),
        }
    }

    pub fn graph(&self) -> Result<SensingGraphPlus> {
        let dec = |v: usize| {
            v.checked_sub(1)
                .ok_or_else(|| Error::Parse("agent numbers are one-based".into()))
        };
        let relative = self
            .relative_edges
            .iter()
            .map(|&(s, d)| Ok((dec(s)?, dec(d)?)))
            .collect::<Result<Vec<_>>>()?;
        let anchors = self.anchors.iter().map(|&k| dec(k)).collect::<Result<Vec<_>>>()?;
        SensingGraphPlus::new(self.agents, relative, anchors)
    }

    /// Pinned IDs in agent order, if every agent has one.
    pub fn pinned_ids(&self) -> Result<Option<Vec<u64>>> {
        let Some(map) = &self.ids else { return Ok(None) };
        for key in map.keys() {
            match key.parse::<usize>() {
                Ok(k) if (1..=self.agents).contains(&k) => {}
                _ => return Err(Error::Parse(format!("ID key {key:?} is not an agent number"))),
            }
        }
        (1..=self.agents)
            .map(|k| {
                map.get(&k.to_string())
                    .copied()
                    .ok_or_else(|| Error::Parse(format!("no ID pinned for agent {k}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }
}
