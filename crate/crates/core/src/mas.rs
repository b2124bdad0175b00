//! The coupled plant
//!
//! ```text
//! x_i' = A_ii x_i + sum_j A_ij x_j + B_ii u_i
//! y_i  = C_ii x_i + sum_j C_ij x_j
//! ```
//!
//! together with its dynamics (`G_s`), sensing (`G_o`) and communication
//! (`G_c`) graphs. `G_s` and `G_o` are derived from the nonzero coupling
//! blocks, so they can never disagree with the matrices.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphs::{self, DirectedGraph};
use crate::linalg;
use crate::scalar::{gemv_acc, Scalar};

pub mod random;

/// Diagonal blocks of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentBlocks {
    /// `A_ii`, `n_i x n_i`.
    pub a: DMatrix<f64>,
    /// `B_ii`, `n_i x k_i`.
    pub b: DMatrix<f64>,
    /// `C_ii`, `p_i x n_i`.
    pub c: DMatrix<f64>,
}

impl AgentBlocks {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() || n == 0 {
            return Err(Error::Dimension(format!("A_ii must be square and nonempty, got {:?}", a.shape())));
        }
        if b.nrows() != n {
            return Err(Error::Dimension(format!("B_ii must have {n} rows, got {}", b.nrows())));
        }
        if c.ncols() != n {
            return Err(Error::Dimension(format!("C_ii must have {n} columns, got {}", c.ncols())));
        }
        Ok(Self { a, b, c })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }
}

pub type CouplingMap = BTreeMap<(usize, usize), DMatrix<f64>>;

#[derive(Debug, Clone, PartialEq)]
pub struct MasModel {
    agents: Vec<AgentBlocks>,
    state_couplings: CouplingMap,
    output_couplings: CouplingMap,
    gs: DirectedGraph,
    go: DirectedGraph,
    gc: DirectedGraph,
}

/// `x' = A x + B u`, `y = C x` with per-agent offsets into each vector.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub state_offsets: Vec<usize>,
    pub input_offsets: Vec<usize>,
    pub output_offsets: Vec<usize>,
}

fn offsets(dims: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut out = vec![0];
    for d in dims {
        out.push(out.last().unwrap() + d);
    }
    out
}

impl StackedSystem {
    fn span(off: &[usize], i: usize) -> (usize, usize) {
        (off[i], off[i + 1] - off[i])
    }

    pub fn a_block(&self, i: usize, j: usize) -> DMatrix<f64> {
        let (r, nr) = Self::span(&self.state_offsets, i);
        let (c, nc) = Self::span(&self.state_offsets, j);
        self.a.view((r, c), (nr, nc)).into_owned()
    }

    pub fn b_block(&self, i: usize, j: usize) -> DMatrix<f64> {
        let (r, nr) = Self::span(&self.state_offsets, i);
        let (c, nc) = Self::span(&self.input_offsets, j);
        self.b.view((r, c), (nr, nc)).into_owned()
    }

    pub fn c_block(&self, i: usize, j: usize) -> DMatrix<f64> {
        let (r, nr) = Self::span(&self.output_offsets, i);
        let (c, nc) = Self::span(&self.state_offsets, j);
        self.c.view((r, c), (nr, nc)).into_owned()
    }
}

fn coupling_graph(m: usize, couplings: &CouplingMap) -> Result<DirectedGraph> {
    let edges: Vec<_> = couplings.keys().map(|&(i, j)| (j, i)).collect();
    DirectedGraph::from_edges(m, &edges)
}

impl MasModel {
    /// Absent or all-zero coupling blocks are dropped; keys are `(i, j)` for
    /// the block multiplying `x_j` in agent `i`'s equation.
    pub fn new(
        agents: Vec<AgentBlocks>,
        state_couplings: CouplingMap,
        output_couplings: CouplingMap,
        gc: DirectedGraph,
    ) -> Result<Self> {
        let m = agents.len();
        if m == 0 {
            return Err(Error::Domain("a model needs at least one agent".into()));
        }
        if gc.node_count() != m {
            return Err(Error::Dimension(format!(
                "communication graph has {} nodes for {m} agents",
                gc.node_count()
            )));
        }
        let check = |map: &CouplingMap, rows: &dyn Fn(usize) -> usize, name: &str| -> Result<CouplingMap> {
            let mut kept = CouplingMap::new();
            for (&(i, j), block) in map {
                for k in [i, j] {
                    if k >= m {
                        return Err(Error::Index { index: k, len: m });
                    }
                }
                if i == j {
                    return Err(Error::Domain(format!("{name}_{i}{i} is a diagonal block, not a coupling")));
                }
                let want = (rows(i), agents[j].state_dim());
                if block.shape() != want {
                    return Err(Error::Dimension(format!(
                        "{name}_({i},{j}) must be {want:?}, got {:?}",
                        block.shape()
                    )));
                }
                if !linalg::is_zero(block) {
                    kept.insert((i, j), block.clone());
                }
            }
            Ok(kept)
        };
        let state_couplings = check(&state_couplings, &|i| agents[i].state_dim(), "A")?;
        let output_couplings = check(&output_couplings, &|i| agents[i].output_dim(), "C")?;
        let gs = coupling_graph(m, &state_couplings)?;
        let go = coupling_graph(m, &output_couplings)?;
        Ok(Self {
            agents,
            state_couplings,
            output_couplings,
            gs,
            go,
            gc,
        })
    }

    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    pub fn agents(&self) -> &[AgentBlocks] {
        &self.agents
    }

    pub fn agent(&self, i: usize) -> &AgentBlocks {
        &self.agents[i]
    }

    pub fn state_couplings(&self) -> &CouplingMap {
        &self.state_couplings
    }

    pub fn output_couplings(&self) -> &CouplingMap {
        &self.output_couplings
    }

    /// `A_ij` for `i != j`, or `A_ii` on the diagonal; `None` when absent.
    pub fn a(&self, i: usize, j: usize) -> Option<&DMatrix<f64>> {
        if i == j {
            Some(&self.agents[i].a)
        } else {
            self.state_couplings.get(&(i, j))
        }
    }

    pub fn c(&self, i: usize, j: usize) -> Option<&DMatrix<f64>> {
        if i == j {
            Some(&self.agents[i].c)
        } else {
            self.output_couplings.get(&(i, j))
        }
    }

    pub fn gs(&self) -> &DirectedGraph {
        &self.gs
    }

    pub fn go(&self) -> &DirectedGraph {
        &self.go
    }

    pub fn gc(&self) -> &DirectedGraph {
        &self.gc
    }

    pub fn with_gc(&self, gc: DirectedGraph) -> Result<Self> {
        Self::new(
            self.agents.clone(),
            self.state_couplings.clone(),
            self.output_couplings.clone(),
            gc,
        )
    }

    pub fn state_dims(&self) -> Vec<usize> {
        self.agents.iter().map(AgentBlocks::state_dim).collect()
    }

    pub fn state_offsets(&self) -> Vec<usize> {
        offsets(self.agents.iter().map(AgentBlocks::state_dim))
    }

    pub fn input_offsets(&self) -> Vec<usize> {
        offsets(self.agents.iter().map(AgentBlocks::input_dim))
    }

    pub fn output_offsets(&self) -> Vec<usize> {
        offsets(self.agents.iter().map(AgentBlocks::output_dim))
    }

    pub fn total_state_dim(&self) -> usize {
        *self.state_offsets().last().unwrap()
    }

    pub fn total_input_dim(&self) -> usize {
        *self.input_offsets().last().unwrap()
    }

    pub fn total_output_dim(&self) -> usize {
        *self.output_offsets().last().unwrap()
    }

    /// In-neighbours of `i` in `G_s` or `G_o`, ascending.
    pub fn coupling_neighbors(&self, i: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .gs
            .in_neighbors(i)
            .into_iter()
            .chain(self.go.in_neighbors(i))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn stack(&self) -> StackedSystem {
        let so = self.state_offsets();
        let io = self.input_offsets();
        let oo = self.output_offsets();
        let (n, k, p) = (*so.last().unwrap(), *io.last().unwrap(), *oo.last().unwrap());
        let mut a = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, k);
        let mut c = DMatrix::zeros(p, n);
        for (i, ag) in self.agents.iter().enumerate() {
            a.view_mut((so[i], so[i]), ag.a.shape()).copy_from(&ag.a);
            b.view_mut((so[i], io[i]), ag.b.shape()).copy_from(&ag.b);
            c.view_mut((oo[i], so[i]), ag.c.shape()).copy_from(&ag.c);
        }
        for (&(i, j), blk) in &self.state_couplings {
            a.view_mut((so[i], so[j]), blk.shape()).copy_from(blk);
        }
        for (&(i, j), blk) in &self.output_couplings {
            c.view_mut((oo[i], so[j]), blk.shape()).copy_from(blk);
        }
        StackedSystem {
            a,
            b,
            c,
            state_offsets: so,
            input_offsets: io,
            output_offsets: oo,
        }
    }

    /// Per-agent rank test of `(A_ii, C_ii)`.
    pub fn check_node_observability(&self) -> Vec<bool> {
        self.agents
            .iter()
            .map(|ag| linalg::is_observable(&ag.a, &ag.c))
            .collect()
    }

    /// A common topological ordering of `G_s` and `G_o`, taken from their union.
    pub fn check_topological_consistency(&self) -> Result<Vec<usize>> {
        for (name, g) in [("dynamics", &self.gs), ("sensing", &self.go)] {
            if let Err(Error::Cycle { cycle }) = graphs::topological_ordering(g) {
                return Err(Error::Assumption(format!(
                    "{name} graph has a directed cycle through agents {cycle:?}"
                )));
            }
        }
        let union = self.gs.union(&self.go)?;
        graphs::topological_ordering(&union).map_err(|e| match e {
            Error::Cycle { cycle } => Error::Assumption(format!(
                "dynamics and sensing graphs admit no common ordering; union cycle {cycle:?}"
            )),
            other => other,
        })
    }

    /// Both structural assumptions; returns the common ordering.
    pub fn check_assumptions(&self) -> Result<Vec<usize>> {
        if let Some(agent) = self.check_node_observability().iter().position(|&ok| !ok) {
            return Err(Error::Unobservable { agent });
        }
        self.check_topological_consistency()
    }

    fn check_len(&self, what: &str, got: usize, want: usize) -> Result<()> {
        if got == want {
            Ok(())
        } else {
            Err(Error::Dimension(format!("{what} has length {got}, expected {want}")))
        }
    }

    /// Blockwise `A x + B u` written into `out`.
    pub fn plant_derivative_into<S: Scalar>(&self, x: &[S], u: &[S], out: &mut [S]) {
        let so = self.state_offsets();
        let io = self.input_offsets();
        out.fill(S::zero());
        for (i, ag) in self.agents.iter().enumerate() {
            let o = &mut out[so[i]..so[i + 1]];
            gemv_acc(o, 1.0, &ag.a, &x[so[i]..so[i + 1]]);
            gemv_acc(o, 1.0, &ag.b, &u[io[i]..io[i + 1]]);
        }
        for (&(i, j), blk) in &self.state_couplings {
            gemv_acc(&mut out[so[i]..so[i + 1]], 1.0, blk, &x[so[j]..so[j + 1]]);
        }
    }

    pub fn plant_derivative(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len("state", x.len(), self.total_state_dim())?;
        self.check_len("input", u.len(), self.total_input_dim())?;
        let mut out = DVector::zeros(x.len());
        self.plant_derivative_into(x.as_slice(), u.as_slice(), out.as_mut_slice());
        Ok(out)
    }

    /// Blockwise `C x` written into `out`.
    pub fn plant_output_into<S: Scalar>(&self, x: &[S], out: &mut [S]) {
        let so = self.state_offsets();
        let oo = self.output_offsets();
        out.fill(S::zero());
        for (i, ag) in self.agents.iter().enumerate() {
            gemv_acc(&mut out[oo[i]..oo[i + 1]], 1.0, &ag.c, &x[so[i]..so[i + 1]]);
        }
        for (&(i, j), blk) in &self.output_couplings {
            gemv_acc(&mut out[oo[i]..oo[i + 1]], 1.0, blk, &x[so[j]..so[j + 1]]);
        }
    }

    pub fn plant_output(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len("state", x.len(), self.total_state_dim())?;
        let mut out = DVector::zeros(self.total_output_dim());
        self.plant_output_into(x.as_slice(), out.as_mut_slice());
        Ok(out)
    }

    /// Drop agent `k`, its couplings and its communication edges; later
    /// agents shift down by one.
    pub fn remove_agent(&self, k: usize) -> Result<MasModel> {
        let m = self.agent_count();
        if k >= m {
            return Err(Error::Index { index: k, len: m });
        }
        if m == 1 {
            return Err(Error::Domain("cannot remove the last agent".into()));
        }
        let shift = |i: usize| if i > k { i - 1 } else { i };
        let filter = |map: &CouplingMap| -> CouplingMap {
            map.iter()
                .filter(|((i, j), _)| *i != k && *j != k)
                .map(|(&(i, j), b)| ((shift(i), shift(j)), b.clone()))
                .collect()
        };
        let keep: Vec<usize> = (0..m).filter(|&i| i != k).collect();
        let mut agents = self.agents.clone();
        agents.remove(k);
        MasModel::new(
            agents,
            filter(&self.state_couplings),
            filter(&self.output_couplings),
            self.gc.induced(&keep)?,
        )
    }

    /// Append an agent with the given couplings (keys may reference the new
    /// index `m`) and replace the communication graph.
    pub fn add_agent(
        &self,
        agent: AgentBlocks,
        state_couplings: CouplingMap,
        output_couplings: CouplingMap,
        gc: DirectedGraph,
    ) -> Result<MasModel> {
        let mut agents = self.agents.clone();
        agents.push(agent);
        let mut sc = self.state_couplings.clone();
        sc.extend(state_couplings);
        let mut oc = self.output_couplings.clone();
        oc.extend(output_couplings);
        MasModel::new(agents, sc, oc, gc)
    }

    pub fn to_file(&self) -> ModelFile {
        let rows = linalg::matrix_to_rows;
        ModelFile {
            m: self.agent_count(),
            agents: self
                .agents
                .iter()
                .map(|ag| AgentFile {
                    a: rows(&ag.a),
                    b: rows(&ag.b),
                    c: rows(&ag.c),
                })
                .collect(),
            state_couplings: self
                .state_couplings
                .iter()
                .map(|(&(i, j), b)| StateCouplingFile {
                    i: i + 1,
                    j: j + 1,
                    a_ij: rows(b),
                })
                .collect(),
            output_couplings: self
                .output_couplings
                .iter()
                .map(|(&(i, j), b)| OutputCouplingFile {
                    i: i + 1,
                    j: j + 1,
                    c_ij: rows(b),
                })
                .collect(),
            gs: Some(edge_pairs(&self.gs)),
            go: Some(edge_pairs(&self.go)),
            gc: self
                .gc
                .edges()
                .into_iter()
                .map(|(s, d, w)| EdgeSpec::Weighted(s + 1, d + 1, w))
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<MasModel> {
        let file: ModelFile = serde_json::from_str(text)?;
        file.into_model()
    }
}

fn edge_pairs(g: &DirectedGraph) -> Vec<[usize; 2]> {
    g.edges().into_iter().map(|(s, d, _)| [s + 1, d + 1]).collect()
}

/// Serialized model. Agent numbers are one-based; `gs`/`go` are optional and,
/// when present, must match the coupling blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub m: usize,
    pub agents: Vec<AgentFile>,
    #[serde(default)]
    pub state_couplings: Vec<StateCouplingFile>,
    #[serde(default)]
    pub output_couplings: Vec<OutputCouplingFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gs: Option<Vec<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub go: Option<Vec<[usize; 2]>>,
    pub gc: Vec<EdgeSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentFile {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateCouplingFile {
    pub i: usize,
    pub j: usize,
    #[serde(rename = "A_ij")]
    pub a_ij: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputCouplingFile {
    pub i: usize,
    pub j: usize,
    #[serde(rename = "C_ij")]
    pub c_ij: Vec<Vec<f64>>,
}

/// `[src, dst]` (unit weight) or `[src, dst, weight]`, one-based.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EdgeSpec {
    Weighted(usize, usize, f64),
    Plain(usize, usize),
}

impl EdgeSpec {
    pub fn zero_based(&self) -> Result<(usize, usize, f64)> {
        let (s, d, w) = match *self {
            EdgeSpec::Weighted(s, d, w) => (s, d, w),
            EdgeSpec::Plain(s, d) => (s, d, 1.0),
        };
        if s == 0 || d == 0 {
            return Err(Error::Parse("agent numbers start at 1".into()));
        }
        Ok((s - 1, d - 1, w))
    }
}

pub fn graph_from_specs(m: usize, specs: &[EdgeSpec]) -> Result<DirectedGraph> {
    let edges = specs.iter().map(EdgeSpec::zero_based).collect::<Result<Vec<_>>>()?;
    DirectedGraph::from_weighted_edges(m, &edges)
}

/// Matrix from nested rows; an empty row list becomes `0 x ncols`.
pub fn matrix_with_cols(rows: &[Vec<f64>], ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Ok(DMatrix::zeros(0, ncols));
    }
    let m = linalg::matrix_from_rows(rows).ok_or_else(|| Error::Parse(format!("{what} has ragged rows")))?;
    if m.ncols() != ncols {
        return Err(Error::Dimension(format!("{what} must have {ncols} columns, got {}", m.ncols())));
    }
    Ok(m)
}

fn one_based(i: usize, m: usize) -> Result<usize> {
    if i == 0 || i > m {
        Err(Error::Parse(format!("agent number {i} outside 1..={m}")))
    } else {
        Ok(i - 1)
    }
}

impl AgentFile {
    /// Parsed blocks; `what` names the agent in error messages.
    pub fn blocks(&self, what: &str) -> Result<AgentBlocks> {
        let a = linalg::matrix_from_rows(&self.a).ok_or_else(|| Error::Parse(format!("{what} A has ragged rows")))?;
        let n = a.nrows();
        let b = if self.b.is_empty() {
            DMatrix::zeros(n, 0)
        } else {
            linalg::matrix_from_rows(&self.b).ok_or_else(|| Error::Parse(format!("{what} B has ragged rows")))?
        };
        let c = matrix_with_cols(&self.c, n, &format!("{what} C"))?;
        AgentBlocks::new(a, b, c)
    }
}

impl ModelFile {
    pub fn into_model(self) -> Result<MasModel> {
        let m = self.m;
        if self.agents.len() != m {
            return Err(Error::Parse(format!("m = {m} but {} agents listed", self.agents.len())));
        }
        let mut agents = Vec::with_capacity(m);
        for (idx, ag) in self.agents.iter().enumerate() {
            agents.push(ag.blocks(&format!("agent {}", idx + 1))?);
        }
        let mut sc = CouplingMap::new();
        for e in &self.state_couplings {
            let (i, j) = (one_based(e.i, m)?, one_based(e.j, m)?);
            let blk = matrix_with_cols(&e.a_ij, agents[j].state_dim(), "A_ij")?;
            sc.insert((i, j), blk);
        }
        let mut oc = CouplingMap::new();
        for e in &self.output_couplings {
            let (i, j) = (one_based(e.i, m)?, one_based(e.j, m)?);
            let blk = matrix_with_cols(&e.c_ij, agents[j].state_dim(), "C_ij")?;
            oc.insert((i, j), blk);
        }
        let gc = graph_from_specs(m, &self.gc)?;
        let model = MasModel::new(agents, sc, oc, gc)?;
        for (name, declared, actual) in [("gs", &self.gs, model.gs()), ("go", &self.go, model.go())] {
            if let Some(list) = declared {
                let specs: Vec<_> = list.iter().map(|&[s, d]| EdgeSpec::Plain(s, d)).collect();
                let g = graph_from_specs(m, &specs)?;
                if &g != actual {
                    return Err(Error::Parse(format!(
                        "declared {name} edges disagree with the nonzero coupling blocks"
                    )));
                }
            }
        }
        Ok(model)
    }
}
