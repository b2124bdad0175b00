//! Distributed observer: every agent `i` keeps an estimate `x̂^(i)` of the
//! whole network state and an auxiliary Luenberger estimate `x̄_i` of its own
//! state, and runs
//!
//! ```text
//! x̂_j^(i)' = A_jj x̂_j^(i) + B_jj u_j + Σ_l A_jl x̂_l^(i) + μ Σ_l w_il^(j) (x̂_j^(l) - x̂_j^(i))     (j != i)
//! x̂_i^(i)' = A_ii x̂_i^(i) + B_ii u_i + Σ_l A_il x̂_l^(i) + μ [w_i0^(i) (x̄_i - x̂_i^(i)) + Σ_l w_il^(i) (x̂_i^(l) - x̂_i^(i))]
//! x̄_i'     = A_ii x̄_i + B_ii u_i + Σ_l A_il x̂_l^(i) + F_i [y_i - C_ii x̄_i - Σ_l C_il x̂_l^(i)]
//! ```
//!
//! The flat observer state stores `x̂^(0), ..., x̂^(m-1)` (each of length `n`)
//! followed by `x̄_0, ..., x̄_{m-1}`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphs::{self, WeightRule};
use crate::linalg;
use crate::mas::MasModel;
use crate::scalar::{gemv_acc, Scalar};

mod dynamics;
mod gains;
mod iss;

pub use dynamics::{
    assemble_error_dynamics, disturbance_matrix, is_hurwitz, Disturbance, ErrorDynamics, ErrorLayout,
    HURWITZ_TOL,
};
pub use gains::{
    consensus_weights, coupling_gain_directed, coupling_gain_global, coupling_gain_undirected,
    design_gains, design_luenberger_gain, directed_bound, global_bound, undirected_grounded_lower_bound,
    directed_grounded_lower_bound, min_grounded_modulus, undirected_bound, GainPolicy, GainReport,
    DEFAULT_MARGIN,
};
pub use iss::{envelope_fit, iss_error_bound, matrix_exp_norms, Envelope};

/// Which inputs the estimators of other agents may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputMode {
    /// Every agent knows every input.
    Full,
    /// Agent `i` knows only `u_i`; estimates of other agents run without input.
    OwnOnly,
}

/// Everything the observer needs beyond the plant.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverGains {
    /// `F_i`, `n_i x p_i`.
    pub luenberger: Vec<DMatrix<f64>>,
    pub mu: f64,
    /// `W^(j)`, `(m+1) x (m+1)`, node 0 is the virtual leader.
    pub weights: Vec<DMatrix<f64>>,
    pub input_mode: InputMode,
}

impl ObserverGains {
    /// Validated gains: `F_i` shapes, `μ > 0`, weights edge-compatible with
    /// every augmented graph, and each `A_ii - F_i C_ii` Hurwitz.
    pub fn new(
        model: &MasModel,
        luenberger: Vec<DMatrix<f64>>,
        mu: f64,
        weights: Vec<DMatrix<f64>>,
        input_mode: InputMode,
    ) -> Result<Self> {
        let gains = Self {
            luenberger,
            mu,
            weights,
            input_mode,
        };
        gains.validate(model)?;
        Ok(gains)
    }

    /// Same as [`ObserverGains::new`] but built from a weight rule.
    pub fn from_rule(
        model: &MasModel,
        luenberger: Vec<DMatrix<f64>>,
        mu: f64,
        rule: WeightRule,
        leader_weight: f64,
        input_mode: InputMode,
    ) -> Result<Self> {
        let weights = consensus_weights(model.gc(), rule, leader_weight)?;
        Self::new(model, luenberger, mu, weights, input_mode)
    }

    pub fn validate(&self, model: &MasModel) -> Result<()> {
        self.check_structure(model)?;
        for (i, f) in self.luenberger.iter().enumerate() {
            let ag = model.agent(i);
            let closed = &ag.a - f * &ag.c;
            if !is_hurwitz(&closed, HURWITZ_TOL) {
                return Err(Error::Domain(format!(
                    "A_ii - F_i C_ii is not Hurwitz for agent {i} (spectral abscissa {})",
                    linalg::spectral_abscissa(&closed)
                )));
            }
        }
        Ok(())
    }

    /// Shape, sign and edge-set checks only; the Luenberger blocks may be
    /// unstable.
    pub fn check_structure(&self, model: &MasModel) -> Result<()> {
        let m = model.agent_count();
        if self.luenberger.len() != m || self.weights.len() != m {
            return Err(Error::Dimension(format!(
                "gains list {} Luenberger gains and {} weight matrices for {m} agents",
                self.luenberger.len(),
                self.weights.len()
            )));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::Domain(format!("coupling gain must be positive, got {}", self.mu)));
        }
        for (i, f) in self.luenberger.iter().enumerate() {
            let ag = model.agent(i);
            if f.shape() != (ag.state_dim(), ag.output_dim()) {
                return Err(Error::Dimension(format!(
                    "F_{i} must be {:?}, got {:?}",
                    (ag.state_dim(), ag.output_dim()),
                    f.shape()
                )));
            }
        }
        for (j, w) in self.weights.iter().enumerate() {
            let leader = if w.shape() == (m + 1, m + 1) { w[(j + 1, 0)] } else { 1.0 };
            let ag = graphs::augment(model.gc(), j, leader.max(f64::MIN_POSITIVE))?;
            ag.with_weights(w.clone()).map_err(|e| {
                Error::Domain(format!("weights for target agent {j} are invalid: {e}"))
            })?;
        }
        Ok(())
    }

    /// `S^(j)` for every target agent.
    pub fn grounded_blocks(&self) -> Vec<graphs::GroundedBlocks> {
        self.weights
            .iter()
            .map(|w| {
                let l = graphs::laplacian_of_weights(w);
                let m = l.nrows() - 1;
                graphs::GroundedBlocks {
                    leader_column: -l.view((1, 0), (m, 1)).column(0).into_owned(),
                    follower_block: l.view((1, 1), (m, m)).into_owned(),
                }
            })
            .collect()
    }

    pub fn to_file(&self) -> GainsFile {
        GainsFile {
            luenberger: self.luenberger.iter().map(linalg::matrix_to_rows).collect(),
            mu: self.mu,
            weights: self.weights.iter().map(linalg::matrix_to_rows).collect(),
            input_mode: self.input_mode,
        }
    }
}

/// Serialized gains; weight matrices keep the leader at row/column 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainsFile {
    #[serde(rename = "F")]
    pub luenberger: Vec<Vec<Vec<f64>>>,
    pub mu: f64,
    pub weights: Vec<Vec<Vec<f64>>>,
    pub input_mode: InputMode,
}

impl GainsFile {
    pub fn into_gains(self, model: &MasModel) -> Result<ObserverGains> {
        let m = model.agent_count();
        let mut f = Vec::with_capacity(self.luenberger.len());
        for (i, rows) in self.luenberger.iter().enumerate() {
            let ag = model.agents().get(i).ok_or(Error::Index { index: i, len: m })?;
            let mat = if rows.is_empty() {
                DMatrix::zeros(0, ag.output_dim())
            } else {
                crate::mas::matrix_with_cols(rows, ag.output_dim(), &format!("F_{}", i + 1))?
            };
            f.push(mat);
        }
        let weights = self
            .weights
            .iter()
            .map(|rows| crate::mas::matrix_with_cols(rows, m + 1, "weight matrix"))
            .collect::<Result<Vec<_>>>()?;
        ObserverGains::new(model, f, self.mu, weights, self.input_mode)
    }
}

/// Per-agent estimates, split by target agent.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverState {
    /// `xhat[i][j]` is `x̂_j^(i)`.
    pub xhat: Vec<Vec<DVector<f64>>>,
    /// `xbar[i]` is `x̄_i`.
    pub xbar: Vec<DVector<f64>>,
}

impl ObserverState {
    pub fn zeros(model: &MasModel) -> Self {
        let dims = model.state_dims();
        let m = dims.len();
        Self {
            xhat: (0..m)
                .map(|_| dims.iter().map(|&n| DVector::zeros(n)).collect())
                .collect(),
            xbar: dims.iter().map(|&n| DVector::zeros(n)).collect(),
        }
    }

    /// Every estimate equal to the stacked state `x`.
    pub fn at_truth(model: &MasModel, x: &DVector<f64>) -> Self {
        let so = model.state_offsets();
        let parts: Vec<DVector<f64>> = (0..model.agent_count())
            .map(|j| x.rows(so[j], so[j + 1] - so[j]).into_owned())
            .collect();
        Self {
            xhat: vec![parts.clone(); model.agent_count()],
            xbar: parts,
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for per_agent in &self.xhat {
            for v in per_agent {
                out.extend(v.iter());
            }
        }
        for v in &self.xbar {
            out.extend(v.iter());
        }
        out
    }

    pub fn from_flat(model: &MasModel, flat: &[f64]) -> Result<Self> {
        let dims = model.state_dims();
        let m = dims.len();
        let n: usize = dims.iter().sum();
        if flat.len() != m * n + n {
            return Err(Error::Dimension(format!(
                "observer state has length {}, expected {}",
                flat.len(),
                m * n + n
            )));
        }
        let mut pos = 0;
        let mut take = |k: usize| {
            let v = DVector::from_column_slice(&flat[pos..pos + k]);
            pos += k;
            v
        };
        let xhat = (0..m).map(|_| dims.iter().map(|&d| take(d)).collect()).collect();
        let xbar = dims.iter().map(|&d| take(d)).collect();
        Ok(Self { xhat, xbar })
    }
}

/// Precomputed observer for one model/gain pair.
#[derive(Debug, Clone)]
pub struct Observer {
    model: MasModel,
    gains: ObserverGains,
    so: Vec<usize>,
    io: Vec<usize>,
    oo: Vec<usize>,
    n: usize,
    /// `consensus[j][i]`: `(l, w_il^(j))` over communication in-neighbours.
    consensus: Vec<Vec<Vec<(usize, f64)>>>,
    leader: Vec<f64>,
    /// `state_in[j]`: `(l, A_jl)`; `output_in[j]`: `(l, C_jl)`.
    state_in: Vec<Vec<(usize, DMatrix<f64>)>>,
    output_in: Vec<Vec<(usize, DMatrix<f64>)>>,
}

impl Observer {
    pub fn new(model: &MasModel, gains: &ObserverGains) -> Result<Self> {
        gains.validate(model)?;
        let m = model.agent_count();
        let consensus = (0..m)
            .map(|j| {
                let w = &gains.weights[j];
                (0..m)
                    .map(|i| {
                        (0..m)
                            .filter(|&l| w[(i + 1, l + 1)] > 0.0)
                            .map(|l| (l, w[(i + 1, l + 1)]))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let leader = (0..m).map(|j| gains.weights[j][(j + 1, 0)]).collect();
        let mut state_in = vec![Vec::new(); m];
        for (&(i, l), blk) in model.state_couplings() {
            state_in[i].push((l, blk.clone()));
        }
        let mut output_in = vec![Vec::new(); m];
        for (&(i, l), blk) in model.output_couplings() {
            output_in[i].push((l, blk.clone()));
        }
        Ok(Self {
            state_in,
            output_in,
            so: model.state_offsets(),
            io: model.input_offsets(),
            oo: model.output_offsets(),
            n: model.total_state_dim(),
            model: model.clone(),
            gains: gains.clone(),
            consensus,
            leader,
        })
    }

    pub fn model(&self) -> &MasModel {
        &self.model
    }

    pub fn gains(&self) -> &ObserverGains {
        &self.gains
    }

    pub fn state_len(&self) -> usize {
        self.model.agent_count() * self.n + self.n
    }

    /// Offset of `x̂_j^(i)` in the flat state.
    pub fn xhat_offset(&self, i: usize, j: usize) -> usize {
        i * self.n + self.so[j]
    }

    /// Offset of `x̄_j` in the flat state.
    pub fn xbar_offset(&self, j: usize) -> usize {
        self.model.agent_count() * self.n + self.so[j]
    }

    /// Observer right-hand side on the flat state; `u` is the full stacked
    /// input (own-only mode ignores the entries an agent cannot see).
    pub fn derivative_into<S: Scalar>(&self, state: &[S], u: &[S], y: &[S], out: &mut [S]) {
        let m = self.model.agent_count();
        let mu = self.gains.mu;
        let full = self.gains.input_mode == InputMode::Full;
        out.fill(S::zero());
        let range = |off: usize, j: usize| off..off + (self.so[j + 1] - self.so[j]);
        for i in 0..m {
            for j in 0..m {
                let own = range(self.xhat_offset(i, j), j);
                let aj = self.model.agent(j);
                let o = &mut out[own.clone()];
                gemv_acc(o, 1.0, &aj.a, &state[own.clone()]);
                if full || i == j {
                    gemv_acc(o, 1.0, &aj.b, &u[self.io[j]..self.io[j + 1]]);
                }
                for &(l, ref blk) in &self.state_in[j] {
                    gemv_acc(o, 1.0, blk, &state[range(self.xhat_offset(i, l), l)]);
                }
                let mut total_w = 0.0;
                for &(l, w) in &self.consensus[j][i] {
                    total_w += w;
                    let src = range(self.xhat_offset(l, j), j);
                    for (ok, &v) in o.iter_mut().zip(&state[src]) {
                        *ok = *ok + v * (mu * w);
                    }
                }
                if i == j {
                    let w0 = self.leader[j];
                    total_w += w0;
                    let src = range(self.xbar_offset(j), j);
                    for (ok, &v) in o.iter_mut().zip(&state[src]) {
                        *ok = *ok + v * (mu * w0);
                    }
                }
                if total_w != 0.0 {
                    for (ok, &v) in o.iter_mut().zip(&state[own]) {
                        *ok = *ok - v * (mu * total_w);
                    }
                }
            }
        }
        for i in 0..m {
            let ag = self.model.agent(i);
            let bar = range(self.xbar_offset(i), i);
            let o = &mut out[bar.clone()];
            gemv_acc(o, 1.0, &ag.a, &state[bar.clone()]);
            gemv_acc(o, 1.0, &ag.b, &u[self.io[i]..self.io[i + 1]]);
            for &(l, ref blk) in &self.state_in[i] {
                gemv_acc(o, 1.0, blk, &state[range(self.xhat_offset(i, l), l)]);
            }
            let mut innovation: Vec<S> = y[self.oo[i]..self.oo[i + 1]].to_vec();
            gemv_acc(&mut innovation, -1.0, &ag.c, &state[bar.clone()]);
            for &(l, ref blk) in &self.output_in[i] {
                gemv_acc(&mut innovation, -1.0, blk, &state[range(self.xhat_offset(i, l), l)]);
            }
            gemv_acc(o, 1.0, &self.gains.luenberger[i], &innovation);
        }
    }
}

/// One evaluation of the observer right-hand side.
pub fn observer_derivative(
    model: &MasModel,
    gains: &ObserverGains,
    state: &ObserverState,
    u: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<ObserverState> {
    if u.len() != model.total_input_dim() || y.len() != model.total_output_dim() {
        return Err(Error::Dimension(format!(
            "input/output lengths {}/{} do not match model {}/{}",
            u.len(),
            y.len(),
            model.total_input_dim(),
            model.total_output_dim()
        )));
    }
    let obs = Observer::new(model, gains)?;
    let flat = state.to_flat();
    if flat.len() != obs.state_len() {
        return Err(Error::Dimension("observer state does not match the model".into()));
    }
    let mut out = vec![0.0; flat.len()];
    obs.derivative_into(&flat, u.as_slice(), y.as_slice(), &mut out);
    ObserverState::from_flat(model, &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::DirectedGraph;
    use crate::mas::{AgentBlocks, CouplingMap};

    fn mat(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
    }

    fn three_agent() -> MasModel {
        let agents = vec![
            AgentBlocks::new(mat(2, 2, &[1.2, 1., 0., 0.8]), DMatrix::identity(2, 2), DMatrix::identity(2, 2)).unwrap(),
            AgentBlocks::new(mat(1, 1, &[1.03]), mat(1, 1, &[1.]), mat(1, 1, &[1.])).unwrap(),
            AgentBlocks::new(mat(1, 1, &[0.3]), mat(1, 1, &[1.]), mat(1, 1, &[1.])).unwrap(),
        ];
        let sc = CouplingMap::from([((1, 0), mat(1, 2, &[0.8, 1.]))]);
        let oc = CouplingMap::from([((1, 0), mat(1, 2, &[0.8, 1.2]))]);
        let gc = DirectedGraph::from_edges(3, &[(0, 1), (1, 2), (2, 0)]).unwrap();
        MasModel::new(agents, sc, oc, gc).unwrap()
    }

    fn three_agent_gains(model: &MasModel, mode: InputMode) -> ObserverGains {
        let f = vec![mat(2, 2, &[4.2, 0., 0., 4.8]), mat(1, 1, &[3.]), mat(1, 1, &[2.])];
        ObserverGains::from_rule(model, f, 10.0, WeightRule::Binary, 1.0, mode).unwrap()
    }

    #[test]
    fn truth_is_a_fixed_point() {
        let model = three_agent();
        let gains = three_agent_gains(&model, InputMode::Full);
        let x = DVector::from_row_slice(&[0.5, -0.5, 0.5, 0.5]);
        let u = DVector::from_row_slice(&[0.1, -0.2, 0.3, 0.4]);
        let y = model.plant_output(&x).unwrap();
        let xdot = model.plant_derivative(&x, &u).unwrap();
        let d = observer_derivative(&model, &gains, &ObserverState::at_truth(&model, &x), &u, &y).unwrap();
        let expected = ObserverState::at_truth(&model, &xdot);
        assert!(linalg::column(&d.to_flat()).relative_eq(&linalg::column(&expected.to_flat()), 1e-14, 1e-14));
    }

    #[test]
    fn own_only_drops_foreign_inputs() {
        let model = three_agent();
        let gains = three_agent_gains(&model, InputMode::OwnOnly);
        let u = DVector::from_row_slice(&[1.0, 0.0, 0.0, 0.0]);
        let y = DVector::zeros(4);
        let d = observer_derivative(&model, &gains, &ObserverState::zeros(&model), &u, &y).unwrap();
        // agent 0 sees its own input in both estimates of itself
        assert_eq!(d.xhat[0][0][0], 1.0);
        assert_eq!(d.xbar[0][0], 1.0);
        // others do not
        assert_eq!(d.xhat[1][0][0], 0.0);
        assert_eq!(d.xhat[2][0][0], 0.0);
    }

    #[test]
    fn rejects_non_hurwitz_luenberger_block() {
        let model = three_agent();
        let f = vec![DMatrix::zeros(2, 2), mat(1, 1, &[3.]), mat(1, 1, &[2.])];
        assert!(ObserverGains::from_rule(&model, f, 10.0, WeightRule::Binary, 1.0, InputMode::Full).is_err());
    }

    #[test]
    fn rejects_weights_off_the_edge_set() {
        let model = three_agent();
        let f = vec![mat(2, 2, &[4.2, 0., 0., 4.8]), mat(1, 1, &[3.]), mat(1, 1, &[2.])];
        let mut w = consensus_weights(model.gc(), WeightRule::Binary, 1.0).unwrap();
        w[0][(2, 3)] = 1.0; // 2 -> 1 is not a communication edge
        assert!(ObserverGains::new(&model, f, 10.0, w, InputMode::Full).is_err());
    }

    #[test]
    fn gains_file_round_trip() {
        let model = three_agent();
        let gains = three_agent_gains(&model, InputMode::Full);
        let text = serde_json::to_string(&gains.to_file()).unwrap();
        let back: GainsFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back.into_gains(&model).unwrap(), gains);
    }

    #[test]
    fn flat_state_round_trip() {
        let model = three_agent();
        let flat: Vec<f64> = (0..model.agent_count() * 4 + 4).map(|k| k as f64).collect();
        let st = ObserverState::from_flat(&model, &flat).unwrap();
        assert_eq!(st.xhat[1][0].as_slice(), &[4.0, 5.0]);
        assert_eq!(st.xbar[2][0], 15.0);
        assert_eq!(st.to_flat(), flat);
    }
}
