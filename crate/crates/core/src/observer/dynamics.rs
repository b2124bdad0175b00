//! Stacked estimation-error dynamics.
//!
//! With `ē_j = x̄_j - x_j` and `e_j^(i) = x̂_j^(i) - x_j`, the errors about agent
//! `j` form `E_j = [ē_j; e_j^(0); ...; e_j^(m-1)]` and obey
//! `E_j' = T^(j) E_j + Σ_l Q^(jl) E_l`, where
//!
//! ```text
//! T^(j)  = [[A_jj - F_j C_jj, 0], [μ O^(j) ⊗ I, I_m ⊗ A_jj - μ S^(j) ⊗ I]]
//! Q^(jl) = [[0, b_jᵀ ⊗ (A_jl - F_j C_jl)], [0, I_m ⊗ A_jl]]
//! ```
//!
//! with absent coupling blocks read as zero. Stacking the `E_j` along a common
//! topological ordering makes the full matrix `R` block lower triangular.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use super::{Observer, ObserverGains, InputMode};
use crate::error::Result;
use crate::linalg;
use crate::mas::MasModel;
use crate::scalar::Scalar;

/// Default absolute margin on real parts for Hurwitz checks.
pub const HURWITZ_TOL: f64 = 1e-9;

/// True iff every eigenvalue has real part below `-tol`.
pub fn is_hurwitz(m: &DMatrix<f64>, tol: f64) -> bool {
    m.nrows() == 0 || linalg::spectral_abscissa(m) < -tol
}

/// Position of every error component inside the stacked vector `Ẽ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorLayout {
    pub ordering: Vec<usize>,
    dims: Vec<usize>,
    /// Offset of `E_j` in `Ẽ`, indexed by agent.
    block_offsets: Vec<usize>,
    len: usize,
}

impl ErrorLayout {
    pub fn new(model: &MasModel, ordering: Vec<usize>) -> Self {
        let dims = model.state_dims();
        let m = dims.len();
        let mut block_offsets = vec![0; m];
        let mut pos = 0;
        for &j in &ordering {
            block_offsets[j] = pos;
            pos += (m + 1) * dims[j];
        }
        Self {
            ordering,
            dims,
            block_offsets,
            len: pos,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn block(&self, j: usize) -> (usize, usize) {
        (self.block_offsets[j], (self.dims.len() + 1) * self.dims[j])
    }

    /// Offset of `ē_j`.
    pub fn bar(&self, j: usize) -> usize {
        self.block_offsets[j]
    }

    /// Offset of `e_j^(i)`.
    pub fn est(&self, j: usize, i: usize) -> usize {
        self.block_offsets[j] + (1 + i) * self.dims[j]
    }

    pub fn dim(&self, j: usize) -> usize {
        self.dims[j]
    }

    /// `Ẽ` from the plant state and the flat observer state; differences are
    /// taken in the working precision before rounding.
    pub fn errors_from_state<S: Scalar>(&self, obs: &Observer, x: &[S], state: &[S]) -> Vec<f64> {
        let so = obs.model().state_offsets();
        let m = self.dims.len();
        let mut out = vec![0.0; self.len];
        for j in 0..m {
            let nj = self.dims[j];
            for k in 0..nj {
                let xj = x[so[j] + k];
                out[self.bar(j) + k] = (state[obs.xbar_offset(j) + k] - xj).to_f64();
                for i in 0..m {
                    out[self.est(j, i) + k] = (state[obs.xhat_offset(i, j) + k] - xj).to_f64();
                }
            }
        }
        out
    }

    /// Flat observer state whose errors against `x` equal `e`.
    pub fn state_from_errors(&self, obs: &Observer, x: &[f64], e: &[f64]) -> Vec<f64> {
        let so = obs.model().state_offsets();
        let m = self.dims.len();
        let mut state = vec![0.0; obs.state_len()];
        for j in 0..m {
            for k in 0..self.dims[j] {
                let xj = x[so[j] + k];
                state[obs.xbar_offset(j) + k] = xj + e[self.bar(j) + k];
                for i in 0..m {
                    state[obs.xhat_offset(i, j) + k] = xj + e[self.est(j, i) + k];
                }
            }
        }
        state
    }

    /// `‖e_j^(i)‖` for a stacked error vector.
    pub fn pair_norm(&self, e: &[f64], i: usize, j: usize) -> f64 {
        let o = self.est(j, i);
        e[o..o + self.dims[j]].iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `‖ē_j‖` for a stacked error vector.
    pub fn bar_norm(&self, e: &[f64], j: usize) -> f64 {
        let o = self.bar(j);
        e[o..o + self.dims[j]].iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorDynamics {
    /// `T^(j)` indexed by agent.
    pub t: Vec<DMatrix<f64>>,
    /// `Q^(jl)` for every coupled pair.
    pub q: BTreeMap<(usize, usize), DMatrix<f64>>,
    pub r: DMatrix<f64>,
    pub layout: ErrorLayout,
    /// Blocks follow a common topological ordering of `G_s ∪ G_o`.
    pub triangular: bool,
}

impl ErrorDynamics {
    pub fn ordering(&self) -> &[usize] {
        &self.layout.ordering
    }

    pub fn is_hurwitz(&self, tol: f64) -> bool {
        is_hurwitz(&self.r, tol)
    }
}

fn kron_identity(m: usize, a: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::<f64>::identity(m, m).kronecker(a)
}

/// Assembles `T^(j)`, `Q^(jl)` and `R`. Blocks follow the common topological
/// ordering when one exists (then `R` is block lower triangular) and agent
/// order otherwise. Unstable Luenberger blocks are allowed.
pub fn assemble_error_dynamics(model: &MasModel, gains: &ObserverGains) -> Result<ErrorDynamics> {
    gains.check_structure(model)?;
    let m = model.agent_count();
    let (ordering, triangular) = match model.check_topological_consistency() {
        Ok(order) => (order, true),
        Err(_) => ((0..m).collect(), false),
    };
    let layout = ErrorLayout::new(model, ordering);
    let mu = gains.mu;
    let blocks = gains.grounded_blocks();
    let mut t = Vec::with_capacity(m);
    for j in 0..m {
        let ag = model.agent(j);
        let nj = ag.state_dim();
        let size = (m + 1) * nj;
        let mut tj = DMatrix::zeros(size, size);
        let eye = DMatrix::<f64>::identity(nj, nj);
        tj.view_mut((0, 0), (nj, nj))
            .copy_from(&(&ag.a - &gains.luenberger[j] * &ag.c));
        let o = DMatrix::from_column_slice(m, 1, blocks[j].leader_column.as_slice());
        tj.view_mut((nj, 0), (m * nj, nj)).copy_from(&(o.kronecker(&eye) * mu));
        let lower = kron_identity(m, &ag.a) - blocks[j].follower_block.kronecker(&eye) * mu;
        tj.view_mut((nj, nj), (m * nj, m * nj)).copy_from(&lower);
        t.push(tj);
    }
    let mut q = BTreeMap::new();
    for j in 0..m {
        let nj = model.agent(j).state_dim();
        for l in model.coupling_neighbors(j) {
            let nl = model.agent(l).state_dim();
            let a_jl = model.a(j, l).cloned().unwrap_or_else(|| DMatrix::zeros(nj, nl));
            let c_jl = model
                .c(j, l)
                .cloned()
                .unwrap_or_else(|| DMatrix::zeros(model.agent(j).output_dim(), nl));
            let mut qjl = DMatrix::zeros((m + 1) * nj, (m + 1) * nl);
            qjl.view_mut((0, (1 + j) * nl), (nj, nl))
                .copy_from(&(&a_jl - &gains.luenberger[j] * &c_jl));
            qjl.view_mut((nj, nl), (m * nj, m * nl)).copy_from(&kron_identity(m, &a_jl));
            q.insert((j, l), qjl);
        }
    }
    let mut r = DMatrix::zeros(layout.len(), layout.len());
    for j in 0..m {
        let (oj, sj) = layout.block(j);
        r.view_mut((oj, oj), (sj, sj)).copy_from(&t[j]);
    }
    for (&(j, l), blk) in &q {
        let (oj, sj) = layout.block(j);
        let (ol, sl) = layout.block(l);
        debug_assert!(!triangular || ol < oj);
        r.view_mut((oj, ol), (sj, sl)).copy_from(blk);
    }
    Ok(ErrorDynamics { t, q, r, layout, triangular })
}

/// Exogenous signals entering the error dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Disturbance {
    /// Inputs of other agents that an own-only estimator cannot see; columns
    /// follow the stacked input. Zero under full input knowledge.
    HiddenInput,
    /// Additive plant noise `w` in `x' = A x + B u + w`; columns follow `x`.
    ProcessNoise,
    /// Additive output noise `v` in `y = C x + v`; columns follow `y`.
    MeasurementNoise,
}

/// Matrix `G` with `Ẽ' = R Ẽ + G d`, `d` the concatenation of the requested
/// disturbance channels.
pub fn disturbance_matrix(
    model: &MasModel,
    gains: &ObserverGains,
    layout: &ErrorLayout,
    channels: &[Disturbance],
) -> DMatrix<f64> {
    let m = model.agent_count();
    let so = model.state_offsets();
    let io = model.input_offsets();
    let oo = model.output_offsets();
    let widths: Vec<usize> = channels
        .iter()
        .map(|c| match c {
            Disturbance::HiddenInput => model.total_input_dim(),
            Disturbance::ProcessNoise => model.total_state_dim(),
            Disturbance::MeasurementNoise => model.total_output_dim(),
        })
        .collect();
    let mut g = DMatrix::zeros(layout.len(), widths.iter().sum());
    let mut col = 0;
    for (ch, width) in channels.iter().zip(widths) {
        for j in 0..m {
            let ag = model.agent(j);
            let nj = ag.state_dim();
            match ch {
                Disturbance::HiddenInput => {
                    if gains.input_mode == InputMode::OwnOnly {
                        for i in (0..m).filter(|&i| i != j) {
                            g.view_mut((layout.est(j, i), col + io[j]), ag.b.shape())
                                .copy_from(&(-&ag.b));
                        }
                    }
                }
                Disturbance::ProcessNoise => {
                    let neg = -DMatrix::<f64>::identity(nj, nj);
                    g.view_mut((layout.bar(j), col + so[j]), (nj, nj)).copy_from(&neg);
                    for i in 0..m {
                        g.view_mut((layout.est(j, i), col + so[j]), (nj, nj)).copy_from(&neg);
                    }
                }
                Disturbance::MeasurementNoise => {
                    let f = &gains.luenberger[j];
                    g.view_mut((layout.bar(j), col + oo[j]), f.shape()).copy_from(f);
                }
            }
        }
        col += width;
    }
    g
}
