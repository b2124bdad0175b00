//! Gain design: Luenberger gains by pole placement, consensus weights, and
//! the three coupling-gain policies.

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{InputMode, ObserverGains};
use crate::error::{Error, Result};
use crate::graphs::{self, DirectedGraph, WeightRule};
use crate::linalg;
use crate::mas::MasModel;

/// Default distance of the placed observer poles from the imaginary axis.
pub const DEFAULT_MARGIN: f64 = 1.0;

/// Minimum spacing enforced between placed poles.
const POLE_SEPARATION: f64 = 0.25;

/// Modulus below which a grounded block counts as singular.
const SINGULAR_TOL: f64 = 1e-10;

/// Monic characteristic polynomial coefficients `[c_0, ..., c_{n-1}]` of the
/// given roots (leading coefficient omitted).
fn poly_from_roots(roots: &[Complex<f64>]) -> Vec<f64> {
    let mut coeffs = vec![Complex::new(1.0, 0.0)];
    for &r in roots {
        let mut next = vec![Complex::new(0.0, 0.0); coeffs.len() + 1];
        for (k, &c) in coeffs.iter().enumerate() {
            next[k + 1] += c;
            next[k] -= c * r;
        }
        coeffs = next;
    }
    coeffs.pop();
    coeffs.into_iter().map(|c| c.re).collect()
}

/// Mirror the open-loop spectrum to the left of `-margin`, keeping imaginary
/// parts and pulling coincident poles apart.
fn target_poles(a: &DMatrix<f64>, margin: f64) -> Vec<Complex<f64>> {
    let mut spec = linalg::eigenvalues(a);
    linalg::sort_spectrum(&mut spec);
    let mut out: Vec<Complex<f64>> = Vec::with_capacity(spec.len());
    for z in spec {
        if z.im < -1e-12 {
            continue;
        }
        let im = if z.im.abs() <= 1e-12 { 0.0 } else { z.im };
        let mut p = Complex::new(-z.re.abs() - margin, im);
        while out.iter().any(|q| (q - p).norm() < 1e-6) {
            p.re -= POLE_SEPARATION;
        }
        out.push(p);
        if im != 0.0 {
            out.push(p.conj());
        }
    }
    out
}

fn controllability(a: &DMatrix<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut ctrb = DMatrix::zeros(n, n);
    let mut col = b.clone();
    for k in 0..n {
        ctrb.set_column(k, &col);
        col = a * &col;
    }
    ctrb
}

/// Single-input pole placement: `k` with `spec(a - b k) = poles`.
fn ackermann(a: &DMatrix<f64>, b: &DVector<f64>, coeffs: &[f64]) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let ctrb = controllability(a, b);
    let mut phi = DMatrix::<f64>::zeros(n, n);
    let mut power = DMatrix::identity(n, n);
    for &c in coeffs {
        phi += &power * c;
        power = &power * a;
    }
    phi += &power;
    let mut last = DMatrix::zeros(1, n);
    last[(0, n - 1)] = 1.0;
    // k = e_n^T ctrb^{-1} phi(a)
    let lhs = ctrb.transpose().lu().solve(&last.transpose())?;
    Some(lhs.transpose() * phi)
}

/// `F` such that every eigenvalue of `A - F C` has real part at most
/// `-margin`.
///
/// Placement runs on the dual pair `(Aᵀ, Cᵀ)`: a preliminary feedback and an
/// input direction reduce it to a single-input problem. Candidates come from
/// a fixed-seed sequence, so the result is deterministic.
pub fn design_luenberger_gain(a: &DMatrix<f64>, c: &DMatrix<f64>, margin: f64) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let p = c.nrows();
    if !(margin > 0.0 && margin.is_finite()) {
        return Err(Error::Domain(format!("margin must be positive, got {margin}")));
    }
    if !a.is_square() || c.ncols() != n {
        return Err(Error::Dimension("A must be square and C must share its columns".into()));
    }
    if !linalg::is_observable(a, c) {
        return Err(Error::UnobservablePair);
    }
    let at = a.transpose();
    let ct = c.transpose();
    let coeffs = poly_from_roots(&target_poles(a, margin));
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut best: Option<(f64, DMatrix<f64>)> = None;
    for attempt in 0..64 {
        let (k0, g) = if attempt < p {
            let mut g = DVector::zeros(p);
            g[attempt] = 1.0;
            (DMatrix::zeros(p, n), g)
        } else if attempt == p {
            (DMatrix::zeros(p, n), DVector::from_element(p, 1.0))
        } else {
            (
                DMatrix::from_fn(p, n, |_, _| rng.random_range(-1.0..1.0)),
                DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0)),
            )
        };
        let a0 = &at - &ct * &k0;
        let b = &ct * &g;
        let sv = linalg::singular_values(&controllability(&a0, &b));
        if sv.is_empty() || sv[n - 1] <= 1e-8 * sv[0] {
            continue;
        }
        let Some(k1) = ackermann(&a0, &b, &coeffs) else { continue };
        let k = k0 + &g * k1;
        let f = k.transpose();
        let abscissa = linalg::spectral_abscissa(&(a - &f * c));
        if abscissa <= -margin + 1e-7 {
            let size = f.norm();
            if best.as_ref().is_none_or(|(s, _)| size < *s) {
                best = Some((size, f));
            }
            if attempt >= p {
                break;
            }
        }
    }
    best.map(|(_, f)| f).ok_or_else(|| {
        Error::Domain("pole placement failed to reach the requested margin".into())
    })
}

/// `W^(j)` for every target agent from a weight rule.
pub fn consensus_weights(gc: &DirectedGraph, rule: WeightRule, leader_weight: f64) -> Result<Vec<DMatrix<f64>>> {
    (0..gc.node_count())
        .map(|j| Ok(graphs::augment(gc, j, leader_weight)?.reweighted(rule).weights().clone()))
        .collect()
}

/// Smallest `|λ|` over the spectra of all grounded blocks.
pub fn min_grounded_modulus(weights: &[DMatrix<f64>]) -> f64 {
    weights
        .iter()
        .flat_map(|w| {
            let l = graphs::laplacian_of_weights(w);
            let m = l.nrows() - 1;
            linalg::eigenvalues(&l.view((1, 1), (m, m)).into_owned())
        })
        .map(|z| z.norm())
        .fold(f64::INFINITY, f64::min)
}

fn max_diagonal_radius(model: &MasModel) -> f64 {
    model
        .agents()
        .iter()
        .map(|ag| linalg::spectral_radius(&ag.a))
        .fold(0.0, f64::max)
}

/// Smallest integer strictly greater than `bound`.
fn next_integer(bound: f64) -> f64 {
    bound.max(0.0).floor() + 1.0
}

/// `max_j ρ(A_jj) / min_{j,q} |λ_q(S^(j))|`.
pub fn global_bound(model: &MasModel, weights: &[DMatrix<f64>]) -> Result<f64> {
    if !graphs::is_strongly_connected(model.gc()) {
        return Err(Error::Connectivity("communication graph is not strongly connected".into()));
    }
    let lam = min_grounded_modulus(weights);
    if lam < SINGULAR_TOL {
        return Err(Error::Connectivity(format!("a grounded block is singular (min |λ| = {lam:e})")));
    }
    Ok(max_diagonal_radius(model) / lam)
}

pub fn coupling_gain_global(model: &MasModel, weights: &[DMatrix<f64>]) -> Result<f64> {
    Ok(next_integer(global_bound(model, weights)?))
}

/// `ρ ((m̄² - m̄ + 4) / 4)^(m̄-1) m̄`.
pub fn undirected_bound(rho_max: f64, m_bar: usize) -> Result<f64> {
    check_bound_args(rho_max, m_bar)?;
    let mb = m_bar as f64;
    Ok(rho_max * ((mb * mb - mb + 4.0) / 4.0).powi(m_bar as i32 - 1) * mb)
}

pub fn coupling_gain_undirected(rho_max: f64, m_bar: usize) -> Result<f64> {
    Ok(next_integer(undirected_bound(rho_max, m_bar)?))
}

/// `ρ / (1 - (1 - 1/(m̄+1)!)^(1/m̄))`.
pub fn directed_bound(rho_max: f64, m_bar: usize) -> Result<f64> {
    check_bound_args(rho_max, m_bar)?;
    Ok(rho_max / directed_grounded_lower_bound(m_bar))
}

pub fn coupling_gain_directed(rho_max: f64, m_bar: usize) -> Result<f64> {
    Ok(next_integer(directed_bound(rho_max, m_bar)?))
}

fn check_bound_args(rho_max: f64, m_bar: usize) -> Result<()> {
    if !(rho_max >= 0.0 && rho_max.is_finite()) {
        return Err(Error::Domain(format!("spectral radius must be finite and nonnegative, got {rho_max}")));
    }
    if m_bar == 0 {
        return Err(Error::Domain("maximum agent count must be positive".into()));
    }
    Ok(())
}

/// Lower bound on the smallest grounded eigenvalue for a connected undirected
/// graph with binary weights: `(1/m) (λ2 / (λ2 + 1))^(m-1)`.
pub fn undirected_grounded_lower_bound(lambda2: f64, m: usize) -> f64 {
    (lambda2 / (lambda2 + 1.0)).powi(m as i32 - 1) / m as f64
}

/// Lower bound on the smallest grounded eigenvalue modulus for a strongly
/// connected digraph with normalized weights: `1 - (1 - 1/(m+1)!)^(1/m)`.
pub fn directed_grounded_lower_bound(m: usize) -> f64 {
    let inv_fact = (2..=m + 1).fold(1.0, |acc, k| acc / k as f64);
    -((-inv_fact).ln_1p() / m as f64).exp_m1()
}

/// How the coupling gain and weights are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum GainPolicy {
    /// Fixed `μ` with the given weight rule.
    Explicit { mu: f64, rule: WeightRule },
    /// Binary weights; `μ` from the undirected worst-case bound.
    AutoUndirected { m_bar: usize },
    /// Normalized-in weights; `μ` from the directed worst-case bound.
    AutoDirected { m_bar: usize },
    /// `μ` from the actual grounded spectra under the given rule.
    Global { rule: WeightRule },
}

impl GainPolicy {
    pub fn rule(&self) -> WeightRule {
        match *self {
            GainPolicy::Explicit { rule, .. } | GainPolicy::Global { rule } => rule,
            GainPolicy::AutoUndirected { .. } => WeightRule::Binary,
            GainPolicy::AutoDirected { .. } => WeightRule::NormalizedIn,
        }
    }

    /// Whether `μ` must be recomputed when the network changes.
    pub fn depends_on_topology(&self) -> bool {
        matches!(self, GainPolicy::Global { .. })
    }
}

/// The evaluation trail behind a selected `μ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainReport {
    pub policy: GainPolicy,
    pub rho_max: f64,
    /// Algebraic connectivity (undirected policy only).
    pub lambda2: Option<f64>,
    /// Smallest grounded-block eigenvalue modulus under the chosen weights.
    pub min_grounded_modulus: f64,
    pub bound: Option<f64>,
    pub mu: f64,
}

/// Luenberger gains for every agent plus weights and `μ` from a policy.
/// Explicit `F_i` may be supplied; missing ones are designed with `margin`.
pub fn design_gains(
    model: &MasModel,
    policy: GainPolicy,
    luenberger: Option<Vec<DMatrix<f64>>>,
    margin: f64,
    input_mode: InputMode,
) -> Result<(ObserverGains, GainReport)> {
    let f = match luenberger {
        Some(f) => f,
        None => model
            .agents()
            .iter()
            .enumerate()
            .map(|(i, ag)| {
                design_luenberger_gain(&ag.a, &ag.c, margin).map_err(|e| match e {
                    Error::UnobservablePair => Error::Unobservable { agent: i },
                    other => other,
                })
            })
            .collect::<Result<Vec<_>>>()?,
    };
    // The worst-case bounds assume strong connectivity.
    if matches!(policy, GainPolicy::AutoUndirected { .. } | GainPolicy::AutoDirected { .. })
        && !graphs::is_strongly_connected(model.gc())
    {
        return Err(Error::Connectivity("communication graph is not strongly connected".into()));
    }
    let weights = consensus_weights(model.gc(), policy.rule(), 1.0)?;
    let rho_max = max_diagonal_radius(model);
    let lam = min_grounded_modulus(&weights);
    let (bound, lambda2, mu) = match policy {
        GainPolicy::Explicit { mu, .. } => (None, None, mu),
        GainPolicy::AutoUndirected { m_bar } => {
            let l2 = graphs::algebraic_connectivity(model.gc(), true).ok();
            let b = undirected_bound(rho_max, m_bar)?;
            (Some(b), l2, next_integer(b))
        }
        GainPolicy::AutoDirected { m_bar } => {
            let b = directed_bound(rho_max, m_bar)?;
            (Some(b), None, next_integer(b))
        }
        GainPolicy::Global { .. } => {
            let b = global_bound(model, &weights)?;
            (Some(b), None, next_integer(b))
        }
    };
    let gains = ObserverGains::new(model, f, mu, weights, input_mode)?;
    let report = GainReport {
        policy,
        rho_max,
        lambda2,
        min_grounded_modulus: lam,
        bound,
        mu,
    };
    Ok((gains, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
    }

    #[test]
    fn reference_gain_is_stabilizing() {
        let a = mat(2, 2, &[1.2, 1., 0., 0.8]);
        let f = mat(2, 2, &[4.2, 0., 0., 4.8]);
        let closed = &a - &f;
        assert_eq!(closed, mat(2, 2, &[-3., 1., 0., -4.]));
        let mut spec = linalg::eigenvalues(&closed);
        linalg::sort_spectrum(&mut spec);
        assert!((spec[0].re + 4.0).abs() < 1e-12 && (spec[1].re + 3.0).abs() < 1e-12);
    }

    #[test]
    fn designed_gain_meets_margin() {
        let a = mat(2, 2, &[1.2, 1., 0., 0.8]);
        let f = design_luenberger_gain(&a, &DMatrix::identity(2, 2), 1.0).unwrap();
        assert!(linalg::spectral_abscissa(&(&a - &f)) <= -1.0 + 1e-9);

        let f = design_luenberger_gain(&mat(1, 1, &[0.]), &mat(1, 1, &[1.]), 1.0).unwrap();
        assert!(f[(0, 0)] >= 1.0 - 1e-12);

        // double integrator seen through position only
        let a = mat(2, 2, &[0., 1., 0., 0.]);
        let c = mat(1, 2, &[1., 0.]);
        let f = design_luenberger_gain(&a, &c, 0.5).unwrap();
        assert!(linalg::spectral_abscissa(&(&a - &f * &c)) <= -0.5 + 1e-9);
    }

    #[test]
    fn design_is_deterministic() {
        let a = mat(3, 3, &[0.2, 1., 0., -0.4, 0.1, 1., 0.3, 0., 0.5]);
        let c = mat(2, 3, &[1., 0., 0., 0., 0., 1.]);
        assert_eq!(design_luenberger_gain(&a, &c, 1.0).unwrap(), design_luenberger_gain(&a, &c, 1.0).unwrap());
    }

    #[test]
    fn unobservable_pair_is_rejected() {
        let a = mat(2, 2, &[1., 0., 0., 2.]);
        let c = mat(1, 2, &[1., 0.]);
        assert!(matches!(design_luenberger_gain(&a, &c, 1.0), Err(Error::UnobservablePair)));
    }

    #[test]
    fn worst_case_bounds() {
        assert!((undirected_bound(1.2, 3).unwrap() - 22.5).abs() < 1e-12);
        assert_eq!(coupling_gain_undirected(1.2, 3).unwrap(), 23.0);
        assert_eq!(coupling_gain_undirected(0.0, 3).unwrap(), 1.0);
        assert!((undirected_bound(0.7, 2).unwrap() - 2.1).abs() < 1e-12);

        // 1 - (1 - 1/120)^(1/4), evaluated independently via powf
        let lam = 1.0 - (1.0f64 - 1.0 / 120.0).powf(0.25);
        let expected = 1.2 / lam;
        assert!((directed_bound(1.2, 4).unwrap() - expected).abs() < 1e-9);
        assert!((directed_bound(1.2, 4).unwrap() - 574.1969).abs() < 1e-3);
        assert_eq!(coupling_gain_directed(1.2, 4).unwrap(), 575.0);
        assert_eq!(coupling_gain_directed(0.0, 4).unwrap(), 1.0);
    }

    #[test]
    fn grounded_lower_bounds() {
        assert!((undirected_grounded_lower_bound(2.0, 2) - 1.0 / 3.0).abs() < 1e-15);
        assert!((undirected_grounded_lower_bound(1e12, 4) - 0.25).abs() < 1e-9);
        assert!((directed_grounded_lower_bound(1) - 0.5).abs() < 1e-15);
        for m in 1..10 {
            assert!(directed_grounded_lower_bound(m + 1) < directed_grounded_lower_bound(m));
        }
    }

    #[test]
    fn global_gain_scalar_case() {
        use crate::mas::{AgentBlocks, CouplingMap};
        let ag = AgentBlocks::new(mat(1, 1, &[0.3]), mat(1, 1, &[1.]), mat(1, 1, &[1.])).unwrap();
        let model = MasModel::new(vec![ag], CouplingMap::new(), CouplingMap::new(), DirectedGraph::empty(1).unwrap()).unwrap();
        let w = consensus_weights(model.gc(), WeightRule::Binary, 1.0).unwrap();
        assert!((global_bound(&model, &w).unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(coupling_gain_global(&model, &w).unwrap(), 1.0);
    }

    #[test]
    fn global_gain_needs_strong_connectivity() {
        use crate::mas::{AgentBlocks, CouplingMap};
        let ag = || AgentBlocks::new(mat(1, 1, &[0.3]), mat(1, 1, &[1.]), mat(1, 1, &[1.])).unwrap();
        let gc = DirectedGraph::from_edges(2, &[(0, 1)]).unwrap();
        let model = MasModel::new(vec![ag(), ag()], CouplingMap::new(), CouplingMap::new(), gc).unwrap();
        let w = consensus_weights(model.gc(), WeightRule::Binary, 1.0).unwrap();
        assert!(matches!(coupling_gain_global(&model, &w), Err(Error::Connectivity(_))));
    }
}
