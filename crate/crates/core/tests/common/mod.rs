//! Helpers shared by the integration suites.
#![allow(dead_code)]

use distobs::mas::MasModel;
use distobs::observer::{self, ErrorDynamics, ObserverGains, ObserverState};
use nalgebra::{DMatrix, DVector};

/// Time derivative of the stacked errors at errors `e`, plant state `x` and
/// input `u`, computed only through the plant and observer right-hand sides.
pub fn error_rate(
    model: &MasModel,
    gains: &ObserverGains,
    ed: &ErrorDynamics,
    x: &[f64],
    u: &[f64],
    e: &[f64],
) -> Vec<f64> {
    let obs = observer::Observer::new(model, gains).unwrap();
    let flat = ed.layout.state_from_errors(&obs, x, e);
    let state = ObserverState::from_flat(model, &flat).unwrap();
    let xv = DVector::from_column_slice(x);
    let uv = DVector::from_column_slice(u);
    let y = model.plant_output(&xv).unwrap();
    let xdot = model.plant_derivative(&xv, &uv).unwrap();
    let sdot = observer::observer_derivative(model, gains, &state, &uv, &y).unwrap().to_flat();
    ed.layout.errors_from_state(&obs, xdot.as_slice(), &sdot)
}

/// Central-difference Jacobian of [`error_rate`] with respect to the errors,
/// about zero error.
pub fn fd_jacobian(model: &MasModel, gains: &ObserverGains, x: &[f64], u: &[f64], h: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let ed = observer::assemble_error_dynamics(model, gains).unwrap();
    let n = ed.layout.len();
    let mut jac = DMatrix::zeros(n, n);
    for k in 0..n {
        let mut ep = vec![0.0; n];
        ep[k] = h;
        let mut em = vec![0.0; n];
        em[k] = -h;
        let p = error_rate(model, gains, &ed, x, u, &ep);
        let m = error_rate(model, gains, &ed, x, u, &em);
        for r in 0..n {
            jac[(r, k)] = (p[r] - m[r]) / (2.0 * h);
        }
    }
    (jac, ed.r)
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

/// Largest real part of the spectrum.
pub fn abscissa(m: &DMatrix<f64>) -> f64 {
    eigs(m).iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Property-suite configuration with a fixed seed, so every run draws the
/// same cases.
pub fn config(cases: u32) -> proptest::test_runner::Config {
    proptest::test_runner::Config {
        cases,
        rng_seed: proptest::test_runner::RngSeed::Fixed(0x5eed_0b5e),
        failure_persistence: None,
        ..Default::default()
    }
}

/// Eigenvalues by nalgebra's real Schur form with a bounded iteration count;
/// panics instead of cycling when the iteration stalls.
pub fn eigs(m: &DMatrix<f64>) -> Vec<nalgebra::Complex<f64>> {
    let n = m.nrows();
    nalgebra::Schur::try_new(m.clone(), f64::EPSILON, 1000 * n.max(1))
        .expect("Schur iteration converged")
        .complex_eigenvalues()
        .iter()
        .copied()
        .collect()
}

/// Smallest singular value of `M - λI`: the backward error of `λ` as an
/// eigenvalue of `M`.
pub fn eigen_residual(m: &DMatrix<f64>, lambda: nalgebra::Complex<f64>) -> f64 {
    let n = m.nrows();
    let shifted = DMatrix::from_fn(n, n, |r, c| {
        nalgebra::Complex::new(m[(r, c)], 0.0) - if r == c { lambda } else { nalgebra::Complex::new(0.0, 0.0) }
    });
    shifted.singular_values().iter().copied().fold(f64::INFINITY, f64::min)
}

/// Numerical rank by singular values relative to the largest (or one).
pub fn rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.singular_values();
    let top = sv.max();
    sv.iter().filter(|&&s| s > 1e-9 * top.max(1.0)).count()
}

/// Rank of `[C; C A; ...; C A^(n-1)]`.
pub fn observability_rank(a: &DMatrix<f64>, c: &DMatrix<f64>) -> usize {
    let n = a.nrows();
    let p = c.nrows();
    let mut o = DMatrix::zeros(p * n, n);
    let mut block = c.clone();
    for k in 0..n {
        o.view_mut((k * p, 0), (p, n)).copy_from(&block);
        block = &block * a;
    }
    rank(&o)
}
