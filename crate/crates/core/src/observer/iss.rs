//! Exponential envelopes `‖exp(R t)‖ <= κ e^{-η t}` and the resulting
//! input-to-state bound
//! `‖Ẽ(t)‖ <= κ e^{-η t} ‖Ẽ(0)‖ + κ ‖G‖ ū (1 - e^{-η t}) / η`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub kappa: f64,
    pub eta: f64,
}

impl Envelope {
    pub fn at(&self, t: f64) -> f64 {
        self.kappa * (-self.eta * t).exp()
    }
}

/// `(t_k, ‖exp(R t_k)‖)` on `samples` evenly spaced points of `[0, t_end]`.
pub fn matrix_exp_norms(r: &DMatrix<f64>, t_end: f64, samples: usize) -> Vec<(f64, f64)> {
    let denom = samples.saturating_sub(1).max(1) as f64;
    (0..samples)
        .map(|k| {
            let t = t_end * k as f64 / denom;
            (t, linalg::norm2(&(r * t).exp()))
        })
        .collect()
}

/// Least-squares slope of `ln y` against `t`.
fn log_linear_slope(samples: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|(_, y)| *y > 0.0 && y.is_finite())
        .map(|&(t, y)| (t, y.ln()))
        .collect();
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt) * (p.0 - mt)).sum();
    sxy / sxx
}

/// Fits an envelope to `‖exp(R t)‖` sampled 200 times on `[0, 20]`.
///
/// `η` is 0.9 of the smaller of the fitted decay rate and the spectral gap;
/// `κ` is then the least value covering every sample. Fails unless `R` is
/// Hurwitz.
pub fn envelope_fit(r: &DMatrix<f64>) -> Result<Envelope> {
    let gap = -linalg::spectral_abscissa(r);
    if !(gap > 0.0) {
        return Err(Error::Domain(format!("matrix is not Hurwitz (spectral abscissa {})", -gap)));
    }
    let samples = matrix_exp_norms(r, 20.0, 200);
    let decay = -log_linear_slope(&samples);
    let rate = if decay > 0.0 { decay.min(gap) } else { gap };
    let eta = 0.9 * rate;
    let kappa = samples
        .iter()
        .map(|&(t, n)| n * (eta * t).exp())
        .fold(1.0, f64::max);
    Ok(Envelope { kappa, eta })
}

/// Right-hand side of the input-to-state bound at time `t`.
pub fn iss_error_bound(env: Envelope, e0: f64, g_norm: f64, u_bar: f64, t: f64) -> Result<f64> {
    if !(env.eta > 0.0) {
        return Err(Error::Domain(format!("decay rate must be positive, got {}", env.eta)));
    }
    let decay = (-env.eta * t).exp();
    Ok(env.kappa * decay * e0 + env.kappa * g_norm * u_bar * (-(-env.eta * t).exp_m1()) / env.eta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_envelope_is_exact() {
        let r = DMatrix::from_element(1, 1, -2.0);
        let env = envelope_fit(&r).unwrap();
        assert!((env.eta - 1.8).abs() < 1e-9);
        assert!((env.kappa - 1.0).abs() < 1e-12);
    }

    #[test]
    fn envelope_covers_non_normal_transient() {
        let r = DMatrix::from_row_slice(2, 2, &[-1.0, 30.0, 0.0, -1.0]);
        let env = envelope_fit(&r).unwrap();
        assert!(env.kappa > 1.0);
        for (t, n) in matrix_exp_norms(&r, 20.0, 200) {
            assert!(n <= env.at(t) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn rejects_unstable() {
        assert!(envelope_fit(&DMatrix::from_element(1, 1, 0.1)).is_err());
        let env = Envelope { kappa: 1.0, eta: 0.0 };
        assert!(iss_error_bound(env, 1.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn bound_interpolates_between_initial_and_steady_state() {
        let env = Envelope { kappa: 2.0, eta: 0.5 };
        assert_eq!(iss_error_bound(env, 3.0, 1.0, 1.0, 0.0).unwrap(), 6.0);
        let far = iss_error_bound(env, 3.0, 1.5, 0.2, 1e3).unwrap();
        assert!((far - 2.0 * 1.5 * 0.2 / 0.5).abs() < 1e-12);
    }
}
