//! Classical fixed-step fourth-order Runge-Kutta.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Stage buffers reused across steps.
#[derive(Debug, Clone)]
pub struct Rk4Workspace<S> {
    k1: Vec<S>,
    k2: Vec<S>,
    k3: Vec<S>,
    k4: Vec<S>,
    tmp: Vec<S>,
}

impl<S: Scalar> Rk4Workspace<S> {
    pub fn new(len: usize) -> Self {
        let z = vec![S::zero(); len];
        Self {
            k1: z.clone(),
            k2: z.clone(),
            k3: z.clone(),
            k4: z.clone(),
            tmp: z,
        }
    }

    fn resize(&mut self, len: usize) {
        for v in [&mut self.k1, &mut self.k2, &mut self.k3, &mut self.k4, &mut self.tmp] {
            v.resize(len, S::zero());
        }
    }
}

/// Advances `state` from `t` to `t + dt` in place; `f(t, x, out)` writes the
/// derivative. Fails if any coordinate becomes non-finite.
pub fn rk4_step<S, F>(f: &mut F, state: &mut [S], t: f64, dt: f64, ws: &mut Rk4Workspace<S>) -> Result<()>
where
    S: Scalar,
    F: FnMut(f64, &[S], &mut [S]),
{
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Domain(format!("step size must be positive, got {dt}")));
    }
    ws.resize(state.len());
    let half = 0.5 * dt;
    f(t, state, &mut ws.k1);
    for ((o, &x), &k) in ws.tmp.iter_mut().zip(state.iter()).zip(&ws.k1) {
        *o = x + k * half;
    }
    f(t + half, &ws.tmp, &mut ws.k2);
    for ((o, &x), &k) in ws.tmp.iter_mut().zip(state.iter()).zip(&ws.k2) {
        *o = x + k * half;
    }
    f(t + half, &ws.tmp, &mut ws.k3);
    for ((o, &x), &k) in ws.tmp.iter_mut().zip(state.iter()).zip(&ws.k3) {
        *o = x + k * dt;
    }
    f(t + dt, &ws.tmp, &mut ws.k4);
    let sixth = dt / 6.0;
    for (i, x) in state.iter_mut().enumerate() {
        let incr = ws.k1[i] + (ws.k2[i] + ws.k3[i]) * 2.0 + ws.k4[i];
        *x = *x + incr * sixth;
        if !x.is_finite() {
            return Err(Error::NonFinite { t: t + dt });
        }
    }
    Ok(())
}

/// One step returning a new state.
pub fn integrate_step<S, F>(mut f: F, state: &[S], t: f64, dt: f64) -> Result<Vec<S>>
where
    S: Scalar,
    F: FnMut(f64, &[S], &mut [S]),
{
    let mut next = state.to_vec();
    let mut ws = Rk4Workspace::new(state.len());
    rk4_step(&mut f, &mut next, t, dt, &mut ws)?;
    Ok(next)
}
