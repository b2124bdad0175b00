//! Comparisons of recorded error norms with envelope and input-to-state
//! bounds derived from the error matrix `R`.

use serde::{Deserialize, Serialize};

use super::trace::{norm, SimulationTrace};
use crate::error::{Error, Result};
use crate::linalg;
use crate::observer::{self, Disturbance, Envelope};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub envelope: Envelope,
    /// `‖G‖` of the disturbance channels.
    pub g_norm: f64,
    /// Sup norm of the stacked disturbance.
    pub u_bar: f64,
    pub e0: f64,
    /// Largest `‖Ẽ(t)‖ / bound(t)` over the samples.
    pub worst_ratio: f64,
    /// Time of the largest ratio.
    pub worst_time: f64,
}

impl BoundCheck {
    /// Every sample lies within `(1 + slack)` times the bound.
    pub fn holds(&self, slack: f64) -> bool {
        self.worst_ratio <= 1.0 + slack
    }
}

fn single_segment(trace: &SimulationTrace) -> Result<()> {
    if trace.segments.len() != 1 {
        return Err(Error::Domain("bounds apply to runs without events".into()));
    }
    Ok(())
}

/// `‖Ẽ(t)‖ <= κ e^{-ηt} ‖Ẽ(0)‖ + κ ‖G‖ ū (1 - e^{-ηt}) / η` at every sample,
/// with `κ, η` fitted to `R` and `G` built from `channels`.
pub fn iss_check(trace: &SimulationTrace, channels: &[Disturbance], u_bar: f64) -> Result<BoundCheck> {
    single_segment(trace)?;
    let seg = &trace.segments[0];
    let model = seg.observer.model();
    let gains = seg.observer.gains();
    let ed = observer::assemble_error_dynamics(model, gains)?;
    let envelope = observer::envelope_fit(&ed.r)?;
    let g_norm = if channels.is_empty() {
        0.0
    } else {
        linalg::norm2(&observer::disturbance_matrix(model, gains, &ed.layout, channels))
    };
    let e0 = trace.samples.first().map(|s| norm(&s.errors)).unwrap_or(0.0);
    let mut worst_ratio = 0.0;
    let mut worst_time = 0.0;
    for s in &trace.samples {
        let bound = observer::iss_error_bound(envelope, e0, g_norm, u_bar, s.t)?;
        let e = norm(&s.errors);
        let ratio = if bound > 0.0 {
            e / bound
        } else if e == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        if ratio > worst_ratio {
            worst_ratio = ratio;
            worst_time = s.t;
        }
    }
    Ok(BoundCheck {
        envelope,
        g_norm,
        u_bar,
        e0,
        worst_ratio,
        worst_time,
    })
}

/// Noise-free envelope `‖Ẽ(t)‖ <= κ e^{-ηt} ‖Ẽ(0)‖`.
pub fn envelope_check(trace: &SimulationTrace) -> Result<BoundCheck> {
    iss_check(trace, &[], 0.0)
}
