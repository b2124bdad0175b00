//! Closed-form and tabulated input signals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One agent's input `u_i(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InputSignal {
    Zero,
    Constant {
        value: Vec<f64>,
    },
    /// `offset_k + amplitude_k sin(frequency t + phase_k)`, frequency in rad/s.
    Sinusoid {
        amplitude: Vec<f64>,
        frequency: f64,
        #[serde(default)]
        phase: Vec<f64>,
        #[serde(default)]
        offset: Vec<f64>,
    },
    /// Linear interpolation between `(times[k], values[k])`, held constant
    /// outside the table.
    Table {
        times: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
}

impl InputSignal {
    /// Number of channels, `None` for [`InputSignal::Zero`].
    pub fn width(&self) -> Option<usize> {
        match self {
            InputSignal::Zero => None,
            InputSignal::Constant { value } => Some(value.len()),
            InputSignal::Sinusoid { amplitude, .. } => Some(amplitude.len()),
            InputSignal::Table { values, .. } => values.first().map(Vec::len),
        }
    }

    pub fn validate(&self, width: usize) -> Result<()> {
        let bad = |what: &str| Err(Error::Dimension(format!("input signal {what} for an input of width {width}")));
        match self {
            InputSignal::Zero => Ok(()),
            InputSignal::Constant { value } if value.len() != width => bad("has the wrong width"),
            InputSignal::Sinusoid {
                amplitude,
                phase,
                offset,
                frequency,
            } => {
                if amplitude.len() != width
                    || !(phase.is_empty() || phase.len() == width)
                    || !(offset.is_empty() || offset.len() == width)
                {
                    bad("has the wrong width")
                } else if !frequency.is_finite() {
                    bad("has a non-finite frequency")
                } else {
                    Ok(())
                }
            }
            InputSignal::Table { times, values } => {
                if times.is_empty() || times.len() != values.len() {
                    bad("table is empty or ragged")
                } else if values.iter().any(|v| v.len() != width) {
                    bad("has the wrong width")
                } else if times.windows(2).any(|w| w[1] <= w[0]) {
                    bad("table times are not increasing")
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Writes `u(t)` into `out` (which has the validated width).
    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        match self {
            InputSignal::Zero => out.fill(0.0),
            InputSignal::Constant { value } => out.copy_from_slice(value),
            InputSignal::Sinusoid {
                amplitude,
                frequency,
                phase,
                offset,
            } => {
                for (k, o) in out.iter_mut().enumerate() {
                    let ph = phase.get(k).copied().unwrap_or(0.0);
                    let off = offset.get(k).copied().unwrap_or(0.0);
                    *o = off + amplitude[k] * (frequency * t + ph).sin();
                }
            }
            InputSignal::Table { times, values } => {
                let k = times.partition_point(|&s| s <= t);
                if k == 0 {
                    out.copy_from_slice(&values[0]);
                } else if k == times.len() {
                    out.copy_from_slice(&values[k - 1]);
                } else {
                    let (t0, t1) = (times[k - 1], times[k]);
                    let a = (t - t0) / (t1 - t0);
                    for (c, o) in out.iter_mut().enumerate() {
                        *o = values[k - 1][c] + a * (values[k][c] - values[k - 1][c]);
                    }
                }
            }
        }
    }
}
