//! Recorded runs, error summaries and CSV export.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use crate::linalg;
use crate::observer::{ErrorLayout, GainReport, Observer};
use crate::scalar::{Extended, Scalar};

/// Interval of the run with a fixed agent set and fixed gains.
#[derive(Debug, Clone)]
pub struct Segment {
    pub start_time: f64,
    /// Persistent one-based label of every agent index.
    pub labels: Vec<usize>,
    pub observer: Observer,
    /// Bound trail when the gains were (re)designed at this point.
    pub report: Option<GainReport>,
    /// Error layout in agent order.
    pub layout: ErrorLayout,
}

impl Segment {
    pub fn index_of(&self, label: usize) -> Option<usize> {
        self.labels.iter().position(|&l| l == label)
    }
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub t: f64,
    pub segment: usize,
    pub x: Vec<Extended>,
    /// Flat observer state.
    pub observer: Vec<Extended>,
    /// Stacked errors in the segment's layout.
    pub errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub requested_time: f64,
    pub applied_time: f64,
    pub step: usize,
    /// `|applied_time - requested_time|`, below half a step.
    pub snap: f64,
    pub description: String,
}

#[derive(Debug, Clone)]
pub struct SimulationTrace {
    pub config: ScenarioConfig,
    pub samples: Vec<Sample>,
    pub segments: Vec<Segment>,
    pub events: Vec<EventRecord>,
    /// Largest stacked input norm seen at any stage evaluation.
    pub input_sup: f64,
    /// Largest stacked `[w; v]` norm drawn.
    pub noise_sup: f64,
}

impl SimulationTrace {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn segment_of(&self, sample: &Sample) -> &Segment {
        &self.segments[sample.segment]
    }

    /// `‖Ẽ(t)‖` for every sample.
    pub fn stacked_norms(&self) -> Vec<f64> {
        self.samples.iter().map(|s| norm(&s.errors)).collect()
    }

    /// `‖e_j^(i)‖` by labels, if both agents are present.
    pub fn pair_norm(&self, sample: &Sample, estimator: usize, target: usize) -> Option<f64> {
        let seg = self.segment_of(sample);
        let (i, j) = (seg.index_of(estimator)?, seg.index_of(target)?);
        Some(seg.layout.pair_norm(&sample.errors, i, j))
    }

    /// `‖ē_j‖` by label.
    pub fn bar_norm(&self, sample: &Sample, target: usize) -> Option<f64> {
        let seg = self.segment_of(sample);
        Some(seg.layout.bar_norm(&sample.errors, seg.index_of(target)?))
    }

    /// Errors recomputed from the stored states.
    pub fn recompute_errors(&self, sample: &Sample) -> Vec<f64> {
        let seg = self.segment_of(sample);
        seg.layout.errors_from_state(&seg.observer, &sample.x, &sample.observer)
    }

    /// Every label that appears, with its state dimension.
    pub fn label_dims(&self) -> BTreeMap<usize, usize> {
        let mut out = BTreeMap::new();
        for seg in &self.segments {
            for (i, &l) in seg.labels.iter().enumerate() {
                out.entry(l).or_insert(seg.observer.model().agent(i).state_dim());
            }
        }
        out
    }

    pub fn csv_header(&self) -> Vec<String> {
        let dims = self.label_dims();
        let mut cols = vec!["t".to_string(), "segment".to_string()];
        for (&k, &d) in &dims {
            cols.extend((1..=d).map(|c| format!("x[{k}][{c}]")));
        }
        for &i in dims.keys() {
            for (&k, &d) in &dims {
                cols.extend((1..=d).map(|c| format!("xhat[{i}][{k}][{c}]")));
            }
        }
        for (&k, &d) in &dims {
            cols.extend((1..=d).map(|c| format!("xbar[{k}][{c}]")));
        }
        for &i in dims.keys() {
            cols.extend(dims.keys().map(|j| format!("err[{i}][{j}]")));
        }
        cols.extend(dims.keys().map(|j| format!("ebar[{j}]")));
        cols.push("E_norm".into());
        cols
    }

    /// One row per sample; cells of absent agents are empty. Numbers use the
    /// shortest representation that round-trips.
    pub fn to_csv(&self) -> String {
        let dims = self.label_dims();
        let mut out = self.csv_header().join(",");
        out.push('\n');
        let mut row: Vec<String> = Vec::new();
        for s in &self.samples {
            row.clear();
            let seg = self.segment_of(s);
            let obs = &seg.observer;
            let so = obs.model().state_offsets();
            row.push(fmt(s.t));
            row.push(s.segment.to_string());
            let cells = |idx: Option<usize>, d: usize, base: &dyn Fn(usize) -> usize, src: &[Extended], row: &mut Vec<String>| {
                for c in 0..d {
                    row.push(idx.map(|j| fmt(src[base(j) + c].to_f64())).unwrap_or_default());
                }
            };
            for (&k, &d) in &dims {
                cells(seg.index_of(k), d, &|j| so[j], &s.x, &mut row);
            }
            for &i in dims.keys() {
                let ii = seg.index_of(i);
                for (&k, &d) in &dims {
                    let idx = ii.and(seg.index_of(k));
                    cells(idx, d, &|j| obs.xhat_offset(ii.unwrap_or(0), j), &s.observer, &mut row);
                }
            }
            for (&k, &d) in &dims {
                cells(seg.index_of(k), d, &|j| obs.xbar_offset(j), &s.observer, &mut row);
            }
            for &i in dims.keys() {
                for &j in dims.keys() {
                    row.push(self.pair_norm(s, i, j).map(fmt).unwrap_or_default());
                }
            }
            for &j in dims.keys() {
                row.push(self.bar_norm(s, j).map(fmt).unwrap_or_default());
            }
            row.push(fmt(norm(&s.errors)));
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Run description: configuration, gains of every segment, events and
    /// the error summary.
    pub fn metadata(&self, summary: &ErrorSummary) -> serde_json::Value {
        let segments: Vec<_> = self
            .segments
            .iter()
            .map(|seg| {
                let g = seg.observer.gains();
                serde_json::json!({
                    "start_time": seg.start_time,
                    "labels": seg.labels,
                    "mu": g.mu,
                    "input_mode": g.input_mode,
                    "F": g.luenberger.iter().map(linalg::matrix_to_rows).collect::<Vec<_>>(),
                    "weights": g.weights.iter().map(linalg::matrix_to_rows).collect::<Vec<_>>(),
                    "gain_report": seg.report,
                })
            })
            .collect();
        serde_json::json!({
            "name": self.config.name,
            "seed": self.config.seed,
            "config": self.config,
            "segments": segments,
            "events": self.events,
            "input_sup": self.input_sup,
            "noise_sup": self.noise_sup,
            "samples": self.samples.len(),
            "summary": summary,
        })
    }
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSummary {
    pub estimator: usize,
    pub target: usize,
    pub sup: f64,
    /// Value at the last sample where both agents are present.
    pub last: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub pairs: Vec<PairSummary>,
    pub sup_norm: f64,
    pub final_norm: f64,
    pub threshold: f64,
    /// Earliest sample time after which `‖Ẽ‖` stays at or below the threshold.
    pub settling_time: Option<f64>,
}

impl ErrorSummary {
    pub fn pair(&self, estimator: usize, target: usize) -> Option<&PairSummary> {
        self.pairs.iter().find(|p| p.estimator == estimator && p.target == target)
    }
}

/// Per-pair and stacked error statistics.
pub fn error_norms(trace: &SimulationTrace, threshold: f64) -> ErrorSummary {
    let labels: Vec<usize> = trace.label_dims().into_keys().collect();
    let mut pairs = Vec::new();
    for &i in &labels {
        for &j in &labels {
            let series: Vec<f64> = trace.samples.iter().filter_map(|s| trace.pair_norm(s, i, j)).collect();
            if let Some(&last) = series.last() {
                pairs.push(PairSummary {
                    estimator: i,
                    target: j,
                    sup: series.iter().copied().fold(0.0, f64::max),
                    last,
                });
            }
        }
    }
    let norms = trace.stacked_norms();
    let settling_time = match norms.iter().rposition(|&e| e > threshold) {
        None => trace.samples.first().map(|s| s.t),
        Some(k) => trace.samples.get(k + 1).map(|s| s.t),
    };
    ErrorSummary {
        pairs,
        sup_norm: norms.iter().copied().fold(0.0, f64::max),
        final_norm: norms.last().copied().unwrap_or(0.0),
        threshold,
        settling_time,
    }
}
