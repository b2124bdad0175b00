//! Scenario files.
//!
//! Agents are one-based everywhere in a scenario. Events name agents by label:
//! the original agents keep labels `1..=m` for the whole run and every joining
//! agent takes the next unused label, so labels never shift when an agent
//! leaves.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::signals::InputSignal;
use crate::error::{Error, Result};
use crate::localization::{self, Kinematics, SensingFile};
use crate::mas::{self, AgentFile, EdgeSpec, MasModel, ModelFile, OutputCouplingFile, StateCouplingFile};
use crate::observer::{self, GainPolicy, GainReport, InputMode, ObserverGains, DEFAULT_MARGIN};

/// Where the plant comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelSpec {
    Inline {
        model: ModelFile,
    },
    /// Model file; relative paths are resolved against the scenario file.
    File {
        path: PathBuf,
    },
    /// Integrator agents localized from a sensing graph.
    Localization {
        kinematics: Kinematics,
        #[serde(default = "default_h")]
        h: usize,
        sensing: SensingFile,
        communication: Vec<EdgeSpec>,
        /// Orient the sensing graph with [`localization::dagc`] first; IDs are
        /// taken from the sensing file or drawn from the scenario seed.
        #[serde(default = "yes")]
        dagc: bool,
    },
}

fn default_h() -> usize {
    2
}

fn yes() -> bool {
    true
}

fn one() -> usize {
    1
}

/// Gain policy plus optional Luenberger gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainsSpec {
    #[serde(flatten)]
    pub policy: GainPolicy,
    /// `F_i` per agent; designed by pole placement when absent.
    #[serde(rename = "F", default, skip_serializing_if = "Option::is_none")]
    pub luenberger: Option<Vec<Vec<Vec<f64>>>>,
    /// Stability margin used when designing `F_i`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
}

impl GainsSpec {
    pub fn margin(&self) -> f64 {
        self.margin.unwrap_or(DEFAULT_MARGIN)
    }
}

/// Uniform bounded noise, drawn per channel and held over each step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    #[serde(default)]
    pub process: f64,
    #[serde(default)]
    pub measurement: f64,
}

impl NoiseConfig {
    pub fn is_zero(&self) -> bool {
        self.process == 0.0 && self.measurement == 0.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialEstimates {
    #[default]
    Zero,
    Truth,
}

/// A change to the agent set, applied at the grid time nearest `time`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EventSpec {
    Join {
        time: f64,
        agent: AgentFile,
        x0: Vec<f64>,
        /// Couplings by label; the new agent's label is the next unused one.
        #[serde(default)]
        state_couplings: Vec<StateCouplingFile>,
        #[serde(default)]
        output_couplings: Vec<OutputCouplingFile>,
        /// Communication graph after the event, by label.
        communication: Vec<EdgeSpec>,
        #[serde(rename = "F", default, skip_serializing_if = "Option::is_none")]
        luenberger: Option<Vec<Vec<f64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        input: Option<InputSignal>,
    },
    Leave {
        time: f64,
        agent: usize,
        /// Communication graph after the event, by label; defaults to the
        /// induced subgraph.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        communication: Option<Vec<EdgeSpec>>,
    },
}

impl EventSpec {
    pub fn time(&self) -> f64 {
        match self {
            EventSpec::Join { time, .. } | EventSpec::Leave { time, .. } => *time,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    pub model: ModelSpec,
    pub gains: GainsSpec,
    #[serde(default = "full")]
    pub input_mode: InputMode,
    /// One signal per agent; missing entries are zero.
    #[serde(default)]
    pub inputs: Vec<InputSignal>,
    /// Initial plant state per agent.
    pub x0: Vec<Vec<f64>>,
    #[serde(default)]
    pub initial_estimates: InitialEstimates,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub events: Vec<EventSpec>,
    pub t_end: f64,
    pub dt: f64,
    #[serde(default)]
    pub seed: u64,
    /// Record every `subsample`-th step.
    #[serde(default = "one")]
    pub subsample: usize,
}

fn full() -> InputMode {
    InputMode::Full
}

/// Seed offset for the stream that draws localization IDs.
const ID_STREAM: u64 = 0x1d5;

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Reads a scenario and resolves a relative model path against its
    /// directory.
    pub fn from_path(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_json(&std::fs::read_to_string(path)?)?;
        if let ModelSpec::File { path: model } = &mut cfg.model {
            if model.is_relative() {
                if let Some(dir) = path.parent() {
                    *model = dir.join(&*model);
                }
            }
        }
        Ok(cfg)
    }

    /// Checks step size, horizon, subsampling and event times.
    pub fn validate_timing(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite() && self.t_end.is_finite() && self.dt <= self.t_end) {
            return Err(Error::Domain(format!(
                "need 0 < dt <= t_end, got dt = {}, t_end = {}",
                self.dt, self.t_end
            )));
        }
        if self.subsample == 0 {
            return Err(Error::Domain("subsample must be at least 1".into()));
        }
        let mut last = 0.0;
        for ev in &self.events {
            let t = ev.time();
            if !(t > last && t < self.t_end) {
                return Err(Error::Domain(format!(
                    "event times must increase strictly inside (0, t_end); got {t}"
                )));
            }
            last = t;
        }
        if !(self.noise.process >= 0.0 && self.noise.measurement >= 0.0) {
            return Err(Error::Domain("noise bounds must be nonnegative".into()));
        }
        Ok(())
    }

    /// Builds the plant described by the scenario.
    pub fn build_model(&self) -> Result<MasModel> {
        match &self.model {
            ModelSpec::Inline { model } => model.clone().into_model(),
            ModelSpec::File { path } => MasModel::from_json(&std::fs::read_to_string(path)?),
            ModelSpec::Localization {
                kinematics,
                h,
                sensing,
                communication,
                dagc,
            } => {
                let sg = sensing.graph()?;
                let gc = mas::graph_from_specs(sensing.agents, communication)?;
                let oriented = if *dagc {
                    let ids = match sensing.pinned_ids()? {
                        Some(ids) => ids,
                        None => {
                            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ ID_STREAM);
                            localization::random_ids(&mut rng, sensing.agents)
                        }
                    };
                    localization::dagc(&sg, &ids)?.oriented
                } else {
                    sg
                };
                localization::build_localization_mas(&oriented, *kinematics, *h, gc)
            }
        }
    }

    /// Luenberger gains from the file, if given.
    pub fn luenberger(&self, model: &MasModel) -> Result<Option<Vec<DMatrix<f64>>>> {
        let Some(rows) = &self.gains.luenberger else { return Ok(None) };
        if rows.len() != model.agent_count() {
            return Err(Error::Dimension(format!(
                "{} Luenberger gains for {} agents",
                rows.len(),
                model.agent_count()
            )));
        }
        rows.iter()
            .enumerate()
            .map(|(i, r)| mas::matrix_with_cols(r, model.agent(i).output_dim(), &format!("F_{}", i + 1)))
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    pub fn design_gains(&self, model: &MasModel) -> Result<(ObserverGains, GainReport)> {
        observer::design_gains(
            model,
            self.gains.policy,
            self.luenberger(model)?,
            self.gains.margin(),
            self.input_mode,
        )
    }

    /// Per-agent input signals validated against the model.
    pub fn input_signals(&self, model: &MasModel) -> Result<Vec<InputSignal>> {
        let m = model.agent_count();
        if self.inputs.len() > m {
            return Err(Error::Dimension(format!("{} input signals for {m} agents", self.inputs.len())));
        }
        let mut out = self.inputs.clone();
        out.resize(m, InputSignal::Zero);
        for (i, s) in out.iter().enumerate() {
            s.validate(model.agent(i).input_dim())?;
        }
        Ok(out)
    }

    /// Stacked initial plant state.
    pub fn initial_state(&self, model: &MasModel) -> Result<Vec<f64>> {
        if self.x0.len() != model.agent_count() {
            return Err(Error::Dimension(format!(
                "x0 lists {} agents, model has {}",
                self.x0.len(),
                model.agent_count()
            )));
        }
        let mut x = Vec::with_capacity(model.total_state_dim());
        for (i, xi) in self.x0.iter().enumerate() {
            if xi.len() != model.agent(i).state_dim() {
                return Err(Error::Dimension(format!(
                    "x0 for agent {} has length {}, expected {}",
                    i + 1,
                    xi.len(),
                    model.agent(i).state_dim()
                )));
            }
            x.extend_from_slice(xi);
        }
        Ok(x)
    }
}
