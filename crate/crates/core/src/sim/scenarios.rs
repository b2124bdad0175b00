//! Built-in experiments and their pass/fail checks.
//!
//! Three-agent heterogeneous network: agent 1 is a two-state unstable plant
//! that drives and is sensed by agent 2; agents 2 and 3 are scalar.
//! Communication is the directed ring 1 -> 2 -> 3 -> 1.
//!
//! Join/leave network: three copies of agent 1 chained through output
//! couplings `C_21 = C_32 = diag(1.2, 0.8)`. Agent 4 joins at t = 15 sensing
//! agent 3, or agent 2 leaves at t = 15 and agents 1 and 3 talk directly.
//!
//! Localization network: six planar single integrators on a sensing ring
//! with agent 2 anchored and a bidirectional communication ring.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use super::analysis;
use super::config::{EventSpec, GainsSpec, InitialEstimates, ModelSpec, NoiseConfig, ScenarioConfig};
use super::signals::InputSignal;
use super::trace::{error_norms, SimulationTrace};
use crate::error::{Error, Result};
use crate::graphs::WeightRule;
use crate::localization::{Kinematics, SensingFile};
use crate::mas::{AgentFile, EdgeSpec, ModelFile, OutputCouplingFile, StateCouplingFile};
use crate::observer::{Disturbance, GainPolicy, InputMode};

pub const BUILTIN_IDS: [&str; 6] = ["5A-basic", "5A-noise", "5A-join", "5A-leave", "5B-known", "5B-unknown"];

/// Slack allowed above fitted bounds.
pub const BOUND_SLACK: f64 = 0.10;
/// Relative tolerance of the noise-free envelope.
pub const ENVELOPE_TOL: f64 = 1e-6;
/// Final per-pair error in the three-agent run.
pub const BASIC_FINAL_TOL: f64 = 1e-3;
/// Final stacked error after a join or leave.
pub const RECONFIG_FINAL_TOL: f64 = 1e-2;
/// Final localization error with known inputs.
pub const LOCALIZATION_FINAL_TOL: f64 = 1e-3;

/// Coupling gain used for the join/leave runs.
pub const RECONFIG_MU: f64 = 572.0;

fn rows(r: &[&[f64]]) -> Vec<Vec<f64>> {
    r.iter().map(|row| row.to_vec()).collect()
}

fn unstable_pair() -> AgentFile {
    AgentFile {
        a: rows(&[&[1.2, 1.0], &[0.0, 0.8]]),
        b: rows(&[&[1.0, 0.0], &[0.0, 1.0]]),
        c: rows(&[&[1.0, 0.0], &[0.0, 1.0]]),
    }
}

fn scalar_agent(a: f64) -> AgentFile {
    AgentFile {
        a: vec![vec![a]],
        b: vec![vec![1.0]],
        c: vec![vec![1.0]],
    }
}

fn f1() -> Vec<Vec<f64>> {
    rows(&[&[4.2, 0.0], &[0.0, 4.8]])
}

fn chain_coupling() -> Vec<Vec<f64>> {
    rows(&[&[1.2, 0.0], &[0.0, 0.8]])
}

/// The heterogeneous three-agent model.
pub fn three_agent_model() -> ModelFile {
    ModelFile {
        m: 3,
        agents: vec![unstable_pair(), scalar_agent(1.03), scalar_agent(0.3)],
        state_couplings: vec![StateCouplingFile {
            i: 2,
            j: 1,
            a_ij: vec![vec![0.8, 1.0]],
        }],
        output_couplings: vec![OutputCouplingFile {
            i: 2,
            j: 1,
            c_ij: vec![vec![0.8, 1.2]],
        }],
        gs: None,
        go: None,
        gc: vec![EdgeSpec::Plain(1, 2), EdgeSpec::Plain(2, 3), EdgeSpec::Plain(3, 1)],
    }
}

/// The homogeneous chain used for join/leave.
pub fn homogeneous_chain_model() -> ModelFile {
    ModelFile {
        m: 3,
        agents: vec![unstable_pair(), unstable_pair(), unstable_pair()],
        state_couplings: vec![],
        output_couplings: vec![
            OutputCouplingFile { i: 2, j: 1, c_ij: chain_coupling() },
            OutputCouplingFile { i: 3, j: 2, c_ij: chain_coupling() },
        ],
        gs: None,
        go: None,
        gc: vec![EdgeSpec::Plain(1, 2), EdgeSpec::Plain(2, 3), EdgeSpec::Plain(3, 1)],
    }
}

/// Sensing ring with agent 2 anchored; agent `d` of `(s, d)` measures `p_s - p_d`.
pub fn localization_sensing() -> SensingFile {
    SensingFile {
        agents: 6,
        anchors: vec![2],
        relative_edges: vec![(2, 1), (3, 2), (4, 3), (5, 4), (6, 5), (1, 6)],
        ids: Some((1..=6).map(|k| (k.to_string(), k as u64)).collect()),
    }
}

pub fn localization_communication() -> Vec<EdgeSpec> {
    (1..=6)
        .flat_map(|k| {
            let next = k % 6 + 1;
            [EdgeSpec::Plain(k, next), EdgeSpec::Plain(next, k)]
        })
        .collect()
}

/// Luenberger gains for the oriented localization graph; agent 5 holds two
/// relative measurements, every other agent one.
pub fn localization_gains() -> Vec<Vec<Vec<f64>>> {
    let single = rows(&[&[-1.0, 0.0], &[0.0, -0.5]]);
    let double = rows(&[&[-1.0, 0.0, -1.0, 0.0], &[0.0, -0.5, 0.0, -0.5]]);
    (1..=6).map(|k| if k == 5 { double.clone() } else { single.clone() }).collect()
}

pub fn localization_initial_positions() -> Vec<Vec<f64>> {
    rows(&[&[5.0, 7.0], &[3.0, 4.0], &[5.0, 2.0], &[10.0, 2.0], &[12.0, 4.0], &[10.0, 7.0]])
}

/// `u_i = [-0.1 sin(0.01 t), 0.1 cos(0.01 t)]`.
pub fn localization_input() -> InputSignal {
    InputSignal::Sinusoid {
        amplitude: vec![0.1, 0.1],
        frequency: 0.01,
        phase: vec![PI, FRAC_PI_2],
        offset: vec![],
    }
}

fn three_agent(name: &str, noise: NoiseConfig, t_end: f64) -> ScenarioConfig {
    ScenarioConfig {
        name: name.into(),
        model: ModelSpec::Inline { model: three_agent_model() },
        gains: GainsSpec {
            policy: GainPolicy::Explicit { mu: 10.0, rule: WeightRule::Binary },
            luenberger: Some(vec![f1(), vec![vec![3.0]], vec![vec![2.0]]]),
            margin: None,
        },
        input_mode: InputMode::Full,
        inputs: vec![],
        x0: vec![vec![0.5, -0.5], vec![0.5], vec![0.5]],
        initial_estimates: InitialEstimates::Zero,
        noise,
        events: vec![],
        t_end,
        dt: 1e-3,
        seed: 1,
        subsample: 10,
    }
}

fn chain(name: &str, event: EventSpec) -> ScenarioConfig {
    ScenarioConfig {
        name: name.into(),
        model: ModelSpec::Inline { model: homogeneous_chain_model() },
        gains: GainsSpec {
            policy: GainPolicy::Explicit {
                mu: RECONFIG_MU,
                rule: WeightRule::NormalizedIn,
            },
            luenberger: Some(vec![f1(), f1(), f1()]),
            margin: None,
        },
        input_mode: InputMode::Full,
        inputs: vec![],
        x0: vec![vec![0.5, -0.5], vec![0.5, 0.5], vec![-0.5, 0.5]],
        initial_estimates: InitialEstimates::Zero,
        noise: NoiseConfig::default(),
        events: vec![event],
        t_end: 30.0,
        dt: 1e-4,
        seed: 1,
        subsample: 100,
    }
}

/// Agent 4 joins at t = 15, sensing agent 3.
pub fn join_event() -> EventSpec {
    EventSpec::Join {
        time: 15.0,
        agent: unstable_pair(),
        x0: vec![0.5, 0.5],
        state_couplings: vec![],
        output_couplings: vec![OutputCouplingFile { i: 4, j: 3, c_ij: chain_coupling() }],
        communication: vec![
            EdgeSpec::Plain(1, 2),
            EdgeSpec::Plain(2, 3),
            EdgeSpec::Plain(3, 4),
            EdgeSpec::Plain(4, 1),
        ],
        luenberger: Some(f1()),
        input: None,
    }
}

/// Agent 2 leaves at t = 15; agents 1 and 3 then talk both ways.
pub fn leave_event() -> EventSpec {
    EventSpec::Leave {
        time: 15.0,
        agent: 2,
        communication: Some(vec![EdgeSpec::Plain(1, 3), EdgeSpec::Plain(3, 1)]),
    }
}

fn localization(name: &str, mode: InputMode) -> ScenarioConfig {
    ScenarioConfig {
        name: name.into(),
        model: ModelSpec::Localization {
            kinematics: Kinematics::Single,
            h: 2,
            sensing: localization_sensing(),
            communication: localization_communication(),
            dagc: true,
        },
        gains: GainsSpec {
            policy: GainPolicy::Explicit { mu: 1.0, rule: WeightRule::Graph },
            luenberger: Some(localization_gains()),
            margin: None,
        },
        input_mode: mode,
        inputs: vec![localization_input(); 6],
        x0: localization_initial_positions(),
        initial_estimates: InitialEstimates::Zero,
        noise: NoiseConfig::default(),
        events: vec![],
        t_end: 200.0,
        dt: 1e-2,
        seed: 1,
        subsample: 10,
    }
}

pub fn builtin(id: &str) -> Result<ScenarioConfig> {
    Ok(match id {
        "5A-basic" => three_agent(id, NoiseConfig::default(), 20.0),
        "5A-noise" => three_agent(id, NoiseConfig { process: 0.05, measurement: 0.05 }, 30.0),
        "5A-join" => chain(id, join_event()),
        "5A-leave" => chain(id, leave_event()),
        "5B-known" => localization(id, InputMode::Full),
        "5B-unknown" => localization(id, InputMode::OwnOnly),
        other => {
            return Err(Error::Parse(format!(
                "unknown experiment {other}; expected one of {}",
                BUILTIN_IDS.join(", ")
            )))
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self { name: name.into(), passed, detail }
    }
}

fn max_final_pair(trace: &SimulationTrace) -> f64 {
    error_norms(trace, 0.0).pairs.iter().map(|p| p.last).fold(0.0, f64::max)
}

fn bound_check(name: &str, b: analysis::BoundCheck) -> Check {
    Check::new(
        name,
        b.holds(BOUND_SLACK),
        format!(
            "max ‖E‖/bound = {:.4} at t = {} (kappa = {:.4}, eta = {:.4}, ‖G‖ = {:.4}, u_bar = {:.4})",
            b.worst_ratio, b.worst_time, b.envelope.kappa, b.envelope.eta, b.g_norm, b.u_bar
        ),
    )
}

/// Pass/fail checks of a built-in experiment on its trace.
pub fn evaluate(id: &str, trace: &SimulationTrace) -> Result<Vec<Check>> {
    let summary = error_norms(trace, 0.0);
    let mut checks = Vec::new();
    match id {
        "5A-basic" => {
            let worst = max_final_pair(trace);
            checks.push(Check::new(
                "every ‖e_j^(i)(t_end)‖ < 1e-3",
                worst < BASIC_FINAL_TOL,
                format!("max final pair error {worst:e}"),
            ));
            let env = analysis::envelope_check(trace)?;
            checks.push(Check::new(
                "‖E(t)‖ within the fitted envelope",
                env.worst_ratio <= 1.0 + ENVELOPE_TOL,
                format!("max ‖E‖/envelope = {:.6}", env.worst_ratio),
            ));
        }
        "5A-noise" => {
            let cfg = &trace.config;
            let model = trace.segments[0].observer.model();
            let u_bar = ((model.total_state_dim() as f64) * cfg.noise.process.powi(2)
                + (model.total_output_dim() as f64) * cfg.noise.measurement.powi(2))
            .sqrt();
            let b = analysis::iss_check(
                trace,
                &[Disturbance::ProcessNoise, Disturbance::MeasurementNoise],
                u_bar,
            )?;
            checks.push(bound_check("‖E(t)‖ within the ISS bound + 10%", b));
        }
        "5A-join" | "5A-leave" => {
            checks.push(Check::new(
                "‖E(t_end)‖ < 1e-2",
                summary.final_norm < RECONFIG_FINAL_TOL,
                format!("final ‖E‖ = {:e}", summary.final_norm),
            ));
        }
        "5B-known" => {
            let worst = max_final_pair(trace);
            checks.push(Check::new(
                "every position error < 1e-3 at t_end",
                worst < LOCALIZATION_FINAL_TOL,
                format!("max final pair error {worst:e}"),
            ));
        }
        "5B-unknown" => {
            let b = analysis::iss_check(trace, &[Disturbance::HiddenInput], trace.input_sup)?;
            checks.push(bound_check("‖E(t)‖ within the ISS bound + 10%", b));
        }
        other => return Err(Error::Parse(format!("unknown experiment {other}"))),
    }
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_build_and_satisfy_the_assumptions() {
        for id in BUILTIN_IDS {
            let cfg = builtin(id).unwrap();
            cfg.validate_timing().unwrap();
            let model = cfg.build_model().unwrap();
            super::super::run::check_configuration(&model).unwrap();
            cfg.design_gains(&model).unwrap();
        }
        assert!(builtin("5C").is_err());
    }

    #[test]
    fn builtins_round_trip_through_json() {
        for id in BUILTIN_IDS {
            let cfg = builtin(id).unwrap();
            assert_eq!(ScenarioConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        }
    }

    #[test]
    fn positive_localization_gain_is_destabilizing() {
        // Measurements enter with C_ii = -I, so only the negated gain works.
        let model = builtin("5B-known").unwrap().build_model().unwrap();
        let ag = model.agent(0);
        let literal = nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 0.5]));
        assert!(!crate::observer::is_hurwitz(&(&ag.a - &literal * &ag.c), crate::observer::HURWITZ_TOL));
        assert!(crate::observer::is_hurwitz(&(&ag.a + &literal * &ag.c), crate::observer::HURWITZ_TOL));
    }

    #[test]
    fn localization_input_matches_its_closed_form() {
        let mut u = [0.0; 2];
        let t = 123.4;
        localization_input().eval_into(t, &mut u);
        assert!((u[0] + 0.1 * (0.01 * t).sin()).abs() < 1e-15);
        assert!((u[1] - 0.1 * (0.01 * t).cos()).abs() < 1e-15);
    }
}
