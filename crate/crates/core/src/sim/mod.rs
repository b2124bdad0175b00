//! Deterministic simulation of plant and distributed observer.
//!
//! Plant and observer are integrated together by fixed-step RK4 in
//! double-double precision: the unstable plants of the built-in experiments
//! grow past `1e15`, so plain `f64` states could no longer resolve the
//! estimation errors.

mod analysis;
mod config;
mod integrate;
mod run;
mod scenarios;
mod signals;
mod trace;

pub use analysis::{envelope_check, iss_check, BoundCheck};
pub use config::{EventSpec, GainsSpec, InitialEstimates, ModelSpec, NoiseConfig, ScenarioConfig};
pub use integrate::{integrate_step, rk4_step, Rk4Workspace};
pub use run::{check_configuration, initial_state, run_scenario, NetworkState};
pub use scenarios::{
    builtin, evaluate, homogeneous_chain_model, join_event, leave_event, localization_communication,
    localization_gains, localization_initial_positions, localization_input, localization_sensing,
    three_agent_model, Check, BASIC_FINAL_TOL, BOUND_SLACK, BUILTIN_IDS, ENVELOPE_TOL,
    LOCALIZATION_FINAL_TOL, RECONFIG_FINAL_TOL, RECONFIG_MU,
};
pub use signals::InputSignal;
pub use trace::{error_norms, ErrorSummary, EventRecord, PairSummary, Sample, Segment, SimulationTrace};
