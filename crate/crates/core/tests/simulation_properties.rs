//! Simulator invariants on random networks: reproducibility, the fitted
//! envelope and input-to-state bounds, linearity and step-size convergence.

mod common;

use distobs::graphs::WeightRule;
use distobs::linalg;
use distobs::mas::random::{random_model, random_strongly_connected, RandomModelSpec};
use distobs::observer::{self, Disturbance, GainPolicy, InputMode};
use distobs::scalar::Scalar;
use distobs::sim::{
    self, GainsSpec, InitialEstimates, InputSignal, ModelSpec, NoiseConfig, ScenarioConfig, SimulationTrace,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Steps per run stay below this.
const MAX_STEPS: f64 = 4000.0;

/// A scenario on a random strongly connected network with designed gains.
/// The step resolves the fastest error mode and the horizon covers several
/// time constants of the slowest.
fn random_scenario(seed: u64, m: usize, inputs: bool, mode: InputMode) -> ScenarioConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gc = random_strongly_connected(&mut rng, m, 0.3);
    let spec = RandomModelSpec { agents: m, max_state_dim: 2, coupling_p: 0.4, unstable_diagonal: false };
    let model = random_model(&mut rng, spec, gc);
    let x0 = model
        .agents()
        .iter()
        .map(|ag| (0..ag.state_dim()).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let signals = if inputs {
        model
            .agents()
            .iter()
            .map(|ag| InputSignal::Sinusoid {
                amplitude: (0..ag.input_dim()).map(|_| rng.random_range(0.1..1.0)).collect(),
                frequency: rng.random_range(0.1..3.0),
                phase: vec![],
                offset: vec![],
            })
            .collect()
    } else {
        vec![]
    };
    let gains = GainsSpec { policy: GainPolicy::Global { rule: WeightRule::Binary }, luenberger: None, margin: None };
    let mut cfg = ScenarioConfig {
        name: format!("random-{seed}"),
        model: ModelSpec::Inline { model: model.to_file() },
        gains,
        input_mode: mode,
        inputs: signals,
        x0,
        initial_estimates: InitialEstimates::Zero,
        noise: NoiseConfig::default(),
        events: vec![],
        t_end: 1.0,
        dt: 1.0,
        seed,
        subsample: 1,
    };
    let (g, _) = cfg.design_gains(&model).unwrap();
    let r = observer::assemble_error_dynamics(&model, &g).unwrap().r;
    let fast = linalg::spectral_radius(&r);
    let slow = -linalg::spectral_abscissa(&r);
    // Powers of two keep t_end an exact multiple of dt and of dt / 2.
    cfg.dt = (0.2 / fast).min(0.01).log2().floor().exp2();
    let steps = (5.0 / slow / cfg.dt).ceil().clamp(20.0, MAX_STEPS);
    cfg.t_end = steps * cfg.dt;
    cfg.subsample = 10;
    cfg
}

fn run(cfg: &ScenarioConfig) -> SimulationTrace {
    sim::run_scenario(cfg).unwrap()
}

fn final_norm(trace: &SimulationTrace) -> f64 {
    *trace.stacked_norms().last().unwrap()
}

proptest! {
    #![proptest_config(common::config(24))]

    #[test]
    fn identical_seeds_reproduce_the_csv(seed in any::<u64>(), m in 1usize..=3) {
        let mut cfg = random_scenario(seed, m, true, InputMode::Full);
        cfg.noise = NoiseConfig { process: 0.05, measurement: 0.05 };
        let first = run(&cfg).to_csv();
        prop_assert_eq!(&first, &run(&cfg).to_csv());
        cfg.seed = cfg.seed.wrapping_add(1);
        prop_assert_ne!(&first, &run(&cfg).to_csv());
    }

    #[test]
    fn noise_free_errors_stay_inside_the_envelope(seed in any::<u64>(), m in 1usize..=3) {
        let cfg = random_scenario(seed, m, true, InputMode::Full);
        let b = sim::envelope_check(&run(&cfg)).unwrap();
        prop_assert!(b.worst_ratio <= 1.0 + sim::ENVELOPE_TOL, "ratio {} at t = {}", b.worst_ratio, b.worst_time);
    }

    #[test]
    fn hidden_inputs_stay_inside_the_input_to_state_bound(seed in any::<u64>(), m in 2usize..=3) {
        let cfg = random_scenario(seed, m, true, InputMode::OwnOnly);
        let trace = run(&cfg);
        let b = sim::iss_check(&trace, &[Disturbance::HiddenInput], trace.input_sup).unwrap();
        prop_assert!(b.holds(sim::BOUND_SLACK), "ratio {} at t = {}", b.worst_ratio, b.worst_time);
    }

    #[test]
    fn errors_scale_with_the_initial_state(seed in any::<u64>(), m in 1usize..=3) {
        let cfg = random_scenario(seed, m, false, InputMode::Full);
        let mut doubled = cfg.clone();
        for xi in &mut doubled.x0 {
            for v in xi {
                *v *= 2.0;
            }
        }
        let (a, b) = (run(&cfg).stacked_norms(), run(&doubled).stacked_norms());
        for (na, nb) in a.iter().zip(&b) {
            prop_assert!((nb - 2.0 * na).abs() <= 1e-9 * na.max(1.0), "{nb} vs 2 x {na}");
        }
    }

    #[test]
    fn halving_the_step_changes_little(seed in any::<u64>(), m in 1usize..=3) {
        let mut cfg = random_scenario(seed, m, true, InputMode::Full);
        cfg.dt = cfg.dt.min(2f64.powi(-10));
        cfg.t_end = cfg.t_end.min(2.0);
        cfg.subsample = 1;
        let coarse = run(&cfg);
        let mut fine = cfg.clone();
        fine.dt /= 2.0;
        let fine = run(&fine);
        let x_coarse = &coarse.samples.last().unwrap().x;
        let x_fine = &fine.samples.last().unwrap().x;
        prop_assert!((final_norm(&coarse) - final_norm(&fine)).abs() < 1e-6);
        let scale = x_fine.iter().map(|v| v.to_f64().abs()).fold(1.0, f64::max);
        let dx = x_coarse.iter().zip(x_fine).map(|(a, b)| (a.to_f64() - b.to_f64()).abs()).fold(0.0, f64::max);
        prop_assert!(dx < 1e-6 * scale, "final plant states differ by {dx:e}");
    }
}
