//! Stacking, evaluation and joint observability of random coupled models.

mod common;

use distobs::mas::random::{random_model, random_strongly_connected, RandomModelSpec};
use distobs::mas::MasModel;
use nalgebra::{Complex, DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn model_strategy(max_agents: usize) -> impl Strategy<Value = (MasModel, u64)> {
    (any::<u64>(), 1usize..=max_agents, 0.0f64..0.9).prop_map(|(seed, m, p)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gc = random_strongly_connected(&mut rng, m, 0.2);
        let spec = RandomModelSpec { agents: m, max_state_dim: 3, coupling_p: p, unstable_diagonal: false };
        (random_model(&mut rng, spec, gc), seed)
    })
}

fn numerical_rank(sv: &[f64]) -> usize {
    let top = sv.iter().copied().fold(0.0, f64::max);
    sv.iter().filter(|&&s| s > 1e-9 * top).count()
}

/// `[C; C A; ...; C A^(n-1)]` with `A` scaled to unit spectral radius, which
/// leaves the rank unchanged and keeps the powers bounded.
fn scaled_observability_rank(a: &DMatrix<f64>, c: &DMatrix<f64>) -> usize {
    let n = a.nrows();
    let rho = common::eigs(a).iter().map(|z| z.norm()).fold(1.0, f64::max);
    let a = a / rho;
    let p = c.nrows();
    let mut o = DMatrix::zeros(p * n, n);
    let mut block = c.clone();
    for k in 0..n {
        o.view_mut((k * p, 0), (p, n)).copy_from(&block);
        block = &block * &a;
    }
    numerical_rank(o.singular_values().as_slice())
}

/// Popov-Belevitch-Hautus test: `[A - λI; C]` has full column rank at every
/// eigenvalue `λ` of `A`.
fn pbh_observable(a: &DMatrix<f64>, c: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    let p = c.nrows();
    common::eigs(a).iter().all(|&lam| {
        let m = DMatrix::<Complex<f64>>::from_fn(n + p, n, |r, k| {
            if r < n {
                Complex::new(a[(r, k)], 0.0) - if r == k { lam } else { Complex::new(0.0, 0.0) }
            } else {
                Complex::new(c[(r - n, k)], 0.0)
            }
        });
        numerical_rank(m.singular_values().as_slice()) == n
    })
}

proptest! {
    #![proptest_config(common::config(100))]

    #[test]
    fn stacked_blocks_round_trip((model, _) in model_strategy(5)) {
        let st = model.stack();
        let m = model.agent_count();
        for i in 0..m {
            for j in 0..m {
                let ni = model.agent(i).state_dim();
                let nj = model.agent(j).state_dim();
                let pi = model.agent(i).output_dim();
                let kj = model.agent(j).input_dim();
                prop_assert_eq!(st.a_block(i, j), model.a(i, j).cloned().unwrap_or_else(|| DMatrix::zeros(ni, nj)));
                prop_assert_eq!(st.c_block(i, j), model.c(i, j).cloned().unwrap_or_else(|| DMatrix::zeros(pi, nj)));
                let b = if i == j { model.agent(i).b.clone() } else { DMatrix::zeros(ni, kj) };
                prop_assert_eq!(st.b_block(i, j), b);
            }
        }
    }

    #[test]
    fn blockwise_and_stacked_evaluation_agree((model, seed) in model_strategy(5)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
        let st = model.stack();
        let x = DVector::from_fn(model.total_state_dim(), |_, _| rng.random_range(-2.0..2.0));
        let u = DVector::from_fn(model.total_input_dim(), |_, _| rng.random_range(-2.0..2.0));
        let dx = model.plant_derivative(&x, &u).unwrap();
        let want = &st.a * &x + &st.b * &u;
        prop_assert!((&dx - &want).amax() <= 1e-12 * want.amax().max(1.0));
        let y = model.plant_output(&x).unwrap();
        let want = &st.c * &x;
        prop_assert!((&y - &want).amax() <= 1e-12 * want.amax().max(1.0));
    }

    #[test]
    fn structural_assumptions_imply_joint_observability((model, _) in model_strategy(5)) {
        prop_assert!(model.check_assumptions().is_ok());
        let st = model.stack();
        prop_assert_eq!(scaled_observability_rank(&st.a, &st.c), model.total_state_dim());
        prop_assert!(pbh_observable(&st.a, &st.c));
    }
}
