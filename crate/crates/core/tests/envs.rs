use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use soiltdm::envs::{
    gen_expert_dataset, lqr_expert, stationary_covariance, EnvKind, Environment, LinGaussEnv,
};
use statrs::distribution::{ContinuousCDF, Normal};

/// Kolmogorov-Smirnov statistic of `samples` against N(0, 1).
fn ks_statistic(mut samples: Vec<f64>) -> f64 {
    let normal = Normal::new(0.0, 1.0).unwrap();
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal.cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn sampled_next_states_match_transition_density_marginals() {
    let n = 2000;
    let critical = 1.628 / (n as f64).sqrt();
    for name in EnvKind::NAMES {
        let env = EnvKind::from_name(name).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let s = vec![0.3, -0.6];
        let a = vec![0.4; env.action_dim()];
        let mean = env.drift(&s, &a);
        let samples: Vec<Vec<f64>> = (0..n)
            .map(|t| {
                env.step(&s, &a, t % env.horizon(), &mut rng)
                    .unwrap()
                    .next_state
            })
            .collect();
        for i in 0..env.state_dim() {
            let sd = env.noise().cov()[(i, i)].sqrt();
            let z: Vec<f64> = samples.iter().map(|x| (x[i] - mean[i]) / sd).collect();
            let d = ks_statistic(z);
            assert!(
                d < critical,
                "{name} dim {i}: KS statistic {d} >= {critical}"
            );
        }
        // The density used for scoring agrees with the sampler's mean.
        let at_mean = env.transition_logpdf(&s, &a, &mean).unwrap();
        assert!(samples
            .iter()
            .all(|x| env.transition_logpdf(&s, &a, x).unwrap() <= at_mean));
    }
}

fn closed_loop_covariance(env: &LinGaussEnv, gain: &DMatrix<f64>, action_std: f64) -> DMatrix<f64> {
    let a_cl = &env.a - &env.b * gain;
    let m = env.b.ncols();
    let w = env.noise().cov()
        + &env.b
            * DMatrix::from_diagonal_element(m, m, action_std * action_std)
            * env.b.transpose();
    stationary_covariance(&a_cl, &w).unwrap()
}

#[test]
fn expert_dataset_stationary_mean_matches_closed_loop() {
    let env = LinGaussEnv::standard().unwrap();
    let expert = lqr_expert(&env, 0.9, 0.1).unwrap();
    let sigma = closed_loop_covariance(&env, &expert.gain, 0.1);
    let ds = gen_expert_dataset(&env, &expert, 10, false, 23).unwrap();
    // Final states are far past the transient and independent across episodes.
    for i in 0..2 {
        let finals: Vec<f64> = ds
            .episodes
            .iter()
            .map(|e| e.states[[e.states.nrows() - 1, i]])
            .collect();
        let mean = finals.iter().sum::<f64>() / finals.len() as f64;
        let bound = 3.0 * (sigma[(i, i)] / finals.len() as f64).sqrt();
        assert!(mean.abs() <= bound, "dim {i}: mean {mean} exceeds {bound}");
    }
}

#[test]
fn expert_state_variance_matches_lyapunov_solution() {
    let env = LinGaussEnv::standard().unwrap();
    let expert = lqr_expert(&env, 0.9, 0.1).unwrap();
    let sigma = closed_loop_covariance(&env, &expert.gain, 0.1);
    let ds = gen_expert_dataset(&env, &expert, 400, false, 29).unwrap();
    for i in 0..2 {
        let finals: Vec<f64> = ds
            .episodes
            .iter()
            .map(|e| e.states[[e.states.nrows() - 1, i]])
            .collect();
        let var = finals.iter().map(|x| x * x).sum::<f64>() / finals.len() as f64;
        let ratio = var / sigma[(i, i)];
        // Relative standard error of a 400-sample variance is about 7%.
        assert!(
            (0.75..1.25).contains(&ratio),
            "dim {i}: variance ratio {ratio}"
        );
    }
}
