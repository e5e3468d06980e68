use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use soiltdm::envs::{parallel_rollouts, Environment, LinGaussEnv, UniformRandomPolicy};
use soiltdm::flows::{
    heldout_loglik, train_mle, ConditionalFlow, FlowDataset, FlowSpec, NoiseSchedule, TrainOptions,
};

fn options(steps: usize) -> TrainOptions {
    TrainOptions {
        steps,
        ..TrainOptions::default()
    }
}

fn gaussian_1d(rng: &mut ChaCha8Rng, n: usize) -> FlowDataset {
    let x = Array2::from_shape_fn((n, 1), |_| 3.0 + rng.sample::<f64, _>(StandardNormal));
    FlowDataset::new(x, Array2::zeros((n, 1))).unwrap()
}

/// `x = (c + z1, 0.5 c + 0.8 z1 + 0.6 z2)` for a scalar condition `c`.
fn correlated_2d(rng: &mut ChaCha8Rng, n: usize) -> FlowDataset {
    let mut x = Array2::zeros((n, 2));
    let mut cond = Array2::zeros((n, 1));
    for i in 0..n {
        let c: f64 = rng.random_range(-1.0..1.0);
        let (z1, z2): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
        cond[[i, 0]] = c;
        x[[i, 0]] = c + z1;
        x[[i, 1]] = 0.5 * c + 0.8 * z1 + 0.6 * z2;
    }
    FlowDataset::new(x, cond).unwrap()
}

#[test]
fn one_dimensional_gaussian_is_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let data = gaussian_1d(&mut rng, 5000);
    let mut flow = ConditionalFlow::new(FlowSpec::desk(1, 1, 2.0), &mut rng).unwrap();
    train_mle(
        &mut flow,
        &data,
        &NoiseSchedule::none(),
        &options(1500),
        &mut rng,
    )
    .unwrap();
    // log N(3; 3, 1) = -0.5 log(2 pi).
    let lp = flow.log_prob_one(&[3.0], &[0.0]).unwrap();
    assert!((lp + 0.918_938_533).abs() < 0.1, "log p(3) = {lp}");
    let samples = flow
        .sample(Array2::zeros((20_000, 1)).view(), &mut rng)
        .unwrap();
    let mean = samples.mean_axis(Axis(0)).unwrap()[0];
    assert!((mean - 3.0).abs() < 0.05, "sample mean {mean}");
}

#[test]
fn trained_two_dimensional_density_normalizes_on_a_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let data = correlated_2d(&mut rng, 4000);
    let mut flow = ConditionalFlow::new(FlowSpec::desk(2, 1, 2.0), &mut rng).unwrap();
    train_mle(
        &mut flow,
        &data,
        &NoiseSchedule::none(),
        &options(1000),
        &mut rng,
    )
    .unwrap();
    let (n, lo, hi) = (241usize, -8.0, 8.0);
    let h = (hi - lo) / (n - 1) as f64;
    for c in [-0.7, 0.0, 0.9] {
        let pts = Array2::from_shape_fn((n * n, 2), |(i, j)| {
            lo + h * if j == 0 {
                (i / n) as f64
            } else {
                (i % n) as f64
            }
        });
        let cond = Array2::from_elem((n * n, 1), c);
        let mass: f64 = flow
            .log_prob(pts.view(), cond.view())
            .unwrap()
            .iter()
            .map(|l| l.exp())
            .sum::<f64>()
            * h
            * h;
        assert!(
            (0.98..=1.02).contains(&mass),
            "mass {mass} at condition {c}"
        );
    }
}

#[test]
fn sampled_log_probs_stay_in_a_plausible_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let data = correlated_2d(&mut rng, 4000);
    let mut flow = ConditionalFlow::new(FlowSpec::desk(2, 1, 2.0), &mut rng).unwrap();
    train_mle(
        &mut flow,
        &data,
        &NoiseSchedule::none(),
        &options(500),
        &mut rng,
    )
    .unwrap();
    let cond = Array2::from_shape_fn((5000, 1), |_| rng.random_range(-1.0..1.0));
    let s = flow.sample(cond.view(), &mut rng).unwrap();
    let mut lp = flow.log_prob(s.view(), cond.view()).unwrap().to_vec();
    lp.sort_by(f64::total_cmp);
    let p99 = lp[(0.99 * lp.len() as f64) as usize];
    let p01 = lp[(0.01 * lp.len() as f64) as usize];
    assert!(
        (-20.0..=5.0).contains(&p99) && (-20.0..=5.0).contains(&p01),
        "{p01} {p99}"
    );
}

#[test]
fn small_training_sets_are_fit_better_than_held_out_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let train = correlated_2d(&mut rng, 40);
    let test = correlated_2d(&mut rng, 2000);
    let spec = FlowSpec {
        hidden: 64,
        ..FlowSpec::desk(2, 1, 2.0)
    };
    let mut flow = ConditionalFlow::new(spec, &mut rng).unwrap();
    let opts = TrainOptions {
        batch: 40,
        ..options(2000)
    };
    train_mle(&mut flow, &train, &NoiseSchedule::none(), &opts, &mut rng).unwrap();
    let (tr, te) = (
        heldout_loglik(&flow, &train).unwrap(),
        heldout_loglik(&flow, &test).unwrap(),
    );
    assert!(tr > te, "train {tr} test {te}");
}

#[test]
fn forward_dynamics_flow_matches_the_exact_transition_density() {
    let env = LinGaussEnv::standard().unwrap();
    let trajs = parallel_rollouts(
        &env,
        &UniformRandomPolicy { action_dim: 1 },
        40,
        env.horizon(),
        5,
    )
    .unwrap();
    let rows: Vec<_> = trajs.iter().flat_map(|t| &t.transitions).collect();
    let split = rows.len() * 3 / 4;
    let to_data = |rs: &[&soiltdm::envs::Transition]| {
        let x = Array2::from_shape_fn((rs.len(), 2), |(i, j)| rs[i].next_state[j]);
        let c = Array2::from_shape_fn((rs.len(), 3), |(i, j)| {
            if j < 2 {
                rs[i].state[j]
            } else {
                rs[i].action[0]
            }
        });
        FlowDataset::new(x, c).unwrap()
    };
    let train = to_data(&rows[..split]);
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let spec = FlowSpec {
        n_blocks: 4,
        hidden: 32,
        cond_hidden: 32,
        cond_features: 16,
        ..FlowSpec::desk(2, 3, 1.0)
    };
    let mut flow = ConditionalFlow::new(spec, &mut rng).unwrap();
    train_mle(
        &mut flow,
        &train,
        &NoiseSchedule::none(),
        &options(3000),
        &mut rng,
    )
    .unwrap();
    let test = &rows[split..];
    let data = to_data(test);
    let lp = flow.log_prob(data.x.view(), data.cond.view()).unwrap();
    let diff: f64 = test
        .iter()
        .zip(lp.iter())
        .map(|(t, l)| {
            (env.transition_logpdf(&t.state, &t.action, &t.next_state)
                .unwrap()
                - l)
                .abs()
        })
        .sum::<f64>()
        / test.len() as f64;
    assert!(diff < 0.5, "mean |log mu_phi - log p| = {diff}");
}
