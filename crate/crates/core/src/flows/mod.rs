//! Conditional RealNVP density models.
//!
//! Each block is a GLOW-style affine coupling (both halves transformed, scale
//! exponents soft-clamped with `clamp * 2/pi * atan(raw / clamp)`) followed
//! by ActNorm. Conditions go through a shared encoder, then a per-block linear
//! head, and are concatenated to the passive half of every coupling subnet.
//!
//! One-dimensional inputs have no second half; their coupling subnet sees the
//! condition features only, which is equivalent to padding with a constant
//! auxiliary coordinate that is never transformed.

mod flow;
mod schedule;
mod train;

pub use flow::{standard_normal_logpdf, ActNorm, ConditionalFlow, FlowSpec};
pub use schedule::{NoiseMode, NoiseSchedule};
pub use train::{heldout_loglik, train_mle, FlowDataset, FlowTrainer, TrainHistory, TrainOptions};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::gradcheck::{central_difference, max_relative_error};
    use crate::error::Error;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    const LOG_2PI: f64 = 1.8378770664093453;

    fn small_spec(dim: usize, cond_dim: usize) -> FlowSpec {
        FlowSpec {
            n_blocks: 3,
            hidden: 8,
            cond_hidden: 8,
            cond_features: 4,
            ..FlowSpec::desk(dim, cond_dim, 2.0)
        }
    }

    /// A flow whose coupling subnets and ActNorm are away from the identity.
    fn random_flow(dim: usize, cond_dim: usize, seed: u64) -> ConditionalFlow {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut flow = ConditionalFlow::new(small_spec(dim, cond_dim), &mut rng).unwrap();
        for p in flow.params_mut() {
            *p += 0.3 * rng.sample::<f64, _>(StandardNormal);
        }
        flow
    }

    fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
    }

    #[test]
    fn identity_initialized_flow_is_standard_normal() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let flow = ConditionalFlow::new(FlowSpec::desk(3, 2, 6.0), &mut rng).unwrap();
        let x = array![[0.3, -1.2, 2.0]];
        let c = array![[1.0, -1.0]];
        let (z, logdet) = flow.forward(x.view(), c.view()).unwrap();
        assert_eq!(z, x);
        assert_eq!(logdet[0], 0.0);
        let expected = -0.5 * (0.09 + 1.44 + 4.0) - 1.5 * LOG_2PI;
        assert!((flow.log_prob(x.view(), c.view()).unwrap()[0] - expected).abs() < 1e-12);
        assert_eq!(flow.inverse(z.view(), c.view()).unwrap(), x);
    }

    #[test]
    fn zero_coupling_reduces_to_actnorm_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut flow = ConditionalFlow::new(small_spec(2, 1), &mut rng).unwrap();
        let an = ActNorm {
            log_scale: vec![0.5, -0.25],
            shift: vec![1.0, -2.0],
        };
        for k in 0..flow.n_blocks() {
            flow.set_actnorm(k, &an).unwrap();
        }
        let x = array![[0.7, -0.4]];
        let c = array![[0.1]];
        let (z, logdet) = flow.forward(x.view(), c.view()).unwrap();
        let mut expected = x.clone();
        for _ in 0..flow.n_blocks() {
            expected[[0, 0]] = expected[[0, 0]] * 0.5f64.exp() + 1.0;
            expected[[0, 1]] = expected[[0, 1]] * (-0.25f64).exp() - 2.0;
        }
        assert!((&z - &expected).iter().all(|v| v.abs() < 1e-12));
        assert!((logdet[0] - 3.0 * 0.25).abs() < 1e-12);
        let back = flow.inverse(z.view(), c.view()).unwrap();
        assert!((&back - &x).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn forward_then_inverse_reconstructs_input() {
        for (dim, cond_dim, seed) in [(1, 2, 3), (2, 0, 4), (3, 2, 5), (4, 3, 6)] {
            let flow = random_flow(dim, cond_dim, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let x = gaussian(&mut rng, 64, dim);
            let c = gaussian(&mut rng, 64, cond_dim);
            let (z, _) = flow.forward(x.view(), c.view()).unwrap();
            let back = flow.inverse(z.view(), c.view()).unwrap();
            let err = (&back - &x).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(err < 1e-6, "dim {dim}: reconstruction error {err}");

            let z = gaussian(&mut rng, 64, dim);
            let x = flow.inverse(z.view(), c.view()).unwrap();
            let (z2, _) = flow.forward(x.view(), c.view()).unwrap();
            let err = (&z2 - &z).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(err < 1e-6, "dim {dim}: latent round trip error {err}");
        }
    }

    #[test]
    fn logdet_matches_finite_difference_jacobian() {
        for (dim, seed) in [(1usize, 7u64), (2, 8), (3, 9), (4, 10)] {
            let flow = random_flow(dim, 2, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = gaussian(&mut rng, 1, dim);
            let c = gaussian(&mut rng, 1, 2);
            let (_, logdet) = flow.forward(x.view(), c.view()).unwrap();
            let h = 1e-6;
            let mut jac = nalgebra::DMatrix::<f64>::zeros(dim, dim);
            for j in 0..dim {
                let mut up = x.clone();
                let mut down = x.clone();
                up[[0, j]] += h;
                down[[0, j]] -= h;
                let (zu, _) = flow.forward(up.view(), c.view()).unwrap();
                let (zd, _) = flow.forward(down.view(), c.view()).unwrap();
                for i in 0..dim {
                    jac[(i, j)] = (zu[[0, i]] - zd[[0, i]]) / (2.0 * h);
                }
            }
            let numeric = jac.determinant().abs().ln();
            assert!(
                (numeric - logdet[0]).abs() < 1e-4,
                "dim {dim}: analytic {} numeric {numeric}",
                logdet[0]
            );
        }
    }

    #[test]
    fn nll_gradient_matches_finite_differences() {
        for (dim, cond_dim, seed) in [(1, 2, 20), (2, 0, 21), (2, 3, 22), (3, 1, 23)] {
            let flow = random_flow(dim, cond_dim, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = gaussian(&mut rng, 5, dim);
            let c = gaussian(&mut rng, 5, cond_dim);
            let (_, analytic) = flow.nll_and_grad(x.view(), c.view()).unwrap();
            let mut probe = flow.clone();
            let numeric = central_difference(flow.params(), 1e-5, |p| {
                probe.params_mut().copy_from_slice(p);
                -probe.log_prob(x.view(), c.view()).unwrap().mean().unwrap()
            });
            let err = max_relative_error(&analytic, &numeric);
            assert!(
                err < 1e-4,
                "dim {dim} cond {cond_dim}: relative error {err}"
            );
        }
    }

    #[test]
    fn scale_exponents_stay_within_clamp() {
        let mut flow = random_flow(3, 2, 30);
        for p in flow.params_mut() {
            *p *= 20.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let x = gaussian(&mut rng, 32, 3);
        let c = gaussian(&mut rng, 32, 2) * 10.0;
        let clamp = flow.spec().clamp;
        let exps = flow.scale_exponents(x.view(), c.view()).unwrap();
        assert!(exps.iter().all(|e| e.abs() <= clamp));
    }

    #[test]
    fn unconditional_flow_ignores_empty_condition() {
        let flow = random_flow(2, 0, 40);
        let x = array![[0.2, 0.9], [-1.0, 0.3]];
        let empty = Array2::<f64>::zeros((2, 0));
        let lp = flow.log_prob(x.view(), empty.view()).unwrap();
        let lp0 = flow.log_prob_one(&[0.2, 0.9], &[]).unwrap();
        assert_eq!(lp[0], lp0);
    }

    #[test]
    fn heldout_loglik_of_identity_flow_on_standard_normal_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let d = 3;
        let flow = ConditionalFlow::new(FlowSpec::desk(d, 0, 6.0), &mut rng).unwrap();
        let data =
            FlowDataset::new(gaussian(&mut rng, 20_000, d), Array2::zeros((20_000, 0))).unwrap();
        let ll = heldout_loglik(&flow, &data).unwrap();
        let expected = -0.5 * d as f64 * LOG_2PI - 0.5 * d as f64;
        assert!((ll - expected).abs() < 0.1, "{ll} vs {expected}");
    }

    #[test]
    fn non_finite_inputs_are_numeric_errors() {
        let flow = random_flow(2, 1, 60);
        let x = array![[f64::NAN, 0.0]];
        let c = array![[0.0]];
        assert!(matches!(
            flow.log_prob(x.view(), c.view()),
            Err(Error::Numeric { .. })
        ));
        assert!(matches!(
            flow.log_prob(array![[0.0, 1.0, 2.0]].view(), c.view()),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn empty_dataset_is_a_configuration_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let mut flow = ConditionalFlow::new(small_spec(2, 1), &mut rng).unwrap();
        let data = FlowDataset::new(Array2::zeros((0, 2)), Array2::zeros((0, 1))).unwrap();
        let err = train_mle(
            &mut flow,
            &data,
            &NoiseSchedule::none(),
            &TrainOptions::default(),
            &mut rng,
        );
        assert!(matches!(err, Err(Error::Config(_))));
        assert!(matches!(
            heldout_loglik(&flow, &data),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn actnorm_initialization_standardizes_first_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let mut flow = random_flow(2, 1, 62);
        let x = gaussian(&mut rng, 500, 2) * 3.0 + 5.0;
        let c = gaussian(&mut rng, 500, 1);
        flow.initialize_actnorm(x.view(), c.view()).unwrap();
        let (z, _) = flow.forward(x.view(), c.view()).unwrap();
        let mean = z.mean_axis(ndarray::Axis(0)).unwrap();
        let std = z.std_axis(ndarray::Axis(0), 0.0);
        for j in 0..2 {
            assert!(mean[j].abs() < 1e-9, "mean {}", mean[j]);
            assert!((std[j] - 1.0).abs() < 1e-9, "std {}", std[j]);
        }
    }

    #[test]
    fn repeated_point_nll_decreases() {
        let mut rng = ChaCha8Rng::seed_from_u64(63);
        let mut flow = ConditionalFlow::new(small_spec(2, 1), &mut rng).unwrap();
        let n = 64;
        let x = Array2::from_shape_fn((n, 2), |(_, j)| if j == 0 { 0.5 } else { -0.3 });
        let c = Array2::from_elem((n, 1), 1.0);
        // Jitter keeps the first-batch ActNorm statistics non-degenerate.
        let jitter = gaussian(&mut rng, n, 2) * 0.1;
        flow.initialize_actnorm((&x + &jitter).view(), c.view())
            .unwrap();
        let data = FlowDataset::new(x, c).unwrap();
        let options = TrainOptions {
            steps: 200,
            batch: 32,
            learning_rate: 1e-3,
            max_grad_norm: None,
        };
        let hist = train_mle(&mut flow, &data, &NoiseSchedule::none(), &options, &mut rng).unwrap();
        let head: f64 = hist.nll[..20].iter().sum::<f64>() / 20.0;
        let tail: f64 = hist.nll[180..].iter().sum::<f64>() / 20.0;
        assert!(tail < head - 1.0, "head {head} tail {tail}");
        assert!(hist.nll.windows(50).all(|w| w[49] < w[0]));
    }

    #[test]
    fn flow_checkpoint_round_trip() {
        let flow = random_flow(2, 3, 70);
        let bytes = bincode::serialize(&flow).unwrap();
        let back: ConditionalFlow = bincode::deserialize(&bytes).unwrap();
        assert_eq!(back, flow);
        let x = array![[0.1, 0.2]];
        let c = array![[0.0, 1.0, -1.0]];
        assert_eq!(
            back.log_prob(x.view(), c.view()).unwrap(),
            flow.log_prob(x.view(), c.view()).unwrap()
        );
    }
}
