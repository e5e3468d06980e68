use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::policy::{standard_normal, GaussianTanhPolicy};
use crate::diffcore::{Activation, Mlp, MlpLayout};
use crate::error::{check_dim, Error, Result};

/// Twin soft Q-functions over `(state, action)` with Polyak-averaged targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QPair {
    pub q1: Mlp,
    pub q2: Mlp,
    pub target1: Mlp,
    pub target2: Mlp,
    state_dim: usize,
    action_dim: usize,
}

impl QPair {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut widths = vec![state_dim + action_dim];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let layout = MlpLayout::new(widths, activation)?;
        let q1 = Mlp::new(layout.clone(), rng);
        let q2 = Mlp::new(layout, rng);
        Ok(Self {
            target1: q1.clone(),
            target2: q2.clone(),
            q1,
            q2,
            state_dim,
            action_dim,
        })
    }

    fn input(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_dim("critic state width", self.state_dim, states.ncols())?;
        check_dim("critic action width", self.action_dim, actions.ncols())?;
        check_dim("critic batch rows", states.nrows(), actions.nrows())?;
        Ok(concatenate![Axis(1), states, actions])
    }

    pub fn values(net: &Mlp, input: &Array2<f64>) -> Result<Array1<f64>> {
        Ok(net.forward_batch(input.view())?.column(0).to_owned())
    }

    /// `(Q1(s, a), Q2(s, a))`.
    pub fn online(
        &self,
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
    ) -> Result<(Array1<f64>, Array1<f64>)> {
        let x = self.input(states, actions)?;
        Ok((Self::values(&self.q1, &x)?, Self::values(&self.q2, &x)?))
    }

    /// `min(Q1', Q2')(s, a)` over the target networks.
    pub fn min_target(
        &self,
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
    ) -> Result<Array1<f64>> {
        let x = self.input(states, actions)?;
        let t1 = Self::values(&self.target1, &x)?;
        let t2 = Self::values(&self.target2, &x)?;
        Ok(ndarray::Zip::from(&t1)
            .and(&t2)
            .map_collect(|a, b| a.min(*b)))
    }

    /// `target <- tau * online + (1 - tau) * target`.
    pub fn soft_update(&mut self, tau: f64) {
        for (online, target) in [(&self.q1, &mut self.target1), (&self.q2, &mut self.target2)] {
            for (t, o) in target.params_mut().iter_mut().zip(online.params()) {
                *t = tau * o + (1.0 - tau) * *t;
            }
        }
    }

    /// Gradient of `sum_i w_i * min(Q1, Q2)(s_i, a_i)` with respect to the actions.
    pub(crate) fn min_q_action_grad(
        &self,
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
        weights: &Array1<f64>,
    ) -> Result<(Array1<f64>, Array2<f64>)> {
        let x = self.input(states, actions)?;
        let (o1, tape1) = self.q1.layout().forward_tape(self.q1.params(), x.view())?;
        let (o2, tape2) = self.q2.layout().forward_tape(self.q2.params(), x.view())?;
        let n = x.nrows();
        let mut g1 = Array2::zeros((n, 1));
        let mut g2 = Array2::zeros((n, 1));
        let mut min_q = Array1::zeros(n);
        for i in 0..n {
            if o1[[i, 0]] <= o2[[i, 0]] {
                g1[[i, 0]] = weights[i];
                min_q[i] = o1[[i, 0]];
            } else {
                g2[[i, 0]] = weights[i];
                min_q[i] = o2[[i, 0]];
            }
        }
        let mut scratch = vec![0.0; self.q1.params().len()];
        let gi1 = self
            .q1
            .layout()
            .backward(self.q1.params(), &tape1, g1.view(), &mut scratch);
        let gi2 = self
            .q2
            .layout()
            .backward(self.q2.params(), &tape2, g2.view(), &mut scratch);
        let grad_actions = (&gi1 + &gi2).slice(s![.., self.state_dim..]).to_owned();
        Ok((min_q, grad_actions))
    }
}

/// Losses and gradients of both critics.
#[derive(Clone, Debug, PartialEq)]
pub struct QLossOutput {
    pub loss_q1: f64,
    pub loss_q2: f64,
    pub grad_q1: Vec<f64>,
    pub grad_q2: Vec<f64>,
    pub targets: Array1<f64>,
}

impl QLossOutput {
    /// Mean of the two critics' losses.
    pub fn loss(&self) -> f64 {
        0.5 * (self.loss_q1 + self.loss_q2)
    }
}

/// Soft Bellman targets `r + gamma * (1 - terminal) * (min Q'(s', a') - alpha log pi(a'|s'))`
/// with `a' = tanh(mean + std * noise)`.
#[allow(clippy::too_many_arguments)]
pub fn soft_targets(
    policy: &GaussianTanhPolicy,
    q: &QPair,
    next_states: ArrayView2<f64>,
    rewards: &Array1<f64>,
    terminals: &[bool],
    gamma: f64,
    alpha: f64,
    noise: &Array2<f64>,
) -> Result<Array1<f64>> {
    check_dim("reward count", next_states.nrows(), rewards.len())?;
    check_dim("terminal count", next_states.nrows(), terminals.len())?;
    if gamma == 0.0 {
        return Ok(rewards.clone());
    }
    let (next_actions, next_log_probs) = policy.actions_from_noise(next_states, noise)?;
    let min_q = q.min_target(next_states, next_actions.view())?;
    Ok(Array1::from_shape_fn(rewards.len(), |i| {
        let bootstrap = if terminals[i] {
            0.0
        } else {
            min_q[i] - alpha * next_log_probs[i]
        };
        rewards[i] + gamma * bootstrap
    }))
}

/// `0.5 * mean((Q_k(s, a) - y)^2)` and its gradient, for each critic.
pub fn q_loss_with_targets(
    q: &QPair,
    states: ArrayView2<f64>,
    actions: ArrayView2<f64>,
    targets: Array1<f64>,
) -> Result<QLossOutput> {
    let n = states.nrows();
    if n == 0 {
        return Err(Error::Config("q loss needs a non-empty batch".into()));
    }
    check_dim("target count", n, targets.len())?;
    let x = q.input(states, actions)?;
    let run = |net: &Mlp| -> Result<(f64, Vec<f64>)> {
        let (out, tape) = net.layout().forward_tape(net.params(), x.view())?;
        let diff = &out.column(0) - &targets;
        let loss = 0.5 * diff.mapv(|d| d * d).mean().expect("non-empty");
        let g_out = (diff / n as f64).insert_axis(Axis(1));
        let mut grad = vec![0.0; net.params().len()];
        net.layout()
            .backward(net.params(), &tape, g_out.view(), &mut grad);
        Ok((loss, grad))
    };
    let (loss_q1, grad_q1) = run(&q.q1)?;
    let (loss_q2, grad_q2) = run(&q.q2)?;
    Ok(QLossOutput {
        loss_q1,
        loss_q2,
        grad_q1,
        grad_q2,
        targets,
    })
}

/// Full critic loss on a batch: fresh next actions from `policy`, given rewards.
#[allow(clippy::too_many_arguments)]
pub fn q_loss<R: Rng + ?Sized>(
    policy: &GaussianTanhPolicy,
    q: &QPair,
    batch: &super::Batch,
    rewards: &Array1<f64>,
    gamma: f64,
    alpha: f64,
    rng: &mut R,
) -> Result<QLossOutput> {
    if batch.is_empty() {
        return Err(Error::Config("q loss needs a non-empty batch".into()));
    }
    let noise = standard_normal(batch.len(), batch.actions.ncols(), rng);
    let targets = soft_targets(
        policy,
        q,
        batch.next_states.view(),
        rewards,
        &batch.terminals,
        gamma,
        alpha,
        &noise,
    )?;
    q_loss_with_targets(q, batch.states.view(), batch.actions.view(), targets)
}

/// Result of evaluating the policy objective.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyLossOutput {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub log_probs: Array1<f64>,
}

/// `mean_i(alpha * log pi(a_i|s_i) - min Q(s_i, a_i))` with reparameterized
/// `a_i = tanh(mean(s_i) + std(s_i) * noise_i)`, and its policy gradient.
pub fn policy_loss_with_noise(
    policy: &GaussianTanhPolicy,
    q: &QPair,
    states: ArrayView2<f64>,
    noise: Array2<f64>,
    alpha: f64,
) -> Result<PolicyLossOutput> {
    let n = states.nrows();
    if n == 0 {
        return Err(Error::Config("policy loss needs a non-empty batch".into()));
    }
    let sample = policy.rsample(states, noise)?;
    let inv_n = 1.0 / n as f64;
    let (min_q, grad_actions) =
        q.min_q_action_grad(states, sample.actions.view(), &Array1::from_elem(n, -inv_n))?;
    let loss = (alpha * &sample.log_probs - &min_q)
        .mean()
        .expect("non-empty");
    let mut grad = vec![0.0; policy.params().len()];
    policy.backward(
        &sample,
        &grad_actions,
        &Array1::from_elem(n, alpha * inv_n),
        &mut grad,
    );
    Ok(PolicyLossOutput {
        loss,
        grad,
        log_probs: sample.log_probs,
    })
}

pub fn policy_loss<R: Rng + ?Sized>(
    policy: &GaussianTanhPolicy,
    q: &QPair,
    states: ArrayView2<f64>,
    alpha: f64,
    rng: &mut R,
) -> Result<PolicyLossOutput> {
    let noise = standard_normal(states.nrows(), q.action_dim, rng);
    policy_loss_with_noise(policy, q, states, noise, alpha)
}
