//! Exact enumeration on small finite MDPs.
//!
//! Everything here is computed in closed form or by brute-force enumeration
//! of state sequences, which makes it a ground truth for the identities the
//! continuous machinery relies on: the Bayes rewrite of the state-transition
//! density, the decomposition of summed joint-transition KL divergences, the
//! reduction of trajectory KL minimisation to max-entropy RL, and the
//! monotone decrease of the objective under alternating inverse-model refits
//! and policy improvements with a mixture replay buffer.

mod suite;

pub use suite::{run_suite, IdentityRow};

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::sac::Batch;
use crate::soiltdm::{ClipSpec, PolicyDensity, TransitionDensities};

const ROW_TOL: f64 = 1e-12;
/// Floor applied to random probabilities before renormalisation.
pub const PROB_FLOOR: f64 = 1e-6;

fn check_row(row: &[f64], context: &str) -> Result<()> {
    let sum: f64 = row.iter().sum();
    if row.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > ROW_TOL {
        return Err(Error::Config(format!(
            "{context} is not a probability vector: {row:?}"
        )));
    }
    Ok(())
}

fn random_simplex<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total: f64 = raw.iter().sum();
    let floored: Vec<f64> = raw.iter().map(|v| (v / total).max(PROB_FLOOR)).collect();
    let total: f64 = floored.iter().sum();
    floored.iter().map(|v| v / total).collect()
}

/// `sum_x p(x) log(p(x) / q(x))` with `0 log 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, q)| p * (p.ln() - q.ln()))
        .sum()
}

/// Finite MDP with transition tensor `p(s'|s,a)`, start distribution and horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub horizon: usize,
    pub p0: Vec<f64>,
    /// Indexed `(s * n_actions + a) * n_states + s'`.
    pub transition: Vec<f64>,
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        horizon: usize,
        p0: Vec<f64>,
        transition: Vec<f64>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::Config(
                "MDP needs at least one state and one action".into(),
            ));
        }
        check_dim("start distribution", n_states, p0.len())?;
        check_dim(
            "transition tensor",
            n_states * n_actions * n_states,
            transition.len(),
        )?;
        check_row(&p0, "start distribution")?;
        for row in transition.chunks(n_states) {
            check_row(row, "transition row")?;
        }
        Ok(Self {
            n_states,
            n_actions,
            horizon,
            p0,
            transition,
        })
    }

    /// Random instance with every probability floored at [`PROB_FLOOR`] and renormalised.
    pub fn random<R: Rng + ?Sized>(
        rng: &mut R,
        n_states: usize,
        n_actions: usize,
        horizon: usize,
    ) -> Result<Self> {
        let p0 = random_simplex(rng, n_states);
        let transition = (0..n_states * n_actions)
            .flat_map(|_| random_simplex(rng, n_states))
            .collect();
        Self::new(n_states, n_actions, horizon, p0, transition)
    }

    pub fn p(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + s2]
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.transition.iter().chain(&self.p0).all(|&p| p > 0.0)
    }
}

/// `pi_t(a|s)`; a single step means a stationary policy.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularPolicy {
    pub n_states: usize,
    pub n_actions: usize,
    /// One `n_states * n_actions` matrix per time step, row-major in `s`.
    pub steps: Vec<Vec<f64>>,
}

impl TabularPolicy {
    pub fn time_varying(n_states: usize, n_actions: usize, steps: Vec<Vec<f64>>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::Config("policy needs at least one step".into()));
        }
        for m in &steps {
            check_dim("policy matrix", n_states * n_actions, m.len())?;
            for row in m.chunks(n_actions) {
                check_row(row, "policy row")?;
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            steps,
        })
    }

    pub fn stationary(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        Self::time_varying(n_states, n_actions, vec![probs])
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self::stationary(
            n_states,
            n_actions,
            vec![1.0 / n_actions as f64; n_states * n_actions],
        )
        .expect("valid")
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, n_states: usize, n_actions: usize) -> Self {
        let probs = (0..n_states)
            .flat_map(|_| random_simplex(rng, n_actions))
            .collect();
        Self::stationary(n_states, n_actions, probs).expect("valid")
    }

    pub fn is_stationary(&self) -> bool {
        self.steps.len() == 1
    }

    /// `pi_t(a|s)`; steps past the stored ones reuse the last matrix.
    pub fn prob(&self, t: usize, s: usize, a: usize) -> f64 {
        self.steps[t.min(self.steps.len() - 1)][s * self.n_actions + a]
    }

    fn check_fits(&self, mdp: &TabularMdp) -> Result<()> {
        check_dim("policy state count", mdp.n_states, self.n_states)?;
        check_dim("policy action count", mdp.n_actions, self.n_actions)
    }

    /// `K_t(s, s') = sum_a pi_t(a|s) p(s'|s,a)`, row-major.
    pub fn kernel(&self, mdp: &TabularMdp, t: usize) -> Vec<f64> {
        let n = mdp.n_states;
        let mut k = vec![0.0; n * n];
        for s in 0..n {
            for a in 0..mdp.n_actions {
                let pa = self.prob(t, s, a);
                for s2 in 0..n {
                    k[s * n + s2] += pa * mdp.p(s, a, s2);
                }
            }
        }
        k
    }

    /// Exact posterior `pi'_t(a|s',s) = p(s'|s,a) pi_t(a|s) / K_t(s,s')`,
    /// indexed `(s * n_states + s') * n_actions + a`; zero where `K_t = 0`.
    pub fn posterior(&self, mdp: &TabularMdp, t: usize) -> Vec<f64> {
        let (n, m) = (mdp.n_states, mdp.n_actions);
        let k = self.kernel(mdp, t);
        let mut post = vec![0.0; n * n * m];
        for s in 0..n {
            for s2 in 0..n {
                let ks = k[s * n + s2];
                if ks > 0.0 {
                    for a in 0..m {
                        post[(s * n + s2) * m + a] = mdp.p(s, a, s2) * self.prob(t, s, a) / ks;
                    }
                }
            }
        }
        post
    }
}

/// Per-time-step state distributions under a policy.
#[derive(Clone, Debug, PartialEq)]
pub struct Marginals {
    /// `mu(s_i)` for `i = 0..=T`.
    pub state: Vec<Vec<f64>>,
    /// `mu(s_i, s_{i+1})` for `i = 0..T`, row-major in `s_i`.
    pub joint: Vec<Vec<f64>>,
    /// `mu(s_{i+1}|s_i)`, zero rows where `mu(s_i) = 0`.
    pub conditional: Vec<Vec<f64>>,
}

pub fn state_marginals(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<Marginals> {
    policy.check_fits(mdp)?;
    let n = mdp.n_states;
    let mut state = vec![mdp.p0.clone()];
    let mut joint = Vec::with_capacity(mdp.horizon);
    let mut conditional = Vec::with_capacity(mdp.horizon);
    for t in 0..mdp.horizon {
        let k = policy.kernel(mdp, t);
        let mu = &state[t];
        let mut j = vec![0.0; n * n];
        let mut c = vec![0.0; n * n];
        let mut next = vec![0.0; n];
        for s in 0..n {
            for s2 in 0..n {
                j[s * n + s2] = mu[s] * k[s * n + s2];
                next[s2] += j[s * n + s2];
                if mu[s] > 0.0 {
                    c[s * n + s2] = k[s * n + s2];
                }
            }
        }
        joint.push(j);
        conditional.push(c);
        state.push(next);
    }
    Ok(Marginals {
        state,
        joint,
        conditional,
    })
}

/// Worst `|mu(s'|s) - p(s'|a,s) pi(a|s) / pi'(a|s',s)|` over all
/// `(t, s, a, s')` with `pi' > 0`.
pub fn bayes_identity(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<f64> {
    policy.check_fits(mdp)?;
    let (n, m) = (mdp.n_states, mdp.n_actions);
    let mut worst: f64 = 0.0;
    for t in 0..policy.steps.len().min(mdp.horizon.max(1)) {
        let k = policy.kernel(mdp, t);
        let post = policy.posterior(mdp, t);
        for s in 0..n {
            for s2 in 0..n {
                for a in 0..m {
                    let q = post[(s * n + s2) * m + a];
                    if q > 0.0 {
                        let rebuilt = mdp.p(s, a, s2) * policy.prob(t, s, a) / q;
                        worst = worst.max((rebuilt - k[s * n + s2]).abs());
                    }
                }
            }
        }
    }
    Ok(worst)
}

/// Calls `visit(sequence, prob_a, prob_b)` for every state sequence
/// `s_0..s_T` with positive probability under policy `a`.
fn enumerate_sequences<F: FnMut(&[usize], f64, f64)>(
    mdp: &TabularMdp,
    ka: &[Vec<f64>],
    kb: &[Vec<f64>],
    mut visit: F,
) {
    let n = mdp.n_states;
    fn go<F: FnMut(&[usize], f64, f64)>(
        n: usize,
        ka: &[Vec<f64>],
        kb: &[Vec<f64>],
        seq: &mut Vec<usize>,
        pa: f64,
        pb: f64,
        visit: &mut F,
    ) {
        let t = seq.len() - 1;
        if t == ka.len() {
            visit(seq, pa, pb);
            return;
        }
        let s = seq[t];
        for s2 in 0..n {
            let qa = ka[t][s * n + s2];
            if qa > 0.0 {
                seq.push(s2);
                go(n, ka, kb, seq, pa * qa, pb * kb[t][s * n + s2], visit);
                seq.pop();
            }
        }
    }
    for s0 in 0..n {
        if mdp.p0[s0] > 0.0 {
            let mut seq = vec![s0];
            go(n, ka, kb, &mut seq, mdp.p0[s0], mdp.p0[s0], &mut visit);
        }
    }
}

fn kernels(mdp: &TabularMdp, policy: &TabularPolicy) -> Vec<Vec<f64>> {
    (0..mdp.horizon).map(|t| policy.kernel(mdp, t)).collect()
}

/// KL divergence between the state-sequence distributions of two policies,
/// by enumerating every sequence.
pub fn trajectory_kl(
    mdp: &TabularMdp,
    policy_a: &TabularPolicy,
    policy_b: &TabularPolicy,
) -> Result<f64> {
    policy_a.check_fits(mdp)?;
    policy_b.check_fits(mdp)?;
    trajectory_kl_kernels(mdp, &kernels(mdp, policy_a), &kernels(mdp, policy_b))
}

fn trajectory_kl_kernels(mdp: &TabularMdp, ka: &[Vec<f64>], kb: &[Vec<f64>]) -> Result<f64> {
    let mut kl = 0.0;
    let mut unsupported = false;
    enumerate_sequences(mdp, ka, kb, |_, pa, pb| {
        if pb > 0.0 {
            kl += pa * (pa.ln() - pb.ln());
        } else {
            unsupported = true;
        }
    });
    if unsupported {
        return Err(Error::Config(
            "trajectory KL is infinite: support mismatch".into(),
        ));
    }
    Ok(kl)
}

/// Both sides of the joint-transition KL decomposition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LfoReport {
    /// `sum_{i<T} KL(mu_a(s_i, s_{i+1}) || mu_b(s_i, s_{i+1}))`.
    pub lhs: f64,
    /// Trajectory KL plus `sum_{i=1}^{T-1} KL(mu_a(s_i) || mu_b(s_i))`.
    pub rhs: f64,
    pub residual: f64,
}

pub fn lfo_identity(
    mdp: &TabularMdp,
    policy_a: &TabularPolicy,
    policy_b: &TabularPolicy,
) -> Result<LfoReport> {
    let ma = state_marginals(mdp, policy_a)?;
    let mb = state_marginals(mdp, policy_b)?;
    let lhs: f64 = ma
        .joint
        .iter()
        .zip(&mb.joint)
        .map(|(a, b)| kl_divergence(a, b))
        .sum();
    let marginal_sum: f64 = (1..mdp.horizon)
        .map(|i| kl_divergence(&ma.state[i], &mb.state[i]))
        .sum();
    let rhs = trajectory_kl(mdp, policy_a, policy_b)? + marginal_sum;
    Ok(LfoReport {
        lhs,
        rhs,
        residual: (lhs - rhs).abs(),
    })
}

fn clip_log(v: f64, clip: Option<&ClipSpec>) -> f64 {
    clip.map_or(v, |c| c.apply(v))
}

/// Both sides of the max-entropy reduction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaxEntReport {
    /// Trajectory KL between policy and expert, by sequence enumeration.
    pub kl: f64,
    /// `-sum_i E[r(s_i, a_i, s_{i+1}) + H(pi_i(.|s_i))]` by forward recursion.
    pub neg_soft_return: f64,
    pub residual: f64,
}

/// Compares the trajectory KL with the negated expected entropy-regularised
/// return under `r = log pi'(a|s',s) - log p(s'|a,s) + log mu_E(s'|s)`,
/// everything exact (optionally clipped).
pub fn maxent_equivalence(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    expert: &TabularPolicy,
    clip: Option<&ClipSpec>,
) -> Result<MaxEntReport> {
    policy.check_fits(mdp)?;
    expert.check_fits(mdp)?;
    let (n, m) = (mdp.n_states, mdp.n_actions);
    let marg = state_marginals(mdp, policy)?;
    let mut soft_return = 0.0;
    for t in 0..mdp.horizon {
        let post = policy.posterior(mdp, t);
        let ke = expert.kernel(mdp, t);
        for s in 0..n {
            let mu = marg.state[t][s];
            if mu == 0.0 {
                continue;
            }
            for a in 0..m {
                let pa = policy.prob(t, s, a);
                if pa == 0.0 {
                    continue;
                }
                soft_return -= mu * pa * pa.ln();
                for s2 in 0..n {
                    let p = mdp.p(s, a, s2);
                    if p == 0.0 {
                        continue;
                    }
                    let r = clip_log(post[(s * n + s2) * m + a].ln(), clip)
                        - clip_log(p.ln(), clip)
                        + clip_log(ke[s * n + s2].ln(), clip);
                    soft_return += mu * pa * p * r;
                }
            }
        }
    }
    let kl = trajectory_kl(mdp, policy, expert)?;
    let neg_soft_return = -soft_return;
    if !neg_soft_return.is_finite() {
        return Err(Error::Numeric {
            context: "soft return",
            value: neg_soft_return,
        });
    }
    Ok(MaxEntReport {
        kl,
        neg_soft_return,
        residual: (kl - neg_soft_return).abs(),
    })
}

/// Exact transition densities of a tabular problem, with states and actions
/// encoded as their indices in single-column arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularDensities {
    pub mdp: TabularMdp,
    /// `pi'(a|s',s)` of a stationary policy.
    posterior: Vec<f64>,
    expert_kernel: Vec<f64>,
}

impl TabularDensities {
    pub fn new(mdp: &TabularMdp, policy: &TabularPolicy, expert: &TabularPolicy) -> Result<Self> {
        if !policy.is_stationary() || !expert.is_stationary() {
            return Err(Error::Config(
                "tabular densities need stationary policies".into(),
            ));
        }
        policy.check_fits(mdp)?;
        expert.check_fits(mdp)?;
        Ok(Self {
            mdp: mdp.clone(),
            posterior: policy.posterior(mdp, 0),
            expert_kernel: expert.kernel(mdp, 0),
        })
    }
}

fn index(v: f64, n: usize, context: &'static str) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && (v as usize) < n {
        Ok(v as usize)
    } else {
        Err(Error::Numeric { context, value: v })
    }
}

fn indices(x: ArrayView2<f64>, n: usize, context: &'static str) -> Result<Vec<usize>> {
    check_dim(context, 1, x.ncols())?;
    x.column(0).iter().map(|&v| index(v, n, context)).collect()
}

impl TransitionDensities for TabularDensities {
    fn log_expert(
        &self,
        states: ArrayView2<f64>,
        next_states: ArrayView2<f64>,
    ) -> Result<Array1<f64>> {
        let n = self.mdp.n_states;
        let s = indices(states, n, "tabular state")?;
        let s2 = indices(next_states, n, "tabular next state")?;
        Ok(s.iter()
            .zip(&s2)
            .map(|(&s, &s2)| self.expert_kernel[s * n + s2].ln())
            .collect())
    }

    fn log_forward(
        &self,
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
        next_states: ArrayView2<f64>,
    ) -> Result<Array1<f64>> {
        let (n, m) = (self.mdp.n_states, self.mdp.n_actions);
        let s = indices(states, n, "tabular state")?;
        let a = indices(actions, m, "tabular action")?;
        let s2 = indices(next_states, n, "tabular next state")?;
        Ok((0..s.len())
            .map(|i| self.mdp.p(s[i], a[i], s2[i]).ln())
            .collect())
    }

    fn log_inverse(
        &self,
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
        next_states: ArrayView2<f64>,
    ) -> Result<Array1<f64>> {
        let (n, m) = (self.mdp.n_states, self.mdp.n_actions);
        let s = indices(states, n, "tabular state")?;
        let a = indices(actions, m, "tabular action")?;
        let s2 = indices(next_states, n, "tabular next state")?;
        Ok((0..s.len())
            .map(|i| self.posterior[(s[i] * n + s2[i]) * m + a[i]].ln())
            .collect())
    }
}

impl PolicyDensity for TabularPolicy {
    fn log_probs(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array1<f64>> {
        if !self.is_stationary() {
            return Err(Error::Config(
                "batched log-probabilities need a stationary policy".into(),
            ));
        }
        let s = indices(states, self.n_states, "tabular state")?;
        let a = indices(actions, self.n_actions, "tabular action")?;
        Ok(s.iter()
            .zip(&a)
            .map(|(&s, &a)| self.prob(0, s, a).ln())
            .collect())
    }
}

/// Every `(s, a, s')` with positive probability under the policy, with
/// weights `sum_t mu_t(s) pi(a|s) p(s'|s,a)` (summing to the horizon).
pub fn enumerate_transitions(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
) -> Result<(Batch, Vec<f64>)> {
    let marg = state_marginals(mdp, policy)?;
    let (n, m) = (mdp.n_states, mdp.n_actions);
    let mut rows = Vec::new();
    for s in 0..n {
        for a in 0..m {
            for s2 in 0..n {
                let w: f64 = (0..mdp.horizon)
                    .map(|t| marg.state[t][s] * policy.prob(t, s, a) * mdp.p(s, a, s2))
                    .sum();
                if w > 0.0 {
                    rows.push((s, a, s2, w));
                }
            }
        }
    }
    let k = rows.len();
    type Row = (usize, usize, usize, f64);
    let col =
        |f: &dyn Fn(&Row) -> usize| Array2::from_shape_fn((k, 1), |(i, _)| f(&rows[i]) as f64);
    let batch = Batch {
        states: col(&|r| r.0),
        actions: col(&|r| r.1),
        next_states: col(&|r| r.2),
        env_rewards: Array1::zeros(k),
        terminals: vec![false; k],
    };
    Ok((batch, rows.iter().map(|r| r.3).collect()))
}

/// How the policy changes between episodes of [`buffer_monotonicity`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolicyUpdate {
    Frozen,
    /// The exact minimiser of the objective for the current inverse model
    /// (soft backward recursion over time-dependent policies).
    ExactImprovement,
}

/// Trace of the alternating optimisation.
#[derive(Clone, Debug, PartialEq)]
pub struct MonotonicityReport {
    /// Objective after every phase, starting from the initial policy and a
    /// uniform inverse model.
    pub objective: Vec<f64>,
    /// Per episode, inverse-model NLL on the new policy's data before and
    /// after the refit.
    pub nll: Vec<(f64, f64)>,
    /// Largest increase between consecutive objective values (negative if
    /// strictly decreasing).
    pub max_increase: f64,
    /// Largest increase of the NLL caused by a refit.
    pub max_nll_increase: f64,
}

/// Pooled transition occupancy `sum_t mu_t(s) pi_t(a|s) p(s'|s,a)`, indexed
/// `(s * n + s') * m + a`.
fn occupancy(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<Vec<f64>> {
    let marg = state_marginals(mdp, policy)?;
    let (n, m) = (mdp.n_states, mdp.n_actions);
    let mut occ = vec![0.0; n * n * m];
    for t in 0..mdp.horizon {
        for s in 0..n {
            for a in 0..m {
                let w = marg.state[t][s] * policy.prob(t, s, a);
                for s2 in 0..n {
                    occ[(s * n + s2) * m + a] += w * mdp.p(s, a, s2);
                }
            }
        }
    }
    Ok(occ)
}

/// Maximum-likelihood inverse model of a buffer distribution.
fn fit_inverse(buffer: &[f64], n: usize, m: usize) -> Vec<f64> {
    let mut q = vec![1.0 / m as f64; n * n * m];
    for ss in 0..n * n {
        let total: f64 = buffer[ss * m..(ss + 1) * m].iter().sum();
        if total > 0.0 {
            for a in 0..m {
                q[ss * m + a] = buffer[ss * m + a] / total;
            }
        }
    }
    q
}

/// `sum_t E_pi[log p + log pi_t - log q - log mu_E]`.
fn objective(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    q: &[f64],
    expert_kernel: &[f64],
) -> Result<f64> {
    let marg = state_marginals(mdp, policy)?;
    let (n, m) = (mdp.n_states, mdp.n_actions);
    let mut j = 0.0;
    for t in 0..mdp.horizon {
        for s in 0..n {
            for a in 0..m {
                let w = marg.state[t][s] * policy.prob(t, s, a);
                if w == 0.0 {
                    continue;
                }
                for s2 in 0..n {
                    let p = mdp.p(s, a, s2);
                    if p > 0.0 {
                        j += w
                            * p
                            * (p.ln() + policy.prob(t, s, a).ln()
                                - q[(s * n + s2) * m + a].ln()
                                - expert_kernel[s * n + s2].ln());
                    }
                }
            }
        }
    }
    Ok(j)
}

fn inverse_nll(occ: &[f64], q: &[f64]) -> f64 {
    occ.iter()
        .zip(q)
        .filter(|(w, _)| **w > 0.0)
        .map(|(w, q)| -w * q.ln())
        .sum()
}

/// Time-dependent policy minimising the objective for a fixed inverse model:
/// `pi_t(a|s) = softmax_a Q_t(s, a)` with
/// `Q_t(s,a) = sum_s' p(s'|s,a) (r(s,a,s') + V_{t+1}(s'))`.
fn soft_optimal_policy(mdp: &TabularMdp, q: &[f64], expert_kernel: &[f64]) -> TabularPolicy {
    let (n, m, horizon) = (mdp.n_states, mdp.n_actions, mdp.horizon);
    let mut v_next = vec![0.0; n];
    let mut steps = vec![Vec::new(); horizon.max(1)];
    for t in (0..horizon).rev() {
        let mut probs = vec![0.0; n * m];
        let mut v = vec![0.0; n];
        for s in 0..n {
            let qs: Vec<f64> = (0..m)
                .map(|a| {
                    (0..n)
                        .filter(|&s2| mdp.p(s, a, s2) > 0.0)
                        .map(|s2| {
                            let p = mdp.p(s, a, s2);
                            let r = q[(s * n + s2) * m + a].ln() - p.ln()
                                + expert_kernel[s * n + s2].ln();
                            p * (r + v_next[s2])
                        })
                        .sum()
                })
                .collect();
            let max = qs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = qs.iter().map(|x| (x - max).exp()).sum();
            v[s] = max + z.ln();
            for a in 0..m {
                probs[s * m + a] = (qs[a] - v[s]).exp();
            }
        }
        steps[t] = probs;
        v_next = v;
    }
    if horizon == 0 {
        steps[0] = vec![1.0 / m as f64; n * m];
    }
    TabularPolicy::time_varying(n, m, steps).expect("softmax rows are distributions")
}

/// Alternates, for `episodes` episodes: collect the current policy's
/// occupancy into a buffer mixed as `alpha * new + (1 - alpha) * old`,
/// refit the inverse model by exact maximum likelihood on the buffer, then
/// update the policy. The objective is recorded after every phase.
pub fn buffer_monotonicity(
    mdp: &TabularMdp,
    expert: &TabularPolicy,
    initial: &TabularPolicy,
    episodes: usize,
    alpha: f64,
    update: PolicyUpdate,
) -> Result<MonotonicityReport> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Config(format!(
            "buffer mixing weight must lie in (0, 1], got {alpha}"
        )));
    }
    if !expert.is_stationary() {
        return Err(Error::Config("expert policy must be stationary".into()));
    }
    expert.check_fits(mdp)?;
    initial.check_fits(mdp)?;
    let (n, m) = (mdp.n_states, mdp.n_actions);
    let ke = expert.kernel(mdp, 0);
    let mut policy = initial.clone();
    let mut q = vec![1.0 / m as f64; n * n * m];
    let mut buffer: Option<Vec<f64>> = None;
    let mut objective_trace = vec![objective(mdp, &policy, &q, &ke)?];
    let mut nll = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let occ = occupancy(mdp, &policy)?;
        buffer = Some(match buffer {
            None => occ.clone(),
            Some(old) => old
                .iter()
                .zip(&occ)
                .map(|(o, x)| alpha * x + (1.0 - alpha) * o)
                .collect(),
        });
        let before = inverse_nll(&occ, &q);
        q = fit_inverse(buffer.as_ref().expect("set above"), n, m);
        nll.push((before, inverse_nll(&occ, &q)));
        objective_trace.push(objective(mdp, &policy, &q, &ke)?);
        if update == PolicyUpdate::ExactImprovement {
            policy = soft_optimal_policy(mdp, &q, &ke);
            objective_trace.push(objective(mdp, &policy, &q, &ke)?);
        }
    }
    let max_increase = objective_trace
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    let max_nll_increase = nll
        .iter()
        .map(|(b, a)| a - b)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(MonotonicityReport {
        objective: objective_trace,
        nll,
        max_increase,
        max_nll_increase,
    })
}
