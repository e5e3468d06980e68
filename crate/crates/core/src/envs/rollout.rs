use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Environment, Policy, Transition};
use crate::error::{check_dim, Result};

/// One episode as an ordered list of transitions.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// `s_0, ..., s_L` (empty for an empty trajectory).
    pub fn states(&self) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = self.transitions.iter().map(|t| t.state.clone()).collect();
        if let Some(last) = self.transitions.last() {
            out.push(last.next_state.clone());
        }
        out
    }

    pub fn actions(&self) -> Vec<Vec<f64>> {
        self.transitions.iter().map(|t| t.action.clone()).collect()
    }

    pub fn total_reward(&self) -> f64 {
        self.transitions.iter().map(|t| t.env_reward).sum()
    }
}

/// Runs one episode of at most `steps` (and at most the horizon) steps from
/// a freshly sampled start state.
pub fn rollout<E, P>(env: &E, policy: &P, steps: usize, rng: &mut dyn RngCore) -> Result<Trajectory>
where
    E: Environment + ?Sized,
    P: Policy + ?Sized,
{
    check_dim("policy action width", env.action_dim(), policy.action_dim())?;
    let len = steps.min(env.horizon());
    let mut traj = Trajectory {
        transitions: Vec::with_capacity(len),
    };
    if len == 0 {
        return Ok(traj);
    }
    let mut state = env.sample_start(rng);
    for t in 0..len {
        let action = policy.act(&state, rng)?;
        let mut tr = env.step(&state, &action, t, rng)?;
        tr.done |= t + 1 == len;
        state = tr.next_state.clone();
        traj.transitions.push(tr);
    }
    Ok(traj)
}

/// RNG for episode `index` of a batch seeded with `seed`: one ChaCha stream
/// per episode, so results do not depend on how episodes map to threads.
pub fn episode_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// `n` independent episodes, episode `i` driven by `episode_rng(seed, i)`,
/// spread over the available cores and returned in index order.
pub fn parallel_rollouts<E, P>(
    env: &E,
    policy: &P,
    n: usize,
    steps: usize,
    seed: u64,
) -> Result<Vec<Trajectory>>
where
    E: Environment + ?Sized,
    P: Policy + ?Sized,
{
    let workers = std::thread::available_parallelism()
        .map_or(1, |p| p.get())
        .min(n.max(1));
    if workers <= 1 {
        return (0..n)
            .map(|i| rollout(env, policy, steps, &mut episode_rng(seed, i)))
            .collect();
    }
    let mut slots: Vec<Option<Result<Trajectory>>> = (0..n).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                scope.spawn(move || {
                    (w..n)
                        .step_by(workers)
                        .map(|i| (i, rollout(env, policy, steps, &mut episode_rng(seed, i))))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("rollout worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots
        .into_iter()
        .map(|s| s.expect("every slot filled"))
        .collect()
}

/// Undiscounted return of each of `episodes` full-horizon episodes.
pub fn evaluate_returns<E, P>(env: &E, policy: &P, episodes: usize, seed: u64) -> Result<Vec<f64>>
where
    E: Environment + ?Sized,
    P: Policy + ?Sized,
{
    Ok(
        parallel_rollouts(env, policy, episodes, env.horizon(), seed)?
            .iter()
            .map(Trajectory::total_reward)
            .collect(),
    )
}
