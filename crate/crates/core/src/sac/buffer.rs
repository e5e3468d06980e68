use ndarray::{Array1, Array2};
use rand::seq::index;
use rand::Rng;

use crate::envs::Transition;
use crate::error::{check_dim, Error, Result};

/// Column-stacked transitions for batched network evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub next_states: Array2<f64>,
    pub env_rewards: Array1<f64>,
    pub terminals: Vec<bool>,
}

impl Batch {
    pub fn from_transitions<'a, I>(state_dim: usize, action_dim: usize, transitions: I) -> Self
    where
        I: IntoIterator<Item = &'a Transition>,
    {
        let items: Vec<&Transition> = transitions.into_iter().collect();
        let n = items.len();
        let mut states = Array2::zeros((n, state_dim));
        let mut actions = Array2::zeros((n, action_dim));
        let mut next_states = Array2::zeros((n, state_dim));
        let mut env_rewards = Array1::zeros(n);
        let mut terminals = Vec::with_capacity(n);
        for (i, t) in items.iter().enumerate() {
            states
                .row_mut(i)
                .assign(&ndarray::ArrayView1::from(&t.state));
            actions
                .row_mut(i)
                .assign(&ndarray::ArrayView1::from(&t.action));
            next_states
                .row_mut(i)
                .assign(&ndarray::ArrayView1::from(&t.next_state));
            env_rewards[i] = t.env_reward;
            terminals.push(t.terminal);
        }
        Self {
            states,
            actions,
            next_states,
            env_rewards,
            terminals,
        }
    }

    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Bounded FIFO transition store.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    state_dim: usize,
    action_dim: usize,
    slots: Vec<Transition>,
    /// Slot that the next insertion overwrites once the buffer is full.
    head: usize,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, state_dim: usize, action_dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config(
                "replay buffer capacity must be positive".into(),
            ));
        }
        Ok(Self {
            capacity,
            state_dim,
            action_dim,
            slots: Vec::with_capacity(capacity.min(1 << 20)),
            head: 0,
            inserted: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Total number of transitions ever pushed.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn push(&mut self, transition: Transition) -> Result<()> {
        check_dim("buffer state", self.state_dim, transition.state.len())?;
        check_dim("buffer action", self.action_dim, transition.action.len())?;
        check_dim(
            "buffer next state",
            self.state_dim,
            transition.next_state.len(),
        )?;
        if self.slots.len() < self.capacity {
            self.slots.push(transition);
        } else {
            self.slots[self.head] = transition;
            self.head = (self.head + 1) % self.capacity;
        }
        self.inserted += 1;
        Ok(())
    }

    pub fn extend<I: IntoIterator<Item = Transition>>(&mut self, transitions: I) -> Result<()> {
        transitions.into_iter().try_for_each(|t| self.push(t))
    }

    /// Stored transitions from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let (newer, older) = if self.slots.len() < self.capacity {
            (&self.slots[..], &self.slots[..0])
        } else {
            let (a, b) = self.slots.split_at(self.head);
            (a, b)
        };
        older.iter().chain(newer.iter())
    }

    /// Uniform minibatch, without replacement within the batch.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Batch> {
        if self.is_empty() {
            return Err(Error::Config(
                "cannot sample from an empty replay buffer".into(),
            ));
        }
        if batch == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        let n = batch.min(self.len());
        let idx = index::sample(rng, self.len(), n);
        Ok(Batch::from_transitions(
            self.state_dim,
            self.action_dim,
            idx.iter().map(|i| &self.slots[i]),
        ))
    }

    /// The `n` most recently inserted transitions, oldest first.
    pub fn latest(&self, n: usize) -> Batch {
        let n = n.min(self.len());
        Batch::from_transitions(
            self.state_dim,
            self.action_dim,
            self.iter().skip(self.len() - n),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(i: usize) -> Transition {
        Transition {
            state: vec![i as f64],
            action: vec![0.0],
            next_state: vec![i as f64 + 1.0],
            env_reward: i as f64,
            done: false,
            terminal: false,
            clipped: false,
            step_index: i,
        }
    }

    #[test]
    fn fifo_eviction_keeps_newest() {
        let mut buf = ReplayBuffer::new(3, 1, 1).unwrap();
        buf.extend((0..5).map(tr)).unwrap();
        assert_eq!(buf.len(), 3);
        assert_eq!(buf.inserted(), 5);
        let order: Vec<usize> = buf.iter().map(|t| t.step_index).collect();
        assert_eq!(order, vec![2, 3, 4]);
        assert_eq!(buf.latest(2).env_rewards.to_vec(), vec![3.0, 4.0]);
    }

    #[test]
    fn sampling_is_without_replacement() {
        let mut buf = ReplayBuffer::new(100, 1, 1).unwrap();
        buf.extend((0..50).map(tr)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = buf.sample(50, &mut rng).unwrap();
        let mut seen: Vec<i64> = b.states.iter().map(|&v| v as i64).collect();
        seen.sort();
        assert_eq!(seen, (0..50).collect::<Vec<_>>());
        assert_eq!(buf.sample(500, &mut rng).unwrap().len(), 50);
    }

    #[test]
    fn empty_buffer_and_bad_dims_are_rejected() {
        let mut buf = ReplayBuffer::new(4, 1, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(buf.sample(2, &mut rng), Err(Error::Config(_))));
        let mut bad = tr(0);
        bad.state = vec![0.0, 1.0];
        assert!(matches!(buf.push(bad), Err(Error::Shape { .. })));
        assert!(ReplayBuffer::new(0, 1, 1).is_err());
    }
}
