use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{s, Array2};

use super::{parallel_rollouts, Environment, Policy, Trajectory};
use crate::codec;
use crate::error::{check_dim, Error, Result};

const MAGIC: &[u8; 8] = b"SOILDSET";
pub const DATASET_FORMAT_VERSION: u32 = 1;

/// One recorded episode: `L + 1` states and, optionally, `L` actions.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub states: Array2<f64>,
    pub actions: Option<Array2<f64>>,
}

impl Episode {
    /// Number of transitions `L`.
    pub fn len(&self) -> usize {
        self.states.nrows().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Expert demonstrations. State-only (learning-from-observation) datasets
/// carry no actions at all.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpertDataset {
    pub env_name: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub includes_actions: bool,
    pub episodes: Vec<Episode>,
}

impl ExpertDataset {
    pub fn new(
        env_name: impl Into<String>,
        state_dim: usize,
        action_dim: usize,
        includes_actions: bool,
        episodes: Vec<Episode>,
    ) -> Result<Self> {
        for ep in &episodes {
            check_dim("episode state width", state_dim, ep.states.ncols())?;
            if ep.states.nrows() == 0 {
                return Err(Error::Format("episode without states".into()));
            }
            match (&ep.actions, includes_actions) {
                (Some(a), true) => {
                    check_dim("episode action width", action_dim, a.ncols())?;
                    check_dim("episode action count", ep.len(), a.nrows())?;
                }
                (None, false) => {}
                _ => {
                    return Err(Error::Format(
                        "episode action presence disagrees with header".into(),
                    ))
                }
            }
        }
        Ok(Self {
            env_name: env_name.into(),
            state_dim,
            action_dim,
            includes_actions,
            episodes,
        })
    }

    pub fn from_trajectories(
        env_name: &str,
        state_dim: usize,
        action_dim: usize,
        trajectories: &[Trajectory],
        include_actions: bool,
    ) -> Result<Self> {
        let episodes = trajectories
            .iter()
            .map(|t| {
                if t.is_empty() {
                    return Err(Error::Config("cannot record an empty trajectory".into()));
                }
                let states = t.states();
                let states = Array2::from_shape_vec((states.len(), state_dim), states.concat())
                    .map_err(|e| Error::Format(e.to_string()))?;
                let actions = if include_actions {
                    Some(
                        Array2::from_shape_vec((t.len(), action_dim), t.actions().concat())
                            .map_err(|e| Error::Format(e.to_string()))?,
                    )
                } else {
                    None
                };
                Ok(Episode { states, actions })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(env_name, state_dim, action_dim, include_actions, episodes)
    }

    pub fn n_episodes(&self) -> usize {
        self.episodes.len()
    }

    pub fn n_transitions(&self) -> usize {
        self.episodes.iter().map(Episode::len).sum()
    }

    /// The same dataset without actions.
    pub fn state_only(&self) -> Self {
        Self {
            includes_actions: false,
            episodes: self
                .episodes
                .iter()
                .map(|e| Episode {
                    states: e.states.clone(),
                    actions: None,
                })
                .collect(),
            ..self.clone()
        }
    }

    /// Stacked `(s_t, s_{t+1})` pairs of every episode.
    pub fn state_pairs(&self) -> (Array2<f64>, Array2<f64>) {
        let n = self.n_transitions();
        let mut s = Array2::zeros((n, self.state_dim));
        let mut s_next = Array2::zeros((n, self.state_dim));
        let mut row = 0;
        for ep in &self.episodes {
            let l = ep.len();
            s.slice_mut(s![row..row + l, ..])
                .assign(&ep.states.slice(s![..l, ..]));
            s_next
                .slice_mut(s![row..row + l, ..])
                .assign(&ep.states.slice(s![1.., ..]));
            row += l;
        }
        (s, s_next)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        codec::write_u32(w, DATASET_FORMAT_VERSION)?;
        codec::write_str(w, &self.env_name)?;
        codec::write_u64(w, self.state_dim as u64)?;
        codec::write_u64(w, self.action_dim as u64)?;
        codec::write_u64(w, self.episodes.len() as u64)?;
        codec::write_u8(w, self.includes_actions as u8)?;
        for ep in &self.episodes {
            codec::write_u64(w, ep.len() as u64)?;
            codec::write_f64s(
                w,
                ep.states
                    .as_standard_layout()
                    .as_slice()
                    .expect("standard layout"),
            )?;
            if let Some(a) = &ep.actions {
                codec::write_f64s(
                    w,
                    a.as_standard_layout().as_slice().expect("standard layout"),
                )?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        codec::expect_magic(r, MAGIC)?;
        let version = codec::read_u32(r)?;
        if version != DATASET_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported dataset version {version}"
            )));
        }
        let env_name = codec::read_str(r)?;
        let state_dim = codec::read_u64(r)? as usize;
        let action_dim = codec::read_u64(r)? as usize;
        let k = codec::read_u64(r)? as usize;
        let includes_actions = match codec::read_u8(r)? {
            0 => false,
            1 => true,
            other => return Err(Error::Format(format!("invalid action flag {other}"))),
        };
        let mut episodes = Vec::with_capacity(k.min(1 << 16));
        for _ in 0..k {
            let l = codec::read_u64(r)? as usize;
            let states = Array2::from_shape_vec(
                (l + 1, state_dim),
                codec::read_f64s(r, (l + 1) * state_dim)?,
            )
            .map_err(|e| Error::Format(e.to_string()))?;
            let actions = if includes_actions {
                Some(
                    Array2::from_shape_vec((l, action_dim), codec::read_f64s(r, l * action_dim)?)
                        .map_err(|e| Error::Format(e.to_string()))?,
                )
            } else {
                None
            };
            episodes.push(Episode { states, actions });
        }
        Self::new(env_name, state_dim, action_dim, includes_actions, episodes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(std::fs::File::open(path)?))
    }

    /// One row per recorded state: `episode,step,s0..,a0..`. The action
    /// columns are present only when the dataset has actions and are empty
    /// on each episode's final state.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        let mut header = vec!["episode".to_string(), "step".to_string()];
        header.extend((0..self.state_dim).map(|j| format!("s{j}")));
        if self.includes_actions {
            header.extend((0..self.action_dim).map(|j| format!("a{j}")));
        }
        writeln!(w, "{}", header.join(","))?;
        for (e, ep) in self.episodes.iter().enumerate() {
            for t in 0..ep.states.nrows() {
                let mut fields = vec![e.to_string(), t.to_string()];
                fields.extend(ep.states.row(t).iter().map(|v| v.to_string()));
                if let Some(a) = &ep.actions {
                    if t < a.nrows() {
                        fields.extend(a.row(t).iter().map(|v| v.to_string()));
                    } else {
                        fields.extend(std::iter::repeat_n(String::new(), self.action_dim));
                    }
                }
                writeln!(w, "{}", fields.join(","))?;
            }
        }
        Ok(())
    }
}

/// Records `k` full-horizon expert episodes (episode `i` uses RNG stream `i`
/// of `seed`). With `include_actions = false` the result is state-only.
pub fn gen_expert_dataset<E, P>(
    env: &E,
    expert: &P,
    k: usize,
    include_actions: bool,
    seed: u64,
) -> Result<ExpertDataset>
where
    E: Environment + ?Sized,
    P: Policy + ?Sized,
{
    let trajs = parallel_rollouts(env, expert, k, env.horizon(), seed)?;
    ExpertDataset::from_trajectories(
        env.name(),
        env.state_dim(),
        env.action_dim(),
        &trajs,
        include_actions,
    )
}
