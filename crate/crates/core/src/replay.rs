//! Experience replay: the `A` most recent episodes plus the `B` best ones by
//! `R_max`, with mini-batches that draw one experience from every best episode.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::StateVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub state: StateVector,
    pub action: usize,
    pub reward: f64,
    pub next_state: StateVector,
    pub terminal: bool,
    pub episode_id: u64,
    pub step: usize,
    /// Reward every action would have received, recorded on the last step of
    /// an episode that ran to the horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_rewards: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode_id: u64,
    pub experiences: Vec<Experience>,
    /// Objective value of the candidate iterate at each recorded step.
    pub objective_trace: Vec<f64>,
    pub rmax: f64,
}

impl EpisodeRecord {
    pub fn rewards(&self) -> Vec<f64> {
        self.experiences.iter().map(|e| e.reward).collect()
    }

    pub fn final_objective(&self) -> Option<f64> {
        self.objective_trace.last().copied()
    }
}

/// A sampled mini-batch. The first `best_draws` entries come from the best-episode rule.
#[derive(Debug)]
pub struct MiniBatch<'a> {
    pub experiences: Vec<&'a Experience>,
    pub best_draws: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayMemory {
    recent_capacity: usize,
    best_capacity: usize,
    /// Every stored episode, once, keyed by id.
    episodes: BTreeMap<u64, EpisodeRecord>,
    recent: VecDeque<u64>,
    /// Ids ordered by descending `rmax`; equal values keep commit order.
    best: Vec<u64>,
    /// Experiences of the episode still in progress.
    pending: Vec<Experience>,
}

impl ReplayMemory {
    pub fn new(recent_capacity: usize, best_capacity: usize) -> Self {
        Self {
            recent_capacity,
            best_capacity,
            episodes: BTreeMap::new(),
            recent: VecDeque::with_capacity(recent_capacity + 1),
            best: Vec::with_capacity(best_capacity + 1),
            pending: Vec::new(),
        }
    }

    pub fn recent_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.recent.iter().copied()
    }

    pub fn best_ids(&self) -> &[u64] {
        &self.best
    }

    pub fn episode(&self, id: u64) -> Option<&EpisodeRecord> {
        self.episodes.get(&id)
    }

    pub fn stored_episodes(&self) -> usize {
        self.episodes.len()
    }

    pub fn pending(&self) -> &[Experience] {
        &self.pending
    }

    pub fn len(&self) -> usize {
        self.episodes.values().map(|e| e.experiences.len()).sum::<usize>() + self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Adds an experience of the running episode; it is sampleable immediately.
    pub fn push_pending(&mut self, exp: Experience) {
        self.pending.push(exp);
    }

    pub fn take_pending(&mut self) -> Vec<Experience> {
        std::mem::take(&mut self.pending)
    }

    pub fn commit_episode(&mut self, record: EpisodeRecord) {
        let id = record.episode_id;
        let rmax = record.rmax;
        self.episodes.insert(id, record);

        self.recent.push_back(id);
        while self.recent.len() > self.recent_capacity {
            self.recent.pop_front();
        }

        if self.best_capacity > 0 {
            let full = self.best.len() >= self.best_capacity;
            let worst = self.best.last().map(|b| self.episodes[b].rmax);
            if !full || worst.is_some_and(|w| rmax > w) {
                let pos = self.best.partition_point(|b| self.episodes[b].rmax >= rmax);
                self.best.insert(pos, id);
                self.best.truncate(self.best_capacity);
            }
        }

        let (recent, best) = (&self.recent, &self.best);
        self.episodes.retain(|k, _| recent.contains(k) || best.contains(k));
    }

    /// Draws `size` experiences with replacement. With `use_best`, one draw
    /// comes from each best episode and the rest are uniform over everything
    /// stored (including the running episode).
    pub fn sample_minibatch<R: Rng + ?Sized>(&self, size: usize, use_best: bool, rng: &mut R) -> Result<MiniBatch<'_>> {
        let total = self.len();
        if total == 0 {
            return Err(Error::EmptyMemory);
        }
        let mut experiences = Vec::with_capacity(size);
        let mut best_draws = 0;
        if use_best {
            if size < self.best.len() {
                return Err(Error::Config(format!(
                    "mini-batch of {size} cannot hold one draw from each of {} best episodes",
                    self.best.len()
                )));
            }
            for id in &self.best {
                let exps = &self.episodes[id].experiences;
                if exps.is_empty() {
                    continue;
                }
                experiences.push(&exps[rng.random_range(0..exps.len())]);
                best_draws += 1;
            }
        }
        while experiences.len() < size {
            experiences.push(self.nth_experience(rng.random_range(0..total)));
        }
        Ok(MiniBatch {
            experiences,
            best_draws,
        })
    }

    fn nth_experience(&self, mut i: usize) -> &Experience {
        for ep in self.episodes.values() {
            if i < ep.experiences.len() {
                return &ep.experiences[i];
            }
            i -= ep.experiences.len();
        }
        &self.pending[i]
    }
}

/// CSV dump of episode traces: `episode_id,step,f_value,action,reward`.
pub fn write_episode_trace<'a, W: Write>(
    mut out: W,
    episodes: impl IntoIterator<Item = &'a EpisodeRecord>,
) -> std::io::Result<()> {
    writeln!(out, "episode_id,step,f_value,action,reward")?;
    for ep in episodes {
        for (exp, f) in ep.experiences.iter().zip(&ep.objective_trace) {
            writeln!(
                out,
                "{},{},{:?},{},{:?}",
                ep.episode_id, exp.step, f, exp.action, exp.reward
            )?;
        }
    }
    Ok(())
}
