//! Q-learning with experience replay for the learning-rate controller.

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::descent::{Descent, StepOutcome};
use crate::dqn::{self, Action, ActionSet, DqnModel, DqnOptimizerConfig, DqnUpdater};
use crate::error::{Error, Result};
use crate::features::FeatureScaling;
use crate::nn::ParamVector;
use crate::objective::ObjectiveFn;
use crate::replay::{EpisodeRecord, Experience, ReplayMemory};
use crate::rewards;

/// Reward handed out when an episode is cut short (divergence or a learning
/// rate outside the allowed range).
pub const ABORT_REWARD: f64 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_episodes: usize,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            end: 0.1,
            decay_episodes: 100,
        }
    }
}

impl EpsilonSchedule {
    /// Linear from `start` at episode 0 to `end` at `decay_episodes`, then flat.
    pub fn epsilon_at(&self, episode: usize) -> f64 {
        if self.decay_episodes == 0 || episode >= self.decay_episodes {
            return self.end;
        }
        let frac = episode as f64 / self.decay_episodes as f64;
        self.start + (self.end - self.start) * frac
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: ActionSet,
    pub episodes: usize,
    /// Steps per episode, `T`.
    pub horizon: usize,
    /// Encoding window and warm-up length, `M`.
    pub window: usize,
    pub gamma: f64,
    #[serde(default)]
    pub epsilon: EpsilonSchedule,
    /// Most recent episodes kept in memory, `A`.
    pub recent_episodes: usize,
    /// Best episodes kept in memory, `B`.
    pub best_episodes: usize,
    pub batch_size: usize,
    /// Episodes before the best-episode draws join the mini-batch.
    pub best_after_episodes: usize,
    pub c1: f64,
    pub c2: f64,
    pub alpha_c: f64,
    /// Allowed learning rates `[min, max]`; leaving them ends the episode.
    #[serde(default)]
    pub alpha_bounds: Option<(f64, f64)>,
    pub dqn_hidden: Vec<usize>,
    pub optimizer: DqnOptimizerConfig,
    pub seed: u64,
    /// Write a resumable checkpoint every this many episodes.
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
    /// Record wall-clock time per episode in the log (breaks byte-identical logs).
    #[serde(default)]
    pub log_wall_time: bool,
}

impl TrainConfig {
    pub fn desk_v1() -> Self {
        Self {
            variant: ActionSet::V1,
            episodes: 2000,
            horizon: 100,
            window: 3,
            gamma: 0.99,
            epsilon: EpsilonSchedule::default(),
            recent_episodes: 45,
            best_episodes: 5,
            batch_size: 32,
            best_after_episodes: 50,
            c1: 0.1,
            c2: 0.12,
            alpha_c: 4.0,
            alpha_bounds: None,
            dqn_hidden: vec![32, 16],
            optimizer: DqnOptimizerConfig::sgd(0.01),
            seed: 0,
            checkpoint_every: None,
            log_wall_time: false,
        }
    }

    pub fn desk_v2() -> Self {
        Self {
            variant: ActionSet::V2,
            episodes: 5000,
            alpha_c: 2.0,
            alpha_bounds: Some((0.01, 8.0)),
            // The conventional 1e-3 oscillates between halving and doubling
            // at this scale.
            optimizer: DqnOptimizerConfig::rmsprop(1e-4),
            ..Self::desk_v1()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.window < 1 || self.horizon <= self.window {
            return fail(format!("need T > M >= 1, got T={}, M={}", self.horizon, self.window));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return fail(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if !(self.c1 > 0.0 && self.c2 > 0.0) {
            return fail("reward constants c1 and c2 must be positive".into());
        }
        if !(self.alpha_c > 0.0 && self.alpha_c.is_finite()) {
            return fail(format!("alpha_c must be positive, got {}", self.alpha_c));
        }
        if self.batch_size == 0 {
            return fail("batch size must be positive".into());
        }
        if self.batch_size < self.best_episodes {
            return fail("batch size must cover one draw per best episode".into());
        }
        for e in [self.epsilon.start, self.epsilon.end] {
            if !(0.0..=1.0).contains(&e) {
                return fail(format!("epsilon values must lie in [0, 1], got {e}"));
            }
        }
        match (self.variant, self.alpha_bounds) {
            (ActionSet::V2, Some((lo, hi))) if !(lo < self.alpha_c && self.alpha_c < hi) => fail(format!(
                "need alpha_min < alpha_c < alpha_max, got {lo} < {} < {hi}",
                self.alpha_c
            )),
            _ => Ok(()),
        }
    }

    fn out_of_bounds(&self, alpha: f64) -> bool {
        match (self.variant, self.alpha_bounds) {
            (ActionSet::V2, Some((lo, hi))) => alpha < lo || alpha > hi,
            _ => false,
        }
    }
}

/// Whether mini-batches in `episode` include the one-per-best-episode draws.
pub fn uses_best_episodes(cfg: &TrainConfig, episode: usize) -> bool {
    episode >= cfg.best_after_episodes
}

/// Reward for arriving at the next state: `c1 / (f(x_{t+1}) - f_lb)` after
/// halving or doubling, `c2 / (f(x_bar) - f_lb)` after accepting.
pub fn assign_reward(action: Action, f_candidate: f64, f_accepted: f64, f_lb: f64, cfg: &TrainConfig) -> Result<f64> {
    match action {
        Action::Accept => rewards::reward_id(f_accepted, f_lb, cfg.c2),
        Action::Half | Action::Double => rewards::reward_id(f_candidate, f_lb, cfg.c1),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub episode: usize,
    pub rmax: f64,
    pub final_f: f64,
    pub epsilon: f64,
    pub wall_ms: u64,
}

pub fn write_train_log<W: std::io::Write>(mut out: W, rows: &[TrainLogRow]) -> std::io::Result<()> {
    writeln!(out, "episode,rmax,final_f,epsilon,wall_ms")?;
    for r in rows {
        writeln!(
            out,
            "{},{:?},{:?},{:?},{}",
            r.episode, r.rmax, r.final_f, r.epsilon, r.wall_ms
        )?;
    }
    Ok(())
}

/// Everything needed to continue a training run bit-identically.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainerCheckpoint {
    pub config: TrainConfig,
    pub model: Vec<u8>,
    pub updater: DqnUpdater,
    pub memory: ReplayMemory,
    pub rng: ChaCha8Rng,
    pub next_episode: usize,
    pub log: Vec<TrainLogRow>,
}

impl TrainerCheckpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Runs episodes of Q-learning on one objective from a fixed start point.
pub struct Trainer<'a> {
    obj: &'a ObjectiveFn,
    x1: ParamVector,
    cfg: TrainConfig,
    model: DqnModel,
    updater: DqnUpdater,
    memory: ReplayMemory,
    rng: ChaCha8Rng,
    next_episode: usize,
    log: Vec<TrainLogRow>,
}

impl<'a> Trainer<'a> {
    pub fn new(obj: &'a ObjectiveFn, x1: ParamVector, cfg: TrainConfig, scaling: FeatureScaling) -> Result<Self> {
        cfg.validate()?;
        let model = DqnModel::new(&cfg.dqn_hidden, cfg.variant, scaling, cfg.alpha_c, cfg.seed)?;
        Ok(Self {
            obj,
            x1,
            updater: DqnUpdater::new(cfg.optimizer),
            memory: ReplayMemory::new(cfg.recent_episodes, cfg.best_episodes),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_7a1e_0000_0001),
            next_episode: 0,
            log: Vec::new(),
            model,
            cfg,
        })
    }

    pub fn resume(obj: &'a ObjectiveFn, x1: ParamVector, ck: TrainerCheckpoint) -> Result<Self> {
        ck.config.validate()?;
        let model = DqnModel::from_bytes(&ck.model)?;
        if model.action_set != ck.config.variant {
            return Err(Error::Capability(
                "checkpoint model does not match configured variant".into(),
            ));
        }
        Ok(Self {
            obj,
            x1,
            cfg: ck.config,
            model,
            updater: ck.updater,
            memory: ck.memory,
            rng: ck.rng,
            next_episode: ck.next_episode,
            log: ck.log,
        })
    }

    pub fn checkpoint(&self) -> TrainerCheckpoint {
        TrainerCheckpoint {
            config: self.cfg.clone(),
            model: self.model.to_bytes(),
            updater: self.updater.clone(),
            memory: self.memory.clone(),
            rng: self.rng.clone(),
            next_episode: self.next_episode,
            log: self.log.clone(),
        }
    }

    pub fn model(&self) -> &DqnModel {
        &self.model
    }

    pub fn into_model(self) -> DqnModel {
        self.model
    }

    pub fn memory(&self) -> &ReplayMemory {
        &self.memory
    }

    pub fn log(&self) -> &[TrainLogRow] {
        &self.log
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn next_episode(&self) -> usize {
        self.next_episode
    }

    /// One learning episode with the scheduled epsilon; the DQN is updated
    /// after every step and the episode is committed to replay memory.
    pub fn run_episode(&mut self) -> Result<EpisodeRecord> {
        let episode = self.next_episode;
        let epsilon = self.cfg.epsilon.epsilon_at(episode);
        let started = Instant::now();
        let record = run_episode(
            self.obj,
            &self.x1,
            &self.cfg,
            &mut self.model,
            Some(Learner {
                memory: &mut self.memory,
                updater: &mut self.updater,
            }),
            episode,
            epsilon,
            &mut self.rng,
        )?;
        self.memory.commit_episode(record.clone());
        self.log.push(TrainLogRow {
            episode,
            rmax: record.rmax,
            final_f: record.final_objective().unwrap_or(f64::NAN),
            epsilon,
            wall_ms: if self.cfg.log_wall_time {
                started.elapsed().as_millis() as u64
            } else {
                0
            },
        });
        self.next_episode += 1;
        Ok(record)
    }

    /// Runs until `cfg.episodes` episodes are done, passing each finished
    /// episode to `on_episode` (checkpoints happen inside that hook's caller).
    pub fn train_with(&mut self, mut on_episode: impl FnMut(&Self, &EpisodeRecord) -> Result<()>) -> Result<()> {
        while self.next_episode < self.cfg.episodes {
            let record = self.run_episode()?;
            on_episode(self, &record)?;
        }
        Ok(())
    }
}

/// Trains a fresh model for `cfg.episodes` episodes.
pub fn train(
    obj: &ObjectiveFn,
    x1: &ParamVector,
    cfg: &TrainConfig,
    scaling: &FeatureScaling,
) -> Result<(DqnModel, Vec<TrainLogRow>)> {
    let mut trainer = Trainer::new(obj, x1.clone(), cfg.clone(), scaling.clone())?;
    trainer.train_with(|_, _| Ok(()))?;
    let log = trainer.log.clone();
    Ok((trainer.into_model(), log))
}

pub struct Learner<'m> {
    pub memory: &'m mut ReplayMemory,
    pub updater: &'m mut DqnUpdater,
}

/// Runs one episode: `M - 1` warm-up steps at `alpha_c`, then epsilon-greedy
/// actions for `t = M..=T`. With a learner, each experience is pushed to
/// memory and followed by one mini-batch update of the model.
///
/// The experience of the last step is terminal and carries the reward every
/// action would have received.
#[allow(clippy::too_many_arguments)]
pub fn run_episode(
    obj: &ObjectiveFn,
    x1: &ParamVector,
    cfg: &TrainConfig,
    model: &mut DqnModel,
    mut learner: Option<Learner<'_>>,
    episode: usize,
    epsilon: f64,
    rng: &mut ChaCha8Rng,
) -> Result<EpisodeRecord> {
    let set = model.action_set;
    let f_lb = obj.f_lb();
    let scaling = model.scaling.clone();
    let mut env = Descent::start(obj, x1, cfg.alpha_c, cfg.window)?;
    env.warm_up(cfg.window - 1)?;
    let mut state = env.state(&scaling, cfg.horizon)?;
    let mut experiences = Vec::with_capacity(cfg.horizon - cfg.window + 1);
    let mut trace = Vec::with_capacity(cfg.horizon - cfg.window + 1);
    let use_best = uses_best_episodes(cfg, episode);

    for t in cfg.window..=cfg.horizon {
        let a = model.select_action(&state, epsilon, rng)?;
        let action = set.action(a)?;
        trace.push(env.f_candidate());
        let last = t == cfg.horizon;

        let action_rewards = if last {
            let mut all = Vec::with_capacity(set.len());
            for &b in set.actions() {
                all.push(hypothetical_reward(&env, b, set, f_lb, cfg)?);
            }
            Some(all)
        } else {
            None
        };

        let (reward, next_state, terminal) = if cfg.out_of_bounds(env.proposed_alpha(action, set)) {
            (ABORT_REWARD, state, true)
        } else {
            // The last step still evaluates x_{T+1}: its reward is needed.
            match env.apply(action, set, false)? {
                StepOutcome::Evaluated { f } => {
                    let r = assign_reward(action, f, env.f_accepted(), f_lb, cfg)?;
                    let next = if last { state } else { env.state(&scaling, cfg.horizon)? };
                    (r, next, last)
                }
                StepOutcome::Diverged | StepOutcome::Stopped => (ABORT_REWARD, state, true),
            }
        };

        let exp = Experience {
            state,
            action: a,
            reward,
            next_state,
            terminal,
            episode_id: episode as u64,
            step: t,
            action_rewards: if last { action_rewards } else { None },
        };
        if let Some(l) = learner.as_mut() {
            l.memory.push_pending(exp.clone());
            let batch = l.memory.sample_minibatch(cfg.batch_size, use_best, rng)?;
            dqn::apply_minibatch(model, &batch.experiences, cfg.gamma, l.updater)?;
        }
        experiences.push(exp);
        state = next_state;
        if terminal {
            break;
        }
    }

    if let Some(l) = learner {
        l.memory.take_pending();
    }
    let rewards: Vec<f64> = experiences.iter().map(|e| e.reward).collect();
    Ok(EpisodeRecord {
        episode_id: episode as u64,
        rmax: rewards::episode_rmax(&rewards, cfg.gamma),
        experiences,
        objective_trace: trace,
    })
}

fn hypothetical_reward(env: &Descent<'_>, action: Action, set: ActionSet, f_lb: f64, cfg: &TrainConfig) -> Result<f64> {
    if action != Action::Accept && cfg.out_of_bounds(env.proposed_alpha(action, set)) {
        return Ok(ABORT_REWARD);
    }
    let f = env.preview(action, set)?;
    if !f.is_finite() {
        return Ok(ABORT_REWARD);
    }
    match action {
        Action::Accept => rewards::reward_id(f, f_lb, cfg.c2),
        _ => rewards::reward_id(f, f_lb, cfg.c1),
    }
}
