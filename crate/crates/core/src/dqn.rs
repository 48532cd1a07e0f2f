//! The deep Q-network that scores learning-rate actions.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureRange, FeatureScaling, StateVector, NUM_FEATURES};
use crate::nn::{self, Architecture, OutputHead, ParamVector, Targets};
use crate::replay::Experience;

pub const MODEL_MAGIC: &[u8; 4] = b"QGDM";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Half,
    Double,
    Accept,
}

impl Action {
    pub fn name(self) -> &'static str {
        match self {
            Action::Half => "half",
            Action::Double => "double",
            Action::Accept => "accept",
        }
    }
}

/// v1 can halve or accept; v2 can also double the learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSet {
    V1,
    V2,
}

impl ActionSet {
    pub fn actions(self) -> &'static [Action] {
        match self {
            ActionSet::V1 => &[Action::Half, Action::Accept],
            ActionSet::V2 => &[Action::Half, Action::Double, Action::Accept],
        }
    }

    pub fn len(self) -> usize {
        self.actions().len()
    }

    pub fn is_empty(self) -> bool {
        false
    }

    pub fn action(self, index: usize) -> Result<Action> {
        self.actions()
            .get(index)
            .copied()
            .ok_or_else(|| Error::Capability(format!("{self:?} has no action #{index}")))
    }

    pub fn index_of(self, action: Action) -> Result<usize> {
        self.actions()
            .iter()
            .position(|&a| a == action)
            .ok_or_else(|| Error::Capability(format!("action `{}` is not available in {self:?}", action.name())))
    }

    /// `"v1"` or `"v2"`.
    pub fn label(self) -> &'static str {
        match self {
            ActionSet::V1 => "v1",
            ActionSet::V2 => "v2",
        }
    }

    fn tag(self) -> u8 {
        match self {
            ActionSet::V1 => 1,
            ActionSet::V2 => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            1 => Ok(ActionSet::V1),
            2 => Ok(ActionSet::V2),
            t => Err(Error::Format(format!("unknown action-set tag {t}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DqnModel {
    pub arch: Architecture,
    pub params: ParamVector,
    pub action_set: ActionSet,
    pub scaling: FeatureScaling,
    pub alpha_c: f64,
}

impl DqnModel {
    /// `6 x hidden... x |A|` network with sigmoid hidden units and linear outputs,
    /// weights uniform in `[-r, r]`, `r = sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn new(
        hidden: &[usize],
        action_set: ActionSet,
        scaling: FeatureScaling,
        alpha_c: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut model = Self::zeros(hidden, action_set, scaling, alpha_c)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ranges = model.arch.layer_ranges();
        let fans: Vec<_> = model.arch.fans().collect();
        for (range, (fan_in, fan_out)) in ranges.into_iter().zip(fans) {
            let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let n_weights = fan_in * fan_out;
            for v in &mut model.params[range.start..range.start + n_weights] {
                *v = rng.random_range(-r..=r);
            }
        }
        Ok(model)
    }

    pub fn zeros(hidden: &[usize], action_set: ActionSet, scaling: FeatureScaling, alpha_c: f64) -> Result<Self> {
        let mut sizes = vec![NUM_FEATURES];
        sizes.extend_from_slice(hidden);
        sizes.push(action_set.len());
        let arch = Architecture::new(sizes, OutputHead::Identity)?;
        scaling.validate()?;
        if !(alpha_c > 0.0 && alpha_c.is_finite()) {
            return Err(Error::Config(format!(
                "initial learning rate must be positive, got {alpha_c}"
            )));
        }
        Ok(Self {
            params: ParamVector::zeros(arch.param_count()),
            arch,
            action_set,
            scaling,
            alpha_c,
        })
    }

    pub fn num_actions(&self) -> usize {
        self.action_set.len()
    }

    pub fn action(&self, index: usize) -> Result<Action> {
        self.action_set.action(index)
    }

    pub fn action_index(&self, action: Action) -> Result<usize> {
        self.action_set.index_of(action)
    }

    pub fn q_values(&self, state: &StateVector) -> Result<Vec<f64>> {
        Ok(nn::forward(&self.arch, &self.params, state.as_slice())?.output)
    }

    pub fn greedy_action(&self, state: &StateVector) -> Result<usize> {
        Ok(argmax(&self.q_values(state)?))
    }

    /// Epsilon-greedy: a uniform random action with probability `epsilon`,
    /// otherwise the argmax (lowest index on ties).
    pub fn select_action<R: Rng + ?Sized>(&self, state: &StateVector, epsilon: f64, rng: &mut R) -> Result<usize> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::Config(format!("epsilon must lie in [0, 1], got {epsilon}")));
        }
        if epsilon > 0.0 && rng.random::<f64>() < epsilon {
            Ok(rng.random_range(0..self.num_actions()))
        } else {
            self.greedy_action(state)
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 8 * self.params.len());
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
        out.push(self.action_set.tag());
        out.extend_from_slice(&self.alpha_c.to_le_bytes());
        let sizes = self.arch.layer_sizes();
        out.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
        for &s in sizes {
            out.extend_from_slice(&(s as u32).to_le_bytes());
        }
        for r in &self.scaling.ranges {
            out.extend_from_slice(&r.min.to_le_bytes());
            out.extend_from_slice(&r.max.to_le_bytes());
            out.extend_from_slice(&r.shift.unwrap_or(f64::NAN).to_le_bytes());
        }
        for v in self.params.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != MODEL_MAGIC {
            return Err(Error::Format("bad magic bytes, not a QGDM model".into()));
        }
        let version = r.u32()?;
        if version != MODEL_FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported model format version {version}")));
        }
        let action_set = ActionSet::from_tag(r.take(1)?[0])?;
        let alpha_c = r.f64()?;
        let n_layers = r.u32()? as usize;
        if n_layers > 64 {
            return Err(Error::Format(format!("implausible layer count {n_layers}")));
        }
        let sizes = (0..n_layers)
            .map(|_| r.u32().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let arch = Architecture::new(sizes, OutputHead::Identity).map_err(|e| Error::Format(e.to_string()))?;
        if arch.input_width() != NUM_FEATURES || arch.output_width() != action_set.len() {
            return Err(Error::Format(format!(
                "architecture {:?} does not fit {NUM_FEATURES} features and {} actions",
                arch.layer_sizes(),
                action_set.len()
            )));
        }
        let mut ranges = [FeatureRange::new(0.0, 0.0); NUM_FEATURES];
        for range in &mut ranges {
            let (min, max, shift) = (r.f64()?, r.f64()?, r.f64()?);
            *range = FeatureRange {
                min,
                max,
                shift: (!shift.is_nan()).then_some(shift),
            };
        }
        let params: ParamVector = (0..arch.param_count())
            .map(|_| r.f64())
            .collect::<Result<Vec<_>>>()?
            .into();
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            arch,
            params,
            action_set,
            scaling: FeatureScaling { ranges },
            alpha_c,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Format(format!("unexpected end of file at byte {}", self.pos)))?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct QTarget {
    pub target: Vec<f64>,
    pub action: usize,
    pub estimate: Vec<f64>,
}

/// Bellman target: the chosen action's entry becomes `r + gamma * max_a' Q(s', a')`
/// (just `r` for terminal experiences); every other entry copies the estimate.
pub fn build_target(model: &DqnModel, exp: &Experience, gamma: f64) -> Result<QTarget> {
    let estimate = model.q_values(&exp.state)?;
    if exp.action >= estimate.len() {
        return Err(Error::Capability(format!(
            "experience action #{} out of range",
            exp.action
        )));
    }
    let mut target = estimate.clone();
    target[exp.action] = if exp.terminal {
        exp.reward
    } else {
        let next = model.q_values(&exp.next_state)?;
        exp.reward + gamma * next.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    };
    Ok(QTarget {
        target,
        action: exp.action,
        estimate,
    })
}

/// Terminal target carrying the reward of every action, used for the last step
/// of an episode that reached the horizon.
pub fn build_terminal_target(model: &DqnModel, exp: &Experience) -> Result<QTarget> {
    let estimate = model.q_values(&exp.state)?;
    let rewards = exp
        .action_rewards
        .as_ref()
        .ok_or_else(|| Error::Config("experience carries no per-action rewards".into()))?;
    if rewards.len() != estimate.len() {
        return Err(Error::DimensionMismatch {
            what: "per-action rewards",
            expected: estimate.len(),
            got: rewards.len(),
        });
    }
    Ok(QTarget {
        target: rewards.clone(),
        action: exp.action,
        estimate,
    })
}

fn target_for(model: &DqnModel, exp: &Experience, gamma: f64) -> Result<QTarget> {
    if exp.terminal && exp.action_rewards.is_some() {
        build_terminal_target(model, exp)
    } else {
        build_target(model, exp, gamma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DqnOptimizerKind {
    Sgd,
    Rmsprop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DqnOptimizerConfig {
    pub kind: DqnOptimizerKind,
    /// The step size `beta`.
    pub step: f64,
    /// Rmsprop decay of the squared-gradient average.
    #[serde(default = "default_decay")]
    pub decay: f64,
    /// Rmsprop stabilizer added to the root mean square.
    #[serde(default = "default_stabilizer")]
    pub stabilizer: f64,
}

fn default_decay() -> f64 {
    0.9
}

fn default_stabilizer() -> f64 {
    1e-8
}

impl DqnOptimizerConfig {
    pub fn sgd(step: f64) -> Self {
        Self {
            kind: DqnOptimizerKind::Sgd,
            step,
            decay: default_decay(),
            stabilizer: default_stabilizer(),
        }
    }

    pub fn rmsprop(step: f64) -> Self {
        Self {
            kind: DqnOptimizerKind::Rmsprop,
            ..Self::sgd(step)
        }
    }
}

/// Optimizer state carried across mini-batch updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqnUpdater {
    pub config: DqnOptimizerConfig,
    mean_sq: Vec<f64>,
}

impl DqnUpdater {
    pub fn new(config: DqnOptimizerConfig) -> Self {
        Self {
            config,
            mean_sq: Vec::new(),
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        let c = self.config;
        match c.kind {
            DqnOptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= c.step * g;
                }
            }
            DqnOptimizerKind::Rmsprop => {
                if self.mean_sq.len() != params.len() {
                    self.mean_sq = vec![0.0; params.len()];
                }
                for ((p, g), m) in params.iter_mut().zip(grad).zip(&mut self.mean_sq) {
                    *m = c.decay * *m + (1.0 - c.decay) * g * g;
                    *p -= c.step * g / (m.sqrt() + c.stabilizer);
                }
            }
        }
    }
}

/// One update of `theta` from a mini-batch:
/// `theta -= beta / |S| * sum (y_hat - y) dQ/dtheta` (sgd), or the same
/// gradient rescaled per parameter by rmsprop. Returns the batch loss
/// `mean 0.5 |y_hat - y|^2` measured before the update.
pub fn apply_minibatch(
    model: &mut DqnModel,
    batch: &[&Experience],
    gamma: f64,
    updater: &mut DqnUpdater,
) -> Result<f64> {
    let (loss, grad) = minibatch_gradient(model, batch, gamma)?;
    updater.step(&mut model.params, &grad);
    Ok(loss)
}

/// Loss and gradient of `mean 0.5 |Q(s) - y|^2` with targets held fixed.
pub fn minibatch_gradient(model: &DqnModel, batch: &[&Experience], gamma: f64) -> Result<(f64, ParamVector)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let k = model.num_actions();
    let mut inputs = Vec::with_capacity(batch.len() * NUM_FEATURES);
    let mut targets = Vec::with_capacity(batch.len() * k);
    for exp in batch {
        inputs.extend_from_slice(exp.state.as_slice());
        targets.extend(target_for(model, exp, gamma)?.target);
    }
    nn::loss_and_gradient(&model.arch, &model.params, &inputs, Targets::Values(&targets))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(set: ActionSet, seed: u64) -> DqnModel {
        DqnModel::new(&[32, 16], set, FeatureScaling::unit(0.0), 4.0, seed).unwrap()
    }

    fn exp(state: [f64; 6], action: usize, reward: f64, next: [f64; 6], terminal: bool) -> Experience {
        Experience {
            state: StateVector(state),
            action,
            reward,
            next_state: StateVector(next),
            terminal,
            episode_id: 0,
            step: 3,
            action_rewards: None,
        }
    }

    #[test]
    fn zero_model_outputs_zero() {
        for set in [ActionSet::V1, ActionSet::V2] {
            let m = DqnModel::zeros(&[32, 16], set, FeatureScaling::unit(0.0), 1.0).unwrap();
            let q = m.q_values(&StateVector([0.3; 6])).unwrap();
            assert_eq!(q, vec![0.0; set.len()]);
        }
    }

    #[test]
    fn argmax_ties_to_lowest() {
        assert_eq!(argmax(&[2.0, 1.0]), 0);
        assert_eq!(argmax(&[1.0, 1.0, 1.0]), 0);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn epsilon_zero_is_greedy() {
        let m = model(ActionSet::V2, 3);
        let s = StateVector([0.1, -0.2, 0.3, 1.0, -0.5, 0.9]);
        let greedy = m.greedy_action(&s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            assert_eq!(m.select_action(&s, 0.0, &mut rng).unwrap(), greedy);
        }
        assert!(m.select_action(&s, 1.5, &mut rng).is_err());
    }

    #[test]
    fn terminal_and_bootstrap_targets() {
        let m = model(ActionSet::V1, 1);
        let s = [0.1; 6];
        let t = build_target(&m, &exp(s, 1, 0.5, [0.9; 6], true), 0.99).unwrap();
        assert_eq!(t.target[1], 0.5);
        assert_eq!(t.target[0], t.estimate[0]);

        let next = m.q_values(&StateVector([0.9; 6])).unwrap();
        let max_next = next.iter().copied().fold(f64::MIN, f64::max);
        let t = build_target(&m, &exp(s, 0, 1.0, [0.9; 6], false), 0.99).unwrap();
        assert_eq!(t.target[0], 1.0 + 0.99 * max_next);
        assert_eq!(t.target[1], t.estimate[1]);
    }

    #[test]
    fn bellman_arithmetic() {
        // Identity-like network: zero hidden influence, output biases fixed at 2.
        let mut m = DqnModel::zeros(&[4], ActionSet::V1, FeatureScaling::unit(0.0), 1.0).unwrap();
        let n = m.params.len();
        m.params[n - 2] = 2.0;
        m.params[n - 1] = 1.0;
        let t = build_target(&m, &exp([0.0; 6], 1, 1.0, [0.0; 6], false), 0.99).unwrap();
        assert!((t.target[1] - 2.98).abs() < 1e-12);
    }

    #[test]
    fn terminal_action_rewards_fill_every_entry() {
        let m = model(ActionSet::V2, 5);
        let mut e = exp([0.2; 6], 2, 0.3, [0.2; 6], true);
        e.action_rewards = Some(vec![0.1, -1.0, 0.3]);
        let t = build_terminal_target(&m, &e).unwrap();
        assert_eq!(t.target, vec![0.1, -1.0, 0.3]);
    }

    #[test]
    fn matched_targets_leave_model_unchanged() {
        // Terminal experiences whose reward equals the current estimate give zero error.
        let mut m = model(ActionSet::V1, 7);
        let s = StateVector([0.5, 0.1, -0.3, 0.0, 0.2, 1.0]);
        let q = m.q_values(&s).unwrap();
        let e = exp(s.0, 0, q[0], s.0, true);
        let before = m.params.clone();
        let mut up = DqnUpdater::new(DqnOptimizerConfig::sgd(0.5));
        apply_minibatch(&mut m, &[&e, &e], 0.99, &mut up).unwrap();
        assert_eq!(m.params, before);
    }

    #[test]
    fn zero_step_is_identity() {
        let mut m = model(ActionSet::V2, 2);
        let e = exp([0.4; 6], 1, 3.0, [0.1; 6], false);
        let before = m.params.clone();
        let mut up = DqnUpdater::new(DqnOptimizerConfig::sgd(0.0));
        apply_minibatch(&mut m, &[&e], 0.99, &mut up).unwrap();
        assert_eq!(m.params, before);
    }

    #[test]
    fn single_sample_sgd_step() {
        let mut m = model(ActionSet::V1, 4);
        let e = exp([0.4, -0.1, 0.2, 1.0, 0.0, 0.5], 1, 3.0, [0.1; 6], false);
        let tgt = build_target(&m, &e, 0.9).unwrap();
        // theta - beta * (y_hat - y)[a] * dQ_a/dtheta, with dQ_a/dtheta from a one-hot backprop.
        let err = tgt.estimate[1] - tgt.target[1];
        let mut onehot_target = tgt.estimate.clone();
        onehot_target[1] -= 1.0;
        let (_, dq) =
            nn::loss_and_gradient(&m.arch, &m.params, e.state.as_slice(), Targets::Values(&onehot_target)).unwrap();
        let expected: Vec<f64> = m
            .params
            .iter()
            .zip(dq.iter())
            .map(|(p, g)| p - 0.05 * err * g)
            .collect();
        let mut up = DqnUpdater::new(DqnOptimizerConfig::sgd(0.05));
        apply_minibatch(&mut m, &[&e], 0.9, &mut up).unwrap();
        for (a, b) in m.params.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn rmsprop_moves_parameters() {
        let mut m = model(ActionSet::V2, 9);
        let e = exp([0.4; 6], 1, 3.0, [0.1; 6], true);
        let mut up = DqnUpdater::new(DqnOptimizerConfig::rmsprop(0.001));
        let l0 = apply_minibatch(&mut m, &[&e], 0.99, &mut up).unwrap();
        for _ in 0..200 {
            apply_minibatch(&mut m, &[&e], 0.99, &mut up).unwrap();
        }
        let l1 = minibatch_gradient(&m, &[&e], 0.99).unwrap().0;
        assert!(l1 < l0);
    }

    #[test]
    fn empty_batch_rejected() {
        let mut m = model(ActionSet::V1, 0);
        let mut up = DqnUpdater::new(DqnOptimizerConfig::sgd(0.01));
        assert!(matches!(
            apply_minibatch(&mut m, &[], 0.99, &mut up),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn model_bytes_round_trip() {
        let mut scaling = FeatureScaling::unit(0.0);
        scaling.ranges[0] = FeatureRange::new(0.125, 4.4);
        let m = DqnModel::new(&[32, 16], ActionSet::V2, scaling, 2.0, 11).unwrap();
        let back = DqnModel::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes(), m.to_bytes());
    }

    #[test]
    fn v1_has_no_double() {
        let m = DqnModel::from_bytes(&model(ActionSet::V1, 0).to_bytes()).unwrap();
        assert!(matches!(m.action_index(Action::Double), Err(Error::Capability(_))));
        assert_eq!(m.num_actions(), 2);
    }

    #[test]
    fn corrupt_files_rejected() {
        let mut bytes = model(ActionSet::V1, 0).to_bytes();
        let good = bytes.clone();
        bytes[0] = b'X';
        assert!(matches!(DqnModel::from_bytes(&bytes), Err(Error::Format(_))));
        assert!(matches!(
            DqnModel::from_bytes(&good[..good.len() - 3]),
            Err(Error::Format(_))
        ));
        let mut long = good.clone();
        long.push(0);
        assert!(matches!(DqnModel::from_bytes(&long), Err(Error::Format(_))));
    }
}
