//! Gradient-descent optimizers that share one stepping rule and differ only in
//! who picks the learning-rate action: a trained DQN (Q-gradient descent), the
//! sufficient-decrease test (Armijo / nonmonotone line search) or nobody
//! (fixed-rate gradient descent).
//!
//! Every optimizer keeps an accepted iterate `x_bar` with direction
//! `d = -grad f(x_bar)` and proposes candidates `x_t = x_bar + alpha_t * d`.
//! Each candidate costs one objective evaluation, and all of them are counted
//! against the same budget `T`.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dqn::{Action, ActionSet, DqnModel};
use crate::error::{Error, Result};
use crate::features::{self, Feature, FeatureScaling, HistoryWindow, StateVector, NUM_FEATURES};
use crate::nn::ParamVector;
use crate::objective::ObjectiveFn;

/// Smallest learning rate a line search may try before giving up.
pub const ALPHA_UNDERFLOW: f64 = 1e-30;

/// Mutable state of one descent run.
#[derive(Debug, Clone)]
pub struct Descent<'a> {
    obj: &'a ObjectiveFn,
    x_bar: ParamVector,
    f_bar: f64,
    grad_bar: ParamVector,
    direction: Vec<f64>,
    x_cand: ParamVector,
    f_cand: f64,
    alpha_c: f64,
    window: HistoryWindow,
    evaluations: usize,
    accepted: usize,
}

/// What happened to the objective after an action was applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    /// The new candidate was evaluated; `f` is its objective value.
    Evaluated { f: f64 },
    /// The new candidate's objective is not finite.
    Diverged,
    /// Nothing was evaluated (final step of a run).
    Stopped,
}

impl<'a> Descent<'a> {
    /// Evaluates `x_1` and makes it both the accepted and the candidate iterate (`t = 1`).
    pub fn start(obj: &'a ObjectiveFn, x1: &ParamVector, alpha_c: f64, window: usize) -> Result<Self> {
        if x1.len() != obj.dim() {
            return Err(Error::DimensionMismatch {
                what: "initial iterate",
                expected: obj.dim(),
                got: x1.len(),
            });
        }
        let (f, g) = obj.value_and_gradient(x1)?;
        if !f.is_finite() {
            return Err(Error::Domain(format!("objective at x_1 is {f}")));
        }
        let direction = g.iter().map(|v| -v).collect();
        Ok(Self {
            obj,
            x_bar: x1.clone(),
            f_bar: f,
            grad_bar: g,
            direction,
            x_cand: x1.clone(),
            f_cand: f,
            alpha_c,
            window: HistoryWindow::new(window, alpha_c),
            evaluations: 1,
            accepted: 0,
        })
    }

    /// Takes `steps` plain gradient steps at `alpha_c`; afterwards the last
    /// point is both accepted and candidate.
    pub fn warm_up(&mut self, steps: usize) -> Result<()> {
        for _ in 0..steps {
            self.window.update(self.f_cand, &self.direction);
            let next = self.x_bar.axpy(self.alpha_c, &self.direction);
            let (f, g) = self.obj.value_and_gradient(&next)?;
            self.evaluations += 1;
            if !f.is_finite() {
                return Err(Error::Domain(format!(
                    "objective diverged during warm-up at alpha_c = {}",
                    self.alpha_c
                )));
            }
            self.set_accepted(next, f, g);
            self.x_cand = self.x_bar.clone();
            self.f_cand = f;
        }
        Ok(())
    }

    fn set_accepted(&mut self, x: ParamVector, f: f64, g: ParamVector) {
        self.direction.clear();
        self.direction.extend(g.iter().map(|v| -v));
        self.x_bar = x;
        self.f_bar = f;
        self.grad_bar = g;
    }

    pub fn t(&self) -> usize {
        self.window.t
    }

    pub fn alpha(&self) -> f64 {
        self.window.alpha
    }

    pub fn alpha_c(&self) -> f64 {
        self.alpha_c
    }

    pub fn f_candidate(&self) -> f64 {
        self.f_cand
    }

    pub fn f_accepted(&self) -> f64 {
        self.f_bar
    }

    pub fn x_candidate(&self) -> &ParamVector {
        &self.x_cand
    }

    pub fn x_accepted(&self) -> &ParamVector {
        &self.x_bar
    }

    pub fn direction(&self) -> &[f64] {
        &self.direction
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    pub fn accepted_count(&self) -> usize {
        self.accepted
    }

    pub fn window(&self) -> &HistoryWindow {
        &self.window
    }

    /// `d . grad f(x_bar)`, negative for a descent direction.
    pub fn slope(&self) -> f64 {
        self.grad_bar.dot(&self.direction)
    }

    pub fn state(&self, scaling: &FeatureScaling, horizon: usize) -> Result<StateVector> {
        features::build_state(
            &self.window,
            self.f_cand,
            &self.grad_bar,
            &self.direction,
            scaling,
            horizon,
        )
    }

    pub fn raw_features(&self, shifts: (f64, f64)) -> Result<[f64; NUM_FEATURES]> {
        features::raw_features(&self.window, self.f_cand, &self.grad_bar, &self.direction, shifts)
    }

    /// Learning rate that `action` would set.
    pub fn proposed_alpha(&self, action: Action, set: ActionSet) -> f64 {
        let alpha = self.alpha();
        match (action, set) {
            (Action::Half, _) => 0.5 * alpha,
            (Action::Double, _) => 2.0 * alpha,
            (Action::Accept, ActionSet::V1) => self.alpha_c,
            (Action::Accept, ActionSet::V2) => alpha,
        }
    }

    /// Objective of the candidate `action` would propose, without changing any state.
    /// For accept this is the current candidate's value (it becomes `x_bar`).
    pub fn preview(&self, action: Action, set: ActionSet) -> Result<f64> {
        match action {
            Action::Accept => Ok(self.f_cand),
            Action::Half | Action::Double => {
                let alpha = self.proposed_alpha(action, set);
                let x = self.x_bar.axpy(alpha, &self.direction);
                match self.obj.evaluate(&x) {
                    Ok(f) => Ok(f),
                    Err(Error::NumericOverflow { .. }) => Ok(f64::NAN),
                    Err(e) => Err(e),
                }
            }
        }
    }

    /// Applies `action`, records step `t` in the history and, unless `last`,
    /// evaluates the next candidate `x_bar + alpha * d`.
    pub fn apply(&mut self, action: Action, set: ActionSet, last: bool) -> Result<StepOutcome> {
        if action == Action::Double && set == ActionSet::V1 {
            return Err(Error::Capability("version 1 cannot double the learning rate".into()));
        }
        let new_alpha = self.proposed_alpha(action, set);
        self.window.update(self.f_cand, &self.direction);
        self.window.alpha = new_alpha;
        if action == Action::Accept {
            self.accepted += 1;
            if last {
                self.x_bar = self.x_cand.clone();
                self.f_bar = self.f_cand;
            } else if self.x_cand != self.x_bar {
                let (f, g) = self.obj.value_and_gradient(&self.x_cand)?;
                self.set_accepted(self.x_cand.clone(), f, g);
            }
        }
        if last {
            return Ok(StepOutcome::Stopped);
        }
        self.x_cand = self.x_bar.axpy(new_alpha, &self.direction);
        self.evaluations += 1;
        match self.obj.evaluate(&self.x_cand) {
            Ok(f) if f.is_finite() => {
                self.f_cand = f;
                Ok(StepOutcome::Evaluated { f })
            }
            Ok(_) | Err(Error::NumericOverflow { .. }) => {
                self.f_cand = f64::NAN;
                Ok(StepOutcome::Diverged)
            }
            Err(e) => Err(e),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub t: usize,
    /// Objective of the candidate evaluated at step `t`.
    pub f: f64,
    /// Learning rate that produced that candidate.
    pub alpha: f64,
    pub action: Action,
    /// Accepted iterates so far, including this step.
    pub accepted_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptRunTrace {
    pub optimizer: String,
    pub steps: Vec<TraceStep>,
    /// `f(x_1)`; Q-gradient-descent traces begin after the warm-up, so this
    /// is not always the first row.
    pub start_f: f64,
    /// Objective of the iterate the optimizer returns.
    pub final_f: f64,
    pub evaluations: usize,
    pub diverged: bool,
    pub stalled: bool,
    /// Post-transform states seen by the DQN (Q-gradient descent only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub states: Vec<StateVector>,
    #[serde(skip)]
    pub x_final: ParamVector,
}

impl OptRunTrace {
    fn new(optimizer: impl Into<String>) -> Self {
        Self {
            optimizer: optimizer.into(),
            steps: Vec::new(),
            start_f: f64::NAN,
            final_f: f64::NAN,
            evaluations: 0,
            diverged: false,
            stalled: false,
            states: Vec::new(),
            x_final: ParamVector::default(),
        }
    }

    pub fn count(&self, action: Action) -> usize {
        self.steps.iter().filter(|s| s.action == action).count()
    }

    /// Fraction of steps that halved the learning rate.
    pub fn halving_frequency(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        self.count(Action::Half) as f64 / self.steps.len() as f64
    }

    pub fn initial_f(&self) -> Option<f64> {
        if self.start_f.is_finite() {
            Some(self.start_f)
        } else {
            self.steps.first().map(|s| s.f)
        }
    }

    /// CSV with columns `t,f,alpha,action,accepted_count`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,f,alpha,action,accepted_count")?;
        for s in &self.steps {
            writeln!(
                out,
                "{},{:?},{:?},{},{}",
                s.t,
                s.f,
                s.alpha,
                s.action.name(),
                s.accepted_count
            )?;
        }
        Ok(())
    }

    pub fn read_csv(optimizer: &str, text: &str) -> Result<Self> {
        let mut trace = Self::new(optimizer);
        for (i, line) in text.lines().enumerate().skip(1) {
            let bad = |msg: &str| Error::Parse {
                line: i + 1,
                msg: msg.to_string(),
            };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad("expected 5 columns"));
            }
            let action = match f[3] {
                "half" => Action::Half,
                "double" => Action::Double,
                "accept" => Action::Accept,
                _ => return Err(bad("unknown action")),
            };
            trace.steps.push(TraceStep {
                t: f[0].parse().map_err(|_| bad("bad t"))?,
                f: f[1].parse().map_err(|_| bad("bad f"))?,
                alpha: f[2].parse().map_err(|_| bad("bad alpha"))?,
                action,
                accepted_count: f[4].parse().map_err(|_| bad("bad accepted_count"))?,
            });
        }
        Ok(trace)
    }
}

/// Options for a deployed Q-gradient-descent run.
#[derive(Debug, Clone, Default)]
pub struct QgdOptions {
    /// Features forced to zero after the transform (ablation).
    pub pinned: Vec<Feature>,
    /// Keep every state fed to the DQN in the trace.
    pub record_states: bool,
}

/// Greedy Q-gradient descent: `M - 1` warm-up steps at `alpha_c`, then the
/// DQN's argmax action at every step `t = M..=T`. Returns `x_T`.
pub fn qgd_run(
    obj: &ObjectiveFn,
    model: &DqnModel,
    x1: &ParamVector,
    window: usize,
    horizon: usize,
    opts: &QgdOptions,
) -> Result<OptRunTrace> {
    if window < 1 || horizon < window {
        return Err(Error::Config(format!("need 1 <= M <= T, got M={window}, T={horizon}")));
    }
    let name = match model.action_set {
        ActionSet::V1 => "qgd_v1",
        ActionSet::V2 => "qgd_v2",
    };
    let mut trace = OptRunTrace::new(name);
    let mut env = Descent::start(obj, x1, model.alpha_c, window)?;
    trace.start_f = env.f_candidate();
    env.warm_up(window - 1)?;
    for t in window..=horizon {
        let mut state = env.state(&model.scaling, horizon)?;
        for &f in &opts.pinned {
            state.pin(f);
        }
        if opts.record_states {
            trace.states.push(state);
        }
        let action = model.action(model.greedy_action(&state)?)?;
        let (f, alpha) = (env.f_candidate(), env.alpha());
        let last = t == horizon;
        let outcome = env.apply(action, model.action_set, last)?;
        trace.steps.push(TraceStep {
            t,
            f,
            alpha,
            action,
            accepted_count: env.accepted_count(),
        });
        if outcome == StepOutcome::Diverged {
            trace.diverged = true;
            break;
        }
    }
    trace.evaluations = env.evaluations();
    // Algorithm output is the last evaluated candidate.
    trace.final_f = trace.steps.last().map_or(env.f_candidate(), |s| s.f);
    trace.x_final = if trace.diverged {
        env.x_accepted().clone()
    } else {
        env.x_candidate().clone()
    };
    Ok(trace)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSearchConfig {
    /// Sufficient-decrease constant.
    pub c: f64,
    /// Number of accepted values the decrease is measured against (1 = Armijo).
    pub memory: usize,
    pub alpha_c: f64,
}

impl LineSearchConfig {
    pub fn armijo(alpha_c: f64) -> Self {
        Self {
            c: 1e-4,
            memory: 1,
            alpha_c,
        }
    }

    pub fn nonmonotone(alpha_c: f64) -> Self {
        Self {
            c: 1e-4,
            memory: 3,
            alpha_c,
        }
    }

    pub fn name(&self) -> &'static str {
        if self.memory == 1 {
            "armijo"
        } else {
            "nonmonotone"
        }
    }
}

/// `f_new <= history_max + c * alpha * g_dot_d`.
pub fn sufficient_decrease_check(f_new: f64, history_max: f64, alpha: f64, g_dot_d: f64, c: f64) -> bool {
    f_new <= history_max + c * alpha * g_dot_d
}

/// Gradient descent with a backtracking (nonmonotone when `memory > 1`) line
/// search under the same accept/halve rules as Q-gradient descent v1.
///
/// `observe` sees the descent state at every step before the decision; it is
/// how feature calibration samples a reference run.
pub fn linesearch_gd_observed(
    obj: &ObjectiveFn,
    cfg: &LineSearchConfig,
    x1: &ParamVector,
    horizon: usize,
    feature_window: usize,
    mut observe: impl FnMut(&Descent<'_>) -> Result<()>,
) -> Result<OptRunTrace> {
    if cfg.memory < 1 || !(cfg.c >= 0.0) {
        return Err(Error::Config(format!("invalid line search config {cfg:?}")));
    }
    if horizon < 1 {
        return Err(Error::Config("evaluation budget must be positive".into()));
    }
    let mut trace = OptRunTrace::new(cfg.name());
    let mut env = Descent::start(obj, x1, cfg.alpha_c, feature_window.max(1))?;
    trace.start_f = env.f_candidate();
    let mut accepted_f: VecDeque<f64> = VecDeque::with_capacity(cfg.memory + 1);
    for t in 1..=horizon {
        observe(&env)?;
        let (f, alpha) = (env.f_candidate(), env.alpha());
        let accept = if t == 1 {
            // x_1 is the starting point.
            true
        } else {
            let hist_max = accepted_f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            sufficient_decrease_check(f, hist_max, alpha, env.slope(), cfg.c)
        };
        if accept {
            accepted_f.push_back(f);
            if accepted_f.len() > cfg.memory {
                accepted_f.pop_front();
            }
        }
        let action = if accept { Action::Accept } else { Action::Half };
        if action == Action::Half && 0.5 * alpha < ALPHA_UNDERFLOW {
            trace.stalled = true;
            break;
        }
        let outcome = env.apply(action, ActionSet::V1, t == horizon)?;
        trace.steps.push(TraceStep {
            t,
            f,
            alpha,
            action,
            accepted_count: env.accepted_count(),
        });
        if outcome == StepOutcome::Diverged {
            // A diverged candidate simply fails the test at the next step.
            continue;
        }
    }
    trace.evaluations = env.evaluations();
    trace.final_f = env.f_accepted();
    trace.x_final = env.x_accepted().clone();
    Ok(trace)
}

pub fn linesearch_gd(
    obj: &ObjectiveFn,
    cfg: &LineSearchConfig,
    x1: &ParamVector,
    horizon: usize,
) -> Result<OptRunTrace> {
    linesearch_gd_observed(obj, cfg, x1, horizon, 1, |_| Ok(()))
}

/// Plain gradient descent `x_{t+1} = x_t - alpha * grad f(x_t)` for `T` evaluations.
pub fn fixed_gd(obj: &ObjectiveFn, alpha: f64, x1: &ParamVector, horizon: usize) -> Result<OptRunTrace> {
    if horizon < 1 {
        return Err(Error::Config("evaluation budget must be positive".into()));
    }
    let mut trace = OptRunTrace::new("fixed");
    let mut env = Descent::start(obj, x1, alpha, 1)?;
    trace.start_f = env.f_candidate();
    for t in 1..=horizon {
        let f = env.f_candidate();
        let outcome = env.apply(Action::Accept, ActionSet::V1, t == horizon)?;
        trace.steps.push(TraceStep {
            t,
            f,
            alpha,
            action: Action::Accept,
            accepted_count: env.accepted_count(),
        });
        if outcome == StepOutcome::Diverged {
            trace.diverged = true;
            break;
        }
    }
    trace.evaluations = env.evaluations();
    trace.final_f = trace.steps.last().map_or(f64::NAN, |s| s.f);
    trace.x_final = env.x_candidate().clone();
    Ok(trace)
}
