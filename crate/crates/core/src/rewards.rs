//! Reward functions and discounted returns.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    /// `c / (f - f_lb)`.
    InverseDistance,
    /// `1` if the objective dropped by at least a factor 1.001, else `0`.
    SufficientDecrease,
    /// `f_prev - f_curr`.
    ObjectiveChange,
}

impl RewardKind {
    pub const ALL: [RewardKind; 3] = [
        RewardKind::InverseDistance,
        RewardKind::SufficientDecrease,
        RewardKind::ObjectiveChange,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            RewardKind::InverseDistance => "r_id",
            RewardKind::SufficientDecrease => "r_sd",
            RewardKind::ObjectiveChange => "r_oc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub kind: RewardKind,
    pub c: f64,
    pub f_lb: f64,
}

impl RewardSpec {
    /// Per-step rewards along an objective trace `f_0, f_1, ...`: one reward
    /// for each transition `f_{t-1} -> f_t`.
    pub fn rewards_along(&self, trace: &[f64]) -> Result<Vec<f64>> {
        trace
            .windows(2)
            .map(|w| match self.kind {
                RewardKind::InverseDistance => reward_id(w[1], self.f_lb, self.c),
                RewardKind::SufficientDecrease => Ok(reward_sd(w[0], w[1])),
                RewardKind::ObjectiveChange => Ok(reward_oc(w[0], w[1])),
            })
            .collect()
    }
}

pub fn reward_id(f_val: f64, f_lb: f64, c: f64) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::Domain(format!("reward scale must be positive, got {c}")));
    }
    if !(f_val > f_lb) {
        return Err(Error::Domain(format!(
            "objective {f_val} is not above its lower bound {f_lb}"
        )));
    }
    Ok(c / (f_val - f_lb))
}

pub fn reward_sd(f_prev: f64, f_curr: f64) -> f64 {
    if f_prev >= 1.001 * f_curr {
        1.0
    } else {
        0.0
    }
}

pub fn reward_oc(f_prev: f64, f_curr: f64) -> f64 {
    f_prev - f_curr
}

/// `R_t = r_t + gamma * R_{t+1}` for every `t`, by backward recursion.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    assert!(gamma > 0.0 && gamma <= 1.0, "discount must lie in (0, 1]");
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (o, r) in out.iter_mut().zip(rewards).rev() {
        acc = r + gamma * acc;
        *o = acc;
    }
    out
}

/// Largest discounted return of an episode; `0` for an empty episode.
pub fn episode_rmax(rewards: &[f64], gamma: f64) -> f64 {
    discounted_returns(rewards, gamma)
        .into_iter()
        .reduce(f64::max)
        .unwrap_or(0.0)
}
