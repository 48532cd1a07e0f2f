//! The six-entry state vector describing an optimizer run to the DQN.
//!
//! Raw features are: learning rate, objective value, `|d . grad f|`, the
//! min/max encoding, the evaluation counter and the alignment of successive
//! directions. The objective value and the dot-product magnitude first go
//! through a reciprocal shift `1 / (s - c)`; everything except the encoding is
//! then mapped onto `[-1, 1]` by `1 - 2 (s - min) / (max - min)` and clipped.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_FEATURES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    LearningRate,
    ObjectiveValue,
    GradDotDir,
    Encoding,
    EvalCount,
    Alignment,
}

impl Feature {
    pub const ALL: [Feature; NUM_FEATURES] = [
        Feature::LearningRate,
        Feature::ObjectiveValue,
        Feature::GradDotDir,
        Feature::Encoding,
        Feature::EvalCount,
        Feature::Alignment,
    ];

    /// The features that can be pinned to zero in an ablation run.
    pub const ABLATABLE: [Feature; 3] = [Feature::ObjectiveValue, Feature::GradDotDir, Feature::Alignment];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::LearningRate => "learning_rate",
            Feature::ObjectiveValue => "objective_value",
            Feature::GradDotDir => "grad_dot_dir",
            Feature::Encoding => "encoding",
            Feature::EvalCount => "eval_count",
            Feature::Alignment => "alignment",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == name)
    }
}

/// Calibrated range of one feature, plus the optional reciprocal shift `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureRange {
    pub min: f64,
    pub max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift: Option<f64>,
}

impl FeatureRange {
    pub fn new(min: f64, max: f64) -> Self {
        Self { min, max, shift: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaling {
    pub ranges: [FeatureRange; NUM_FEATURES],
}

impl FeatureScaling {
    pub fn validate(&self) -> Result<()> {
        for (f, r) in Feature::ALL.iter().zip(&self.ranges) {
            if !(r.max > r.min) || !r.min.is_finite() || !r.max.is_finite() {
                return Err(Error::Config(format!(
                    "feature {} needs min < max, got [{}, {}]",
                    f.name(),
                    r.min,
                    r.max
                )));
            }
        }
        Ok(())
    }

    pub fn range(&self, f: Feature) -> &FeatureRange {
        &self.ranges[f.index()]
    }

    /// Identity-like scaling for tests and untrained models.
    pub fn unit(f_lb: f64) -> Self {
        let mut ranges = [FeatureRange::new(-1.0, 1.0); NUM_FEATURES];
        ranges[Feature::ObjectiveValue.index()].shift = Some(f_lb);
        ranges[Feature::GradDotDir.index()].shift = Some(0.0);
        Self { ranges }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateVector(pub [f64; NUM_FEATURES]);

impl StateVector {
    pub fn get(&self, f: Feature) -> f64 {
        self.0[f.index()]
    }

    pub fn pin(&mut self, f: Feature) {
        self.0[f.index()] = 0.0;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Per-run history the features are computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryWindow {
    /// The `capacity` lowest objective values seen so far, ascending.
    lowest: Vec<f64>,
    capacity: usize,
    prev_direction: Option<Vec<f64>>,
    /// Evaluation counter `t` (1-based).
    pub t: usize,
    pub alpha: f64,
}

impl HistoryWindow {
    pub fn new(capacity: usize, alpha: f64) -> Self {
        assert!(capacity >= 1, "window capacity must be positive");
        Self {
            lowest: Vec::with_capacity(capacity + 1),
            capacity,
            prev_direction: None,
            t: 1,
            alpha,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn lowest(&self) -> &[f64] {
        &self.lowest
    }

    pub fn prev_direction(&self) -> Option<&[f64]> {
        self.prev_direction.as_deref()
    }

    /// Records `f_t`, makes `d_t` the previous direction and advances `t`.
    pub fn update(&mut self, f_t: f64, d_t: &[f64]) {
        insert_lowest(&mut self.lowest, self.capacity, f_t);
        match &mut self.prev_direction {
            Some(prev) if prev.len() == d_t.len() => prev.copy_from_slice(d_t),
            slot => *slot = Some(d_t.to_vec()),
        }
        self.t += 1;
    }
}

fn insert_lowest(lowest: &mut Vec<f64>, capacity: usize, f: f64) {
    // After existing equal values: on ties the earlier occurrence survives.
    let pos = lowest.partition_point(|&v| v <= f);
    if pos >= capacity {
        return;
    }
    lowest.insert(pos, f);
    lowest.truncate(capacity);
}

/// `1` if `f_t` is at or below every retained value, `0` if it is within
/// their range, `-1` above. An empty window counts `f_t` as the lowest.
pub fn encode_min_max(f_t: f64, lowest: &[f64]) -> f64 {
    let (Some(&lo), Some(&hi)) = (
        lowest.iter().min_by(|a, b| a.total_cmp(b)),
        lowest.iter().max_by(|a, b| a.total_cmp(b)),
    ) else {
        return 1.0;
    };
    if f_t <= lo {
        1.0
    } else if f_t <= hi {
        0.0
    } else {
        -1.0
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean of `sign(d_t[i] * d_prev[i])`, with `sign(0) = 0`.
pub fn alignment(d_t: &[f64], d_prev: &[f64]) -> Result<f64> {
    if d_t.len() != d_prev.len() || d_t.is_empty() {
        return Err(Error::DimensionMismatch {
            what: "alignment directions",
            expected: d_t.len(),
            got: d_prev.len(),
        });
    }
    let s: f64 = d_t.iter().zip(d_prev).map(|(a, b)| sign(a * b)).sum();
    Ok(s / d_t.len() as f64)
}

/// Maps `min -> 1`, `max -> -1`, clipping to `[-1, 1]`.
pub fn scale_feature(raw: f64, min: f64, max: f64) -> f64 {
    let s = 1.0 - 2.0 * (raw - min) / (max - min);
    if s.is_nan() {
        // raw = +-inf with an infinite range edge; treat as out of range.
        return if raw > max { -1.0 } else { 1.0 };
    }
    s.clamp(-1.0, 1.0)
}

pub fn reciprocal_shift(raw: f64, c: f64) -> Result<f64> {
    if raw > c {
        Ok(1.0 / (raw - c))
    } else {
        Err(Error::Domain(format!(
            "reciprocal shift needs value above {c}, got {raw}"
        )))
    }
}

/// Feature values after the reciprocal shift but before range scaling.
///
/// The learning-rate, objective and dot-product entries are what calibration
/// records. `eval_count` holds the raw counter `t`.
pub fn raw_features(
    history: &HistoryWindow,
    f_t: f64,
    grad: &[f64],
    d_t: &[f64],
    shifts: (f64, f64),
) -> Result<[f64; NUM_FEATURES]> {
    if grad.len() != d_t.len() {
        return Err(Error::DimensionMismatch {
            what: "gradient vs direction",
            expected: d_t.len(),
            got: grad.len(),
        });
    }
    let dot: f64 = grad.iter().zip(d_t).map(|(g, d)| g * d).sum();
    let align = match history.prev_direction() {
        Some(prev) => alignment(d_t, prev)?,
        None => 0.0,
    };
    Ok([
        history.alpha,
        reciprocal_shift(f_t, shifts.0)?,
        reciprocal_shift(dot.abs(), shifts.1)?,
        encode_min_max(f_t, history.lowest()),
        history.t as f64,
        align,
    ])
}

/// Assembles the transformed state for step `history.t` of a `horizon`-step run.
pub fn build_state(
    history: &HistoryWindow,
    f_t: f64,
    grad: &[f64],
    d_t: &[f64],
    scaling: &FeatureScaling,
    horizon: usize,
) -> Result<StateVector> {
    let shifts = (
        scaling.range(Feature::ObjectiveValue).shift.unwrap_or(0.0),
        scaling.range(Feature::GradDotDir).shift.unwrap_or(0.0),
    );
    let raw = raw_features(history, f_t, grad, d_t, shifts)?;
    Ok(scale_raw(&raw, scaling, history.capacity(), horizon))
}

pub fn scale_raw(raw: &[f64; NUM_FEATURES], scaling: &FeatureScaling, window: usize, horizon: usize) -> StateVector {
    let mut s = [0.0; NUM_FEATURES];
    for f in Feature::ALL {
        let i = f.index();
        s[i] = match f {
            Feature::Encoding => raw[i],
            Feature::EvalCount => scale_feature(raw[i], window as f64, horizon as f64),
            _ => scale_feature(raw[i], scaling.ranges[i].min, scaling.ranges[i].max),
        };
    }
    StateVector(s)
}

/// Collects raw feature values over a reference run and turns them into a
/// [`FeatureScaling`].
#[derive(Debug, Clone)]
pub struct ScalingCalibrator {
    seen: [(f64, f64); NUM_FEATURES],
    f_lb: f64,
}

impl ScalingCalibrator {
    pub fn new(f_lb: f64) -> Self {
        Self {
            seen: [(f64::INFINITY, f64::NEG_INFINITY); NUM_FEATURES],
            f_lb,
        }
    }

    pub fn shifts(&self) -> (f64, f64) {
        (self.f_lb, 0.0)
    }

    pub fn record(&mut self, raw: &[f64; NUM_FEATURES]) {
        for (slot, &v) in self.seen.iter_mut().zip(raw) {
            if v.is_finite() {
                slot.0 = slot.0.min(v);
                slot.1 = slot.1.max(v);
            }
        }
    }

    /// Observed ranges widened by `widen` of their width on each side. A
    /// degenerate range `[v, v]` becomes `[v - w, v + w]` with
    /// `w = max(0.5 |v|, 1e-6)`.
    pub fn finish(&self, widen: f64, window: usize, horizon: usize) -> Result<FeatureScaling> {
        let mut ranges = [FeatureRange::new(-1.0, 1.0); NUM_FEATURES];
        for f in [
            Feature::LearningRate,
            Feature::ObjectiveValue,
            Feature::GradDotDir,
            Feature::Alignment,
        ] {
            let (lo, hi) = self.seen[f.index()];
            if !(lo.is_finite() && hi.is_finite()) {
                return Err(Error::Config(format!(
                    "no finite samples recorded for feature {}",
                    f.name()
                )));
            }
            let width = hi - lo;
            ranges[f.index()] = if width > 1e-12 * lo.abs().max(hi.abs()).max(1.0) {
                FeatureRange::new(lo - widen * width, hi + widen * width)
            } else {
                let w = (0.5 * lo.abs()).max(1e-6);
                FeatureRange::new(lo - w, hi + w)
            };
        }
        ranges[Feature::EvalCount.index()] = FeatureRange::new(window as f64, horizon.max(window + 1) as f64);
        ranges[Feature::ObjectiveValue.index()].shift = Some(self.f_lb);
        ranges[Feature::GradDotDir.index()].shift = Some(0.0);
        let scaling = FeatureScaling { ranges };
        scaling.validate()?;
        Ok(scaling)
    }
}
