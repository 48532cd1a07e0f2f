//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::descent::LineSearchConfig;
use crate::dqn::{ActionSet, DqnOptimizerConfig};
use crate::error::{Error, Result};
use crate::features::FeatureScaling;
use crate::nn::{Architecture, OutputHead};
use crate::objective::{generate_dataset, Dataset, ObjectiveFn};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSpec {
    /// Classifier layer sizes; first entry is the input dimension, last the class count.
    pub layer_sizes: Vec<usize>,
    pub samples: usize,
    pub spread: f64,
    /// Dataset seed for run seed 0; run seed `s` uses `data_seed + s`.
    pub data_seed: u64,
    /// Seed of the shared starting point for run seed 0.
    pub init_seed: u64,
    /// Load this dataset instead of generating one (relative to the config file).
    #[serde(default)]
    pub dataset_file: Option<PathBuf>,
}

impl ObjectiveSpec {
    pub fn dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn classes(&self) -> usize {
        *self.layer_sizes.last().unwrap_or(&0)
    }

    pub fn architecture(&self) -> Result<Architecture> {
        Architecture::new(self.layer_sizes.clone(), OutputHead::SoftmaxXent)
    }

    pub fn dataset(&self, seed: u64) -> Result<Dataset> {
        match &self.dataset_file {
            Some(p) => Dataset::load(p),
            None => generate_dataset(
                self.data_seed.wrapping_add(seed),
                self.samples,
                self.dim(),
                self.classes(),
                self.spread,
            ),
        }
    }

    pub fn build(&self, seed: u64) -> Result<ObjectiveFn> {
        ObjectiveFn::new(self.architecture()?, self.dataset(seed)?)
    }

    /// The larger test objective: `data_factor` times the samples and
    /// `width_factor` times every hidden width.
    pub fn scaled(&self, g: &GeneralizeSpec) -> Self {
        let n = self.layer_sizes.len();
        let layer_sizes = self
            .layer_sizes
            .iter()
            .enumerate()
            .map(|(i, &w)| if i == 0 || i == n - 1 { w } else { w * g.width_factor })
            .collect();
        Self {
            layer_sizes,
            samples: self.samples * g.data_factor,
            dataset_file: None,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSearchSpec {
    pub c: f64,
    pub armijo_memory: usize,
    pub nonmonotone_memory: usize,
    /// Initial learning rate of every line search and of the fixed-rate baseline.
    pub alpha_c: f64,
}

impl LineSearchSpec {
    pub fn armijo(&self) -> LineSearchConfig {
        LineSearchConfig {
            c: self.c,
            memory: self.armijo_memory,
            alpha_c: self.alpha_c,
        }
    }

    pub fn nonmonotone(&self) -> LineSearchConfig {
        LineSearchConfig {
            c: self.c,
            memory: self.nonmonotone_memory,
            alpha_c: self.alpha_c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneralizeSpec {
    pub data_factor: usize,
    pub width_factor: usize,
    pub horizon_factor: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Run seeds used by the multi-seed commands.
    pub seeds: Vec<u64>,
    /// Run seeds used by the ablation table.
    pub ablation_seeds: Vec<u64>,
    /// Relative widening of calibrated feature ranges.
    pub calibration_widen: f64,
    pub generalize: GeneralizeSpec,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub objective: ObjectiveSpec,
    pub train_v1: TrainConfig,
    pub train_v2: TrainConfig,
    pub linesearch: LineSearchSpec,
    pub experiment: ExperimentSpec,
    /// Fixed feature scaling; calibrated per run seed when absent.
    #[serde(default)]
    pub scaling: Option<FeatureScaling>,
}

impl RunConfig {
    /// Small profile that runs the whole experiment suite in minutes.
    pub fn desk() -> Self {
        Self {
            objective: ObjectiveSpec {
                layer_sizes: vec![8, 8, 4, 3],
                samples: 200,
                spread: 0.3,
                data_seed: 0,
                init_seed: 0,
                dataset_file: None,
            },
            train_v1: TrainConfig::desk_v1(),
            train_v2: TrainConfig::desk_v2(),
            linesearch: LineSearchSpec {
                c: 1e-4,
                armijo_memory: 1,
                nonmonotone_memory: 3,
                alpha_c: 4.0,
            },
            experiment: ExperimentSpec {
                seeds: vec![0, 1, 2, 3, 4],
                ablation_seeds: vec![0, 1, 2],
                calibration_widen: 0.1,
                generalize: GeneralizeSpec {
                    data_factor: 3,
                    width_factor: 2,
                    horizon_factor: 2,
                },
                out_dir: PathBuf::from("out"),
            },
            scaling: None,
        }
    }

    /// Full-size profile: 65-16-8-42 classifier, 5000 samples, T = 1000.
    pub fn paper() -> Self {
        let mut cfg = Self::desk();
        cfg.objective.layer_sizes = vec![65, 16, 8, 42];
        cfg.objective.samples = 5000;
        for t in [&mut cfg.train_v1, &mut cfg.train_v2] {
            t.horizon = 1000;
        }
        cfg.train_v1.episodes = 150_000;
        cfg.train_v1.alpha_c = 4.0;
        cfg.train_v2.episodes = 400_000;
        cfg.train_v2.alpha_c = 2.0;
        cfg.train_v2.alpha_bounds = Some((0.01, 8.0));
        cfg.train_v2.optimizer = DqnOptimizerConfig::rmsprop(0.001);
        cfg.linesearch.alpha_c = 4.0;
        cfg
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config; a relative `dataset_file` is resolved against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(p) = &cfg.objective.dataset_file {
            if p.is_relative() {
                cfg.objective.dataset_file = Some(base.join(p));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }

    pub fn train_config(&self, set: ActionSet) -> &TrainConfig {
        match set {
            ActionSet::V1 => &self.train_v1,
            ActionSet::V2 => &self.train_v2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let o = &self.objective;
        o.architecture()?;
        if o.classes() < 2 || o.samples < o.classes() {
            return Err(Error::Config(format!(
                "need samples >= classes >= 2, got {} samples, {} classes",
                o.samples,
                o.classes()
            )));
        }
        if !(o.spread > 0.0) {
            return Err(Error::Config("cluster spread must be positive".into()));
        }
        if let Some(p) = &o.dataset_file {
            if !p.exists() {
                return Err(Error::Config(format!("dataset file {} does not exist", p.display())));
            }
        }
        for (set, t) in [(ActionSet::V1, &self.train_v1), (ActionSet::V2, &self.train_v2)] {
            if t.variant != set {
                return Err(Error::Config(format!("train_{} must use variant {set:?}", set.label())));
            }
            t.validate()?;
        }
        let ls = &self.linesearch;
        if ls.armijo_memory < 1 || ls.nonmonotone_memory < 1 || !(ls.c >= 0.0) || !(ls.alpha_c > 0.0) {
            return Err(Error::Config(format!("invalid line search settings {ls:?}")));
        }
        let e = &self.experiment;
        if e.seeds.is_empty() {
            return Err(Error::Config("experiment.seeds must not be empty".into()));
        }
        let g = &e.generalize;
        if g.data_factor < 1 || g.width_factor < 1 || g.horizon_factor < 1 {
            return Err(Error::Config("generalization factors must be at least 1".into()));
        }
        if !(e.calibration_widen >= 0.0) {
            return Err(Error::Config("calibration_widen must be non-negative".into()));
        }
        if let Some(s) = &self.scaling {
            s.validate()?;
        }
        Ok(())
    }

    /// Replaces the seed list by a single seed (the `--seed` flag).
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.experiment.seeds = vec![seed];
        self.experiment.ablation_seeds = vec![seed];
        self
    }

    pub fn with_out_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.experiment.out_dir = dir.into();
        self
    }
}
