//! The experiment suite: dataset generation, feature calibration, training,
//! optimizer comparisons, q-value traces, feature ablation and the reward
//! comparison. Every command writes CSV files plus a gnuplot script into the
//! configured output directory and is a pure function of the config.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::descent::{fixed_gd, linesearch_gd, linesearch_gd_observed, qgd_run, OptRunTrace, QgdOptions};
use crate::dqn::{Action, ActionSet, DqnModel};
use crate::error::{Error, Result};
use crate::features::{Feature, FeatureScaling, ScalingCalibrator};
use crate::nn::ParamVector;
use crate::objective::ObjectiveFn;
use crate::rewards::{self, RewardKind, RewardSpec};
use crate::stats;
use crate::trainer::{self, TrainLogRow, Trainer, TrainerCheckpoint};

/// Objective, shared start point and feature scaling for one run seed.
pub struct SeedContext {
    pub seed: u64,
    pub obj: ObjectiveFn,
    pub x1: ParamVector,
    pub scaling: FeatureScaling,
}

pub fn seed_context(cfg: &RunConfig, seed: u64) -> Result<SeedContext> {
    let obj = cfg.objective.build(seed)?;
    let x1 = obj.initial_point(cfg.objective.init_seed.wrapping_add(seed));
    let scaling = match &cfg.scaling {
        Some(s) => s.clone(),
        None => calibrate_scaling(cfg, &obj, &x1)?,
    };
    Ok(SeedContext { seed, obj, x1, scaling })
}

/// Records feature ranges along one Armijo run and widens them.
pub fn calibrate_scaling(cfg: &RunConfig, obj: &ObjectiveFn, x1: &ParamVector) -> Result<FeatureScaling> {
    let t = &cfg.train_v1;
    let mut cal = ScalingCalibrator::new(obj.f_lb());
    let shifts = cal.shifts();
    linesearch_gd_observed(obj, &cfg.linesearch.armijo(), x1, t.horizon, t.window, |env| {
        if env.t() >= 2 {
            cal.record(&env.raw_features(shifts)?);
        }
        Ok(())
    })?;
    cal.finish(cfg.experiment.calibration_widen, t.window, t.horizon)
}

/// Scaling used to train `set`. The calibration run never leaves
/// `alpha_c * 2^-k`, so with learning-rate bounds the range of that feature
/// is stretched to cover them; otherwise the agent could not see how close
/// it is to a bound.
pub fn scaling_for(cfg: &RunConfig, set: ActionSet, base: &FeatureScaling) -> FeatureScaling {
    let mut s = base.clone();
    if let Some((lo, hi)) = cfg.train_config(set).alpha_bounds.filter(|_| set == ActionSet::V2) {
        let r = &mut s.ranges[Feature::LearningRate.index()];
        r.min = r.min.min(lo);
        r.max = r.max.max(hi);
    }
    s
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    let dir = cfg.experiment.out_dir.as_path();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(dir)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn finish<W: Write>(path: &Path, mut w: W) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w).map_err(|e| Error::io(path, e))?;
    finish(path, w)
}

pub fn model_path(dir: &Path, set: ActionSet, seed: u64) -> PathBuf {
    dir.join(format!("model_{}_seed{seed}.qgdm", set.label()))
}

pub fn train_log_path(dir: &Path, set: ActionSet, seed: u64) -> PathBuf {
    dir.join(format!("train_log_{}_seed{seed}.csv", set.label()))
}

pub fn episodes_path(dir: &Path, set: ActionSet, seed: u64) -> PathBuf {
    dir.join(format!("episodes_{}_seed{seed}.csv", set.label()))
}

pub fn checkpoint_path(dir: &Path, set: ActionSet, seed: u64) -> PathBuf {
    dir.join(format!("checkpoint_{}_seed{seed}.json", set.label()))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

// ---------------------------------------------------------------- gen-data

#[derive(Debug, Clone, Serialize)]
pub struct DatasetInfo {
    pub seed: u64,
    pub path: PathBuf,
    pub checksum: String,
}

pub fn gen_data(cfg: &RunConfig) -> Result<Vec<DatasetInfo>> {
    let dir = out_dir(cfg)?;
    cfg.experiment
        .seeds
        .iter()
        .map(|&seed| {
            let data = cfg.objective.dataset(seed)?;
            let path = dir.join(format!("dataset_seed{seed}.csv"));
            data.save(&path)?;
            Ok(DatasetInfo {
                seed,
                path,
                checksum: data.checksum(),
            })
        })
        .collect()
}

// --------------------------------------------------------------- calibrate

/// Calibrates the feature scaling for each seed; writes the scaling block and
/// a copy of the config with the block filled in.
pub fn calibrate(cfg: &RunConfig) -> Result<Vec<(u64, FeatureScaling)>> {
    let dir = out_dir(cfg)?;
    cfg.experiment
        .seeds
        .iter()
        .map(|&seed| {
            let obj = cfg.objective.build(seed)?;
            let x1 = obj.initial_point(cfg.objective.init_seed.wrapping_add(seed));
            let scaling = calibrate_scaling(cfg, &obj, &x1)?;
            let mut calibrated = cfg.clone().with_seed(seed);
            calibrated.scaling = Some(scaling.clone());
            write_file(&dir.join(format!("calibrated_seed{seed}.toml")), calibrated.to_toml())?;
            Ok((seed, scaling))
        })
        .collect()
}

// ------------------------------------------------------------------- train

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub seed: u64,
    pub model: DqnModel,
    pub log: Vec<TrainLogRow>,
    pub model_path: PathBuf,
}

/// Trains one model per seed; writes the model, the training log and the
/// per-episode objective traces. With `resume`, training continues from the
/// checkpoint in the output directory when one exists.
pub fn train(cfg: &RunConfig, set: ActionSet, resume: bool) -> Result<Vec<TrainOutcome>> {
    let dir = out_dir(cfg)?.to_path_buf();
    cfg.experiment
        .seeds
        .par_iter()
        .map(|&seed| {
            let ctx = seed_context(cfg, seed)?;
            train_seed(cfg, &ctx, set, &dir, resume)
        })
        .collect()
}

fn train_seed(cfg: &RunConfig, ctx: &SeedContext, set: ActionSet, dir: &Path, resume: bool) -> Result<TrainOutcome> {
    let mut tcfg = cfg.train_config(set).clone();
    tcfg.seed = tcfg.seed.wrapping_add(ctx.seed);
    let ck_path = checkpoint_path(dir, set, ctx.seed);
    let ep_path = episodes_path(dir, set, ctx.seed);

    let mut trainer = if resume && ck_path.exists() {
        Trainer::resume(&ctx.obj, ctx.x1.clone(), TrainerCheckpoint::load(&ck_path)?)?
    } else {
        Trainer::new(
            &ctx.obj,
            ctx.x1.clone(),
            tcfg.clone(),
            scaling_for(cfg, set, &ctx.scaling),
        )?
    };

    // Episode traces are appended when resuming, so drop rows past the checkpoint.
    let mut episodes = if trainer.next_episode() > 0 && ep_path.exists() {
        let text = fs::read_to_string(&ep_path).map_err(|e| Error::io(&ep_path, e))?;
        let keep = trainer.next_episode() as u64;
        let mut w = create(&ep_path)?;
        for line in text.lines() {
            let id = line.split(',').next().and_then(|s| s.parse::<u64>().ok());
            if id.is_none_or(|id| id < keep) {
                writeln!(w, "{line}").map_err(|e| Error::io(&ep_path, e))?;
            }
        }
        w
    } else {
        let mut w = create(&ep_path)?;
        writeln!(w, "episode_id,step,f_value,action,reward").map_err(|e| Error::io(&ep_path, e))?;
        w
    };

    let every = tcfg.checkpoint_every.filter(|&k| k > 0);
    trainer.train_with(|tr, record| {
        for (exp, f) in record.experiences.iter().zip(&record.objective_trace) {
            writeln!(
                episodes,
                "{},{},{:?},{},{:?}",
                record.episode_id, exp.step, f, exp.action, exp.reward
            )
            .map_err(|e| Error::io(&ep_path, e))?;
        }
        if let Some(k) = every {
            if tr.next_episode() % k == 0 {
                finish(&ep_path, &mut episodes)?;
                tr.checkpoint().save(&ck_path)?;
            }
        }
        Ok(())
    })?;
    finish(&ep_path, episodes)?;

    let log = trainer.log().to_vec();
    let model = trainer.into_model();
    let mpath = model_path(dir, set, ctx.seed);
    model.save(&mpath)?;
    write_with(&train_log_path(dir, set, ctx.seed), |w| {
        trainer::write_train_log(w, &log)
    })?;
    Ok(TrainOutcome {
        seed: ctx.seed,
        model,
        log,
        model_path: mpath,
    })
}

/// The trained model for `seed`, loaded from the output directory or trained
/// now if it is missing.
pub fn ensure_model(cfg: &RunConfig, ctx: &SeedContext, set: ActionSet) -> Result<DqnModel> {
    let dir = out_dir(cfg)?.to_path_buf();
    let path = model_path(&dir, set, ctx.seed);
    if path.exists() {
        let model = DqnModel::load(&path)?;
        if model.action_set != set {
            return Err(Error::Capability(format!(
                "{} is not a {} model",
                path.display(),
                set.label()
            )));
        }
        return Ok(model);
    }
    Ok(train_seed(cfg, ctx, set, &dir, false)?.model)
}

// ----------------------------------------------------------------- compare

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizerSummary {
    pub seed: u64,
    pub optimizer: String,
    pub initial_f: f64,
    pub final_f: f64,
    pub halving_frequency: f64,
    pub halves: usize,
    pub doubles: usize,
    pub accepts: usize,
    pub evaluations: usize,
    pub diverged: bool,
    pub stalled: bool,
    pub alpha_min: f64,
    pub alpha_max: f64,
}

impl OptimizerSummary {
    pub fn from_trace(seed: u64, trace: &OptRunTrace) -> Self {
        let alphas = trace.steps.iter().map(|s| s.alpha);
        Self {
            seed,
            optimizer: trace.optimizer.clone(),
            initial_f: trace.initial_f().unwrap_or(f64::NAN),
            final_f: trace.final_f,
            halving_frequency: trace.halving_frequency(),
            halves: trace.count(Action::Half),
            doubles: trace.count(Action::Double),
            accepts: trace.count(Action::Accept),
            evaluations: trace.evaluations,
            diverged: trace.diverged,
            stalled: trace.stalled,
            alpha_min: alphas.clone().fold(f64::INFINITY, f64::min),
            alpha_max: alphas.fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub horizon: usize,
    pub rows: Vec<OptimizerSummary>,
    pub model_hashes: Vec<ModelHash>,
}

/// `(seed, variant, sha256 before, sha256 after)` of a model file used by a run.
pub type ModelHash = (u64, String, String, String);

impl ComparisonReport {
    pub fn optimizers(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for r in &self.rows {
            if !names.contains(&r.optimizer) {
                names.push(r.optimizer.clone());
            }
        }
        names
    }

    fn of<'a>(&'a self, optimizer: &'a str) -> impl Iterator<Item = &'a OptimizerSummary> + 'a {
        self.rows.iter().filter(move |r| r.optimizer == optimizer)
    }

    pub fn median_final(&self, optimizer: &str) -> f64 {
        stats::median(&self.of(optimizer).map(|r| r.final_f).collect::<Vec<_>>())
    }

    /// Halves over all steps, pooled across seeds.
    pub fn pooled_halving_frequency(&self, optimizer: &str) -> f64 {
        let (h, n) = self
            .of(optimizer)
            .fold((0, 0), |(h, n), r| (h + r.halves, n + r.halves + r.doubles + r.accepts));
        if n == 0 {
            0.0
        } else {
            h as f64 / n as f64
        }
    }

    pub fn write_summary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "seed,optimizer,initial_f,final_f,halving_frequency,halves,doubles,accepts,evaluations,diverged,stalled,alpha_min,alpha_max"
        )?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{:?},{:?},{:?},{},{},{},{},{},{},{:?},{:?}",
                r.seed,
                r.optimizer,
                r.initial_f,
                r.final_f,
                r.halving_frequency,
                r.halves,
                r.doubles,
                r.accepts,
                r.evaluations,
                r.diverged,
                r.stalled,
                r.alpha_min,
                r.alpha_max
            )?;
        }
        Ok(())
    }

    pub fn write_medians<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "optimizer,median_final_f,pooled_halving_frequency")?;
        for name in self.optimizers() {
            writeln!(
                w,
                "{name},{:?},{:?}",
                self.median_final(&name),
                self.pooled_halving_frequency(&name)
            )?;
        }
        Ok(())
    }
}

fn run_all_optimizers(
    cfg: &RunConfig,
    obj: &ObjectiveFn,
    x1: &ParamVector,
    models: &[&DqnModel],
    horizon: usize,
) -> Result<Vec<OptRunTrace>> {
    let mut traces = Vec::new();
    for model in models {
        let window = cfg.train_config(model.action_set).window;
        traces.push(qgd_run(obj, model, x1, window, horizon, &QgdOptions::default())?);
    }
    traces.push(linesearch_gd(obj, &cfg.linesearch.armijo(), x1, horizon)?);
    traces.push(linesearch_gd(obj, &cfg.linesearch.nonmonotone(), x1, horizon)?);
    traces.push(fixed_gd(obj, cfg.linesearch.alpha_c, x1, horizon)?);
    Ok(traces)
}

/// Q-GD v1 and v2 against Armijo, nonmonotone and fixed-rate descent from the
/// same start point with the same evaluation budget.
pub fn compare(cfg: &RunConfig) -> Result<ComparisonReport> {
    comparison(cfg, false)
}

/// The comparison on a larger objective (more data, wider hidden layers,
/// longer budget) with the models trained on the original one.
pub fn generalize(cfg: &RunConfig) -> Result<ComparisonReport> {
    comparison(cfg, true)
}

fn comparison(cfg: &RunConfig, scaled: bool) -> Result<ComparisonReport> {
    let dir = out_dir(cfg)?.to_path_buf();
    let prefix = if scaled { "generalize" } else { "compare" };
    let g = cfg.experiment.generalize;
    let horizon = if scaled {
        cfg.train_v1.horizon * g.horizon_factor
    } else {
        cfg.train_v1.horizon
    };

    let per_seed: Vec<(Vec<OptimizerSummary>, Vec<ModelHash>)> = cfg
        .experiment
        .seeds
        .par_iter()
        .map(|&seed| {
            let ctx = seed_context(cfg, seed)?;
            let v1 = ensure_model(cfg, &ctx, ActionSet::V1)?;
            let v2 = ensure_model(cfg, &ctx, ActionSet::V2)?;
            let before = [sha256_hex(&v1.to_bytes()), sha256_hex(&v2.to_bytes())];

            let traces = if scaled {
                let spec = cfg.objective.scaled(&g);
                let obj = spec.build(seed)?;
                let x1 = obj.initial_point(spec.init_seed.wrapping_add(seed));
                run_all_optimizers(cfg, &obj, &x1, &[&v1, &v2], horizon)?
            } else {
                run_all_optimizers(cfg, &ctx.obj, &ctx.x1, &[&v1, &v2], horizon)?
            };

            let mut rows = Vec::new();
            for tr in &traces {
                let path = dir.join(format!("{prefix}_trace_{}_seed{seed}.csv", tr.optimizer));
                write_with(&path, |w| tr.write_csv(w))?;
                rows.push(OptimizerSummary::from_trace(seed, tr));
            }
            let hashes = [(ActionSet::V1, &v1, &before[0]), (ActionSet::V2, &v2, &before[1])]
                .into_iter()
                .map(|(set, m, b)| (seed, set.label().to_string(), b.clone(), sha256_hex(&m.to_bytes())))
                .collect();
            Ok((rows, hashes))
        })
        .collect::<Result<_>>()?;

    let mut report = ComparisonReport {
        horizon,
        rows: Vec::new(),
        model_hashes: Vec::new(),
    };
    for (rows, hashes) in per_seed {
        report.rows.extend(rows);
        report.model_hashes.extend(hashes);
    }
    write_with(&dir.join(format!("{prefix}_summary.csv")), |w| report.write_summary(w))?;
    write_with(&dir.join(format!("{prefix}_medians.csv")), |w| report.write_medians(w))?;
    write_file(
        &dir.join(format!("{prefix}.gp")),
        comparison_plot(prefix, &report.optimizers(), cfg.experiment.seeds[0]),
    )?;
    Ok(report)
}

fn comparison_plot(prefix: &str, optimizers: &[String], seed: u64) -> String {
    let mut s = format!(
        "set datafile separator ','\nset key autotitle columnhead\nset xlabel 'time step'\n\
         set terminal pngcairo size 1000,420\nset output '{prefix}.png'\nset multiplot layout 1,2\n\
         set ylabel 'objective'\nplot "
    );
    let series = |col: &str| {
        optimizers
            .iter()
            .map(|o| format!("'{prefix}_trace_{o}_seed{seed}.csv' using 1:{col} with lines title '{o}'"))
            .collect::<Vec<_>>()
            .join(", ")
    };
    s += &series("2");
    s += "\nset ylabel 'learning rate'\nset logscale y\nplot ";
    s += &series("3");
    s += "\nunset multiplot\n";
    s
}

// ------------------------------------------------------------------ qtrace

#[derive(Debug, Clone, Serialize)]
pub struct QTraceRow {
    pub t: usize,
    pub action: usize,
    pub q: f64,
    pub reward: f64,
    pub discounted_return: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct QTraceReport {
    pub seed: u64,
    pub rows: Vec<QTraceRow>,
    pub pearson: f64,
    pub path: PathBuf,
}

/// One greedy episode of the trained v1 model: predicted q-value of the
/// chosen action next to the realized discounted return.
pub fn qvalue_trace(cfg: &RunConfig) -> Result<Vec<QTraceReport>> {
    let dir = out_dir(cfg)?.to_path_buf();
    cfg.experiment
        .seeds
        .par_iter()
        .map(|&seed| {
            let ctx = seed_context(cfg, seed)?;
            let mut model = ensure_model(cfg, &ctx, ActionSet::V1)?;
            let tcfg = &cfg.train_v1;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let record = trainer::run_episode(&ctx.obj, &ctx.x1, tcfg, &mut model, None, 0, 0.0, &mut rng)?;
            let rewards = record.rewards();
            let returns = rewards::discounted_returns(&rewards, tcfg.gamma);
            let mut rows = Vec::with_capacity(rewards.len());
            for ((exp, r), ret) in record.experiences.iter().zip(&rewards).zip(&returns) {
                rows.push(QTraceRow {
                    t: exp.step,
                    action: exp.action,
                    q: model.q_values(&exp.state)?[exp.action],
                    reward: *r,
                    discounted_return: *ret,
                });
            }
            let q: Vec<f64> = rows.iter().map(|r| r.q).collect();
            let pearson = stats::pearson(&q, &returns);
            let path = dir.join(format!("qtrace_v1_seed{seed}.csv"));
            write_with(&path, |w| {
                writeln!(w, "t,action,q,reward,discounted_return")?;
                for r in &rows {
                    writeln!(
                        w,
                        "{},{},{:?},{:?},{:?}",
                        r.t, r.action, r.q, r.reward, r.discounted_return
                    )?;
                }
                Ok(())
            })?;
            write_file(
                &dir.join(format!("qtrace_v1_seed{seed}.gp")),
                format!(
                    "set datafile separator ','\nset key autotitle columnhead\nset xlabel 'time step'\n\
                     set terminal pngcairo size 700,420\nset output 'qtrace_v1_seed{seed}.png'\n\
                     plot 'qtrace_v1_seed{seed}.csv' using 1:3 with lines title 'predicted q', \
                     '' using 1:5 with lines title 'discounted return'\n"
                ),
            )?;
            Ok(QTraceReport {
                seed,
                rows,
                pearson,
                path,
            })
        })
        .collect()
}

// ---------------------------------------------------------------- ablation

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub seed: u64,
    /// `"none"` for the baseline.
    pub pinned: String,
    pub final_f: f64,
    pub halves: usize,
    pub accepts: usize,
    /// Every recorded state had the pinned feature at zero.
    pub pinned_zero: bool,
}

/// Q-GD v1 with each ablatable feature forced to zero, next to the baseline.
pub fn ablate(cfg: &RunConfig) -> Result<Vec<AblationRow>> {
    let dir = out_dir(cfg)?.to_path_buf();
    let per_seed: Vec<Vec<AblationRow>> = cfg
        .experiment
        .ablation_seeds
        .par_iter()
        .map(|&seed| {
            let ctx = seed_context(cfg, seed)?;
            let model = ensure_model(cfg, &ctx, ActionSet::V1)?;
            let t = &cfg.train_v1;
            let variants = std::iter::once(None).chain(Feature::ABLATABLE.into_iter().map(Some));
            variants
                .map(|pin| {
                    let opts = QgdOptions {
                        pinned: pin.into_iter().collect(),
                        record_states: true,
                    };
                    let tr = qgd_run(&ctx.obj, &model, &ctx.x1, t.window, t.horizon, &opts)?;
                    Ok(AblationRow {
                        seed,
                        pinned: pin.map_or("none", Feature::name).to_string(),
                        final_f: tr.final_f,
                        halves: tr.count(Action::Half),
                        accepts: tr.count(Action::Accept),
                        pinned_zero: pin.is_none_or(|f| tr.states.iter().all(|s| s.get(f) == 0.0)),
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let rows: Vec<AblationRow> = per_seed.into_iter().flatten().collect();
    write_with(&dir.join("ablation.csv"), |w| {
        writeln!(w, "seed,pinned,final_f,halves,accepts")?;
        for r in &rows {
            writeln!(w, "{},{},{:?},{},{}", r.seed, r.pinned, r.final_f, r.halves, r.accepts)?;
        }
        Ok(())
    })?;
    Ok(rows)
}

// ---------------------------------------------------------- reward-compare

#[derive(Debug, Clone, Serialize)]
pub struct RewardScatter {
    pub kind: RewardKind,
    /// `(f(x_T), R_max)` per training episode.
    pub points: Vec<(f64, f64)>,
    /// Rank correlation between `-f(x_T)` and `R_max`.
    pub spearman: f64,
    pub path: PathBuf,
}

/// Per-episode objective traces from a training episode file.
pub fn read_episode_traces(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut traces: Vec<Vec<f64>> = Vec::new();
    let mut last_id = None;
    for (i, line) in text.lines().enumerate().skip(1) {
        let mut cols = line.split(',');
        let parse_err = || Error::Parse {
            line: i + 1,
            msg: format!("malformed episode row `{line}`"),
        };
        let id: u64 = cols.next().and_then(|s| s.parse().ok()).ok_or_else(parse_err)?;
        let f: f64 = cols.nth(1).and_then(|s| s.parse().ok()).ok_or_else(parse_err)?;
        if last_id != Some(id) {
            traces.push(Vec::new());
            last_id = Some(id);
        }
        traces.last_mut().expect("pushed above").push(f);
    }
    Ok(traces)
}

/// `(f(x_T), R_max)` for every episode, with rewards computed along the
/// candidate objective trace.
pub fn reward_scatter(traces: &[Vec<f64>], spec: RewardSpec, gamma: f64) -> Result<Vec<(f64, f64)>> {
    traces
        .iter()
        .filter(|t| !t.is_empty())
        .map(|t| {
            let r = spec.rewards_along(t)?;
            Ok((*t.last().expect("non-empty"), rewards::episode_rmax(&r, gamma)))
        })
        .collect()
}

/// Scores the v1 training episodes under all three reward functions. Uses
/// the stored episode traces, training first if they are missing.
pub fn reward_compare(cfg: &RunConfig) -> Result<Vec<(u64, Vec<RewardScatter>)>> {
    let dir = out_dir(cfg)?.to_path_buf();
    cfg.experiment
        .seeds
        .iter()
        .map(|&seed| {
            let path = episodes_path(&dir, ActionSet::V1, seed);
            if !path.exists() {
                let ctx = seed_context(cfg, seed)?;
                train_seed(cfg, &ctx, ActionSet::V1, &dir, false)?;
            }
            let traces = read_episode_traces(&path)?;
            let t = &cfg.train_v1;
            let mut out = Vec::new();
            for kind in RewardKind::ALL {
                let spec = RewardSpec {
                    kind,
                    c: t.c1,
                    f_lb: 0.0,
                };
                let points = reward_scatter(&traces, spec, t.gamma)?;
                let neg_f: Vec<f64> = points.iter().map(|p| -p.0).collect();
                let rmax: Vec<f64> = points.iter().map(|p| p.1).collect();
                let spearman = stats::spearman(&neg_f, &rmax);
                let path = dir.join(format!("reward_{}_seed{seed}.csv", kind.short_name()));
                write_with(&path, |w| {
                    writeln!(w, "final_f,rmax")?;
                    for (f, r) in &points {
                        writeln!(w, "{f:?},{r:?}")?;
                    }
                    Ok(())
                })?;
                out.push(RewardScatter {
                    kind,
                    points,
                    spearman,
                    path,
                });
            }
            write_file(
                &dir.join(format!("reward_compare_seed{seed}.gp")),
                format!(
                    "set datafile separator ','\nset key autotitle columnhead\nset xlabel 'final objective'\n\
                     set ylabel 'R_max'\nset terminal pngcairo size 1200,400\n\
                     set output 'reward_compare_seed{seed}.png'\nset multiplot layout 1,3\n\
                     plot 'reward_r_id_seed{seed}.csv' using 1:2 with points title 'r_id'\n\
                     plot 'reward_r_sd_seed{seed}.csv' using 1:2 with points title 'r_sd'\n\
                     plot 'reward_r_oc_seed{seed}.csv' using 1:2 with points title 'r_oc'\n\
                     unset multiplot\n"
                ),
            )?;
            Ok((seed, out))
        })
        .collect()
}
