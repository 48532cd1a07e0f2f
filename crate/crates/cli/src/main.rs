//! `qgd` — runs the Q-gradient-descent experiment suite from a TOML config.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qgd_core::config::RunConfig;
use qgd_core::dqn::ActionSet;
use qgd_core::harness;
use qgd_core::Error;

#[derive(Parser)]
#[command(
    name = "qgd",
    version,
    about = "Learning-rate control for gradient descent with a deep Q-network"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Run only this seed instead of the config's seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `experiment.out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Variant {
    V1,
    V2,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset(s).
    GenData(Common),
    /// Calibrate feature scaling on an Armijo reference run.
    Calibrate(Common),
    /// Train the DQN.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "v1")]
        variant: Variant,
        /// Continue from the checkpoint in the output directory, if any.
        #[arg(long)]
        resume: bool,
    },
    /// Compare Q-GD v1/v2 with the line-search and fixed-rate baselines.
    Compare(Common),
    /// Repeat the comparison on a larger objective with the trained models.
    Generalize(Common),
    /// Predicted q-values vs realized returns along one greedy episode.
    Qtrace(Common),
    /// Final objective with single state features forced to zero.
    Ablate(Common),
    /// Score training episodes under the three reward functions.
    RewardCompare(Common),
}

fn load(c: &Common) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::load(&c.config)?;
    if let Some(seed) = c.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = &c.out {
        cfg = cfg.with_out_dir(out);
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::GenData(c) => {
            for d in harness::gen_data(&load(&c)?)? {
                println!("seed {}: {} sha256={}", d.seed, d.path.display(), d.checksum);
            }
        }
        Command::Calibrate(c) => {
            let cfg = load(&c)?;
            for (seed, s) in harness::calibrate(&cfg)? {
                println!("seed {seed}:");
                for (f, r) in qgd_core::features::Feature::ALL.iter().zip(&s.ranges) {
                    println!("  {:<16} [{:.6e}, {:.6e}]", f.name(), r.min, r.max);
                }
            }
        }
        Command::Train {
            common,
            variant,
            resume,
        } => {
            let set = match variant {
                Variant::V1 => ActionSet::V1,
                Variant::V2 => ActionSet::V2,
            };
            for o in harness::train(&load(&common)?, set, resume)? {
                let last = o.log.last();
                println!(
                    "seed {}: {} episodes, last final_f={:.6}, model {}",
                    o.seed,
                    o.log.len(),
                    last.map_or(f64::NAN, |r| r.final_f),
                    o.model_path.display()
                );
            }
        }
        Command::Compare(c) => print_comparison(&harness::compare(&load(&c)?)?),
        Command::Generalize(c) => print_comparison(&harness::generalize(&load(&c)?)?),
        Command::Qtrace(c) => {
            for r in harness::qvalue_trace(&load(&c)?)? {
                println!(
                    "seed {}: {} steps, pearson(q, R) = {:.4}, {}",
                    r.seed,
                    r.rows.len(),
                    r.pearson,
                    r.path.display()
                );
            }
        }
        Command::Ablate(c) => {
            println!(
                "{:>6} {:<16} {:>12} {:>6} {:>7}",
                "seed", "pinned", "final_f", "half", "accept"
            );
            for r in harness::ablate(&load(&c)?)? {
                println!(
                    "{:>6} {:<16} {:>12.6} {:>6} {:>7}",
                    r.seed, r.pinned, r.final_f, r.halves, r.accepts
                );
            }
        }
        Command::RewardCompare(c) => {
            for (seed, scatters) in harness::reward_compare(&load(&c)?)? {
                for s in scatters {
                    println!(
                        "seed {seed}: {} spearman(-f_T, R_max) = {:.4}",
                        s.kind.short_name(),
                        s.spearman
                    );
                }
            }
        }
    }
    Ok(())
}

fn print_comparison(report: &harness::ComparisonReport) {
    println!("budget T = {}", report.horizon);
    println!("{:<12} {:>14} {:>10}", "optimizer", "median final", "halving");
    for name in report.optimizers() {
        println!(
            "{:<12} {:>14.6} {:>9.1}%",
            name,
            report.median_final(&name),
            100.0 * report.pooled_halving_frequency(&name)
        );
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numeric() {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
