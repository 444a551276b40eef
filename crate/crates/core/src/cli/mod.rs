//! Command-line front end: `generate`, `evaluate`, `learner`, `gradcheck`
//! and `sweep`. Exit status 0 on success, 2 for usage or configuration
//! errors, 3 for numerical failures, 4 for I/O failures.

pub mod io;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diversity::objective;
use crate::error::{Error, Result};
use crate::eval::cross_play_values;
use crate::game::{build_gridworld, Cell, GridWorld};
use crate::harness::{
    corner_assignment, evaluate_robustness, is_corner_split, make_corner_expert, optimal_team_return,
    train_learner,
};
use crate::policy::Population;
use crate::trainer::{finite_diff_check, train_population_with, Method, TrainConfig};

use self::io::{
    write_cross_play, write_metrics, write_toml, Checkpoint, LearnerCheckpoint, RunConfig,
    CHECKPOINT_VERSION,
};

pub const CONFIG_ECHO: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CROSS_PLAY_FILE: &str = "cross_play.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.toml";
pub const SUMMARY_FILE: &str = "summary.toml";
pub const LEARNER_FILE: &str = "learner.toml";
pub const GRADCHECK_FILE: &str = "gradcheck.toml";

/// Fraction of the optimal self-play return a diagonal entry must reach.
pub const DIAGONAL_FRACTION: f64 = 0.95;
/// Maximum relative error accepted by `gradcheck`.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

const RETURN_NOTE: &str = "returns are discounted by `discount` per step over at most `horizon` \
steps; reaching a goal together pays 1 once and ends the episode";

#[derive(Debug, Parser)]
#[command(name = "brdiv", version, about = "Best-response diverse teammate generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    match s {
        "br-diversity" => Ok(Method::BrDiversity),
        "jsd-baseline" => Ok(Method::JsdBaseline),
        other => Err(format!("unknown method {other:?} (expected br-diversity or jsd-baseline)")),
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a teammate population.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_method)]
        method: Option<Method>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Recompute the cross-play matrix and corner assignments of a checkpoint.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a learner against a checkpointed population and score it on
    /// one scripted expert per goal cell.
    Learner {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients of the objective.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Run `generate` over a list of seeds and count corner splits.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long, value_parser = parse_method)]
        method: Option<Method>,
        /// Also train and score a learner for every seed.
        #[arg(long)]
        learner: bool,
    },
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Generate {
            config,
            out,
            method,
            seed,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(m) = method {
                cfg.train.method = m;
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            cfg.validate()?;
            let summary = generate(&cfg, &out)?;
            println!(
                "{}: objective {:.6}, corners [{}]{}",
                out.display(),
                summary.objective,
                summary.corner_assignment.join(", "),
                if summary.corner_split { " (split)" } else { "" }
            );
            Ok(())
        }
        Command::Evaluate {
            checkpoint,
            out,
            config,
        } => {
            let cfg = load_config(config.as_deref())?;
            let summary = evaluate(&cfg, &checkpoint, &out)?;
            println!("{}: corners [{}]", out.display(), summary.corner_assignment.join(", "));
            Ok(())
        }
        Command::Learner {
            checkpoint,
            out,
            config,
        } => {
            let cfg = load_config(config.as_deref())?;
            let summary = learner(&cfg, &checkpoint, &out)?;
            println!("{}: robustness {:.6}", out.display(), summary.robustness);
            Ok(())
        }
        Command::Gradcheck {
            config,
            out,
            trials,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(t) = trials {
                cfg.gradcheck.trials = t;
            }
            cfg.validate()?;
            let report = gradcheck(&cfg, &out)?;
            println!("{}: max relative error {:.3e}", out.display(), report.max_rel_error);
            if report.max_rel_error > GRADCHECK_TOLERANCE {
                return Err(Error::GradientCheck {
                    max_rel_error: report.max_rel_error,
                    tolerance: GRADCHECK_TOLERANCE,
                });
            }
            Ok(())
        }
        Command::Sweep {
            config,
            out,
            seeds,
            method,
            learner,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seeds {
                cfg.sweep.seeds = s;
            }
            if let Some(m) = method {
                cfg.train.method = m;
            }
            cfg.sweep.learner |= learner;
            cfg.validate()?;
            let summary = sweep(&cfg, &out)?;
            println!(
                "{}: corner splits {}/{}",
                out.display(),
                summary.corner_split_count,
                summary.runs
            );
            Ok(())
        }
    }
}

pub fn corner_label(c: Option<Cell>) -> String {
    match c {
        Some((r, col)) => format!("{r},{col}"),
        None => "none".to_string(),
    }
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::BrDiversity => "br-diversity",
        Method::JsdBaseline => "jsd-baseline",
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub method: String,
    pub seed: u64,
    pub k: usize,
    pub iterations: usize,
    pub horizon: usize,
    pub discount: f64,
    pub return_note: String,
    pub trace: f64,
    pub diversity: f64,
    pub objective: f64,
    pub optimal_self_play_return: f64,
    pub corner_assignment: Vec<String>,
    pub corner_split: bool,
    pub diagonal_ok: bool,
}

fn diagonal_ok(values: &[Vec<f64>], optimum: f64) -> bool {
    (0..values.len()).all(|i| values[i][i] >= DIAGONAL_FRACTION * optimum)
}

/// Trains a population and writes the full artifact set into `out`.
pub fn generate(cfg: &RunConfig, out: &Path) -> Result<GenerateSummary> {
    write_toml(&out.join(CONFIG_ECHO), cfg)?;
    let train = &cfg.train;
    let result = train_population_with(train, |iteration, pop| {
        write_toml(
            &out.join("checkpoints").join(format!("iter_{iteration:06}.toml")),
            &Checkpoint::new(train, pop),
        )
    })?;
    let world = train.build_world()?;
    write_metrics(&out.join(METRICS_FILE), &result.metrics)?;
    write_cross_play(&out.join(CROSS_PLAY_FILE), &result.cross_play.values)?;
    write_toml(&out.join(CHECKPOINT_FILE), &Checkpoint::new(train, &result.population))?;

    let assignment = corner_assignment(&world, &result.population)?;
    let optimum = optimal_team_return(&world);
    let last = result.metrics.last().expect("final metric record");
    let summary = GenerateSummary {
        method: method_name(train.method).into(),
        seed: train.seed,
        k: train.k,
        iterations: train.iterations,
        horizon: train.horizon,
        discount: train.discount,
        return_note: RETURN_NOTE.into(),
        trace: last.trace,
        diversity: last.diversity,
        objective: last.objective,
        optimal_self_play_return: optimum,
        corner_split: is_corner_split(&world, &assignment),
        diagonal_ok: diagonal_ok(&result.cross_play.values, optimum),
        corner_assignment: assignment.into_iter().map(corner_label).collect(),
    };
    write_toml(&out.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

fn checkpoint_world(ckpt: &Checkpoint) -> Result<(GridWorld, Population)> {
    let world = build_gridworld(&ckpt.env, ckpt.horizon, ckpt.discount)?;
    let pop = ckpt.to_population()?;
    pop.check_shape(&world)?;
    Ok((world, pop))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluateSummary {
    pub horizon: usize,
    pub discount: f64,
    pub return_note: String,
    pub trace: f64,
    pub det_diversity: f64,
    pub objective: f64,
    pub corner_assignment: Vec<String>,
    pub corner_split: bool,
    pub diagonal_ok: bool,
}

pub fn evaluate(cfg: &RunConfig, checkpoint: &Path, out: &Path) -> Result<EvaluateSummary> {
    write_toml(&out.join(CONFIG_ECHO), cfg)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let (world, pop) = checkpoint_world(&ckpt)?;
    let values = cross_play_values(&world, &pop)?;
    write_cross_play(&out.join(CROSS_PLAY_FILE), &values)?;
    let o = objective(&values, &cfg.train.kernel.resolved(&values))?;
    let assignment = corner_assignment(&world, &pop)?;
    let summary = EvaluateSummary {
        horizon: ckpt.horizon,
        discount: ckpt.discount,
        return_note: RETURN_NOTE.into(),
        trace: o.trace_term,
        det_diversity: o.det_term,
        objective: o.total,
        corner_split: is_corner_split(&world, &assignment),
        diagonal_ok: diagonal_ok(&values, optimal_team_return(&world)),
        corner_assignment: assignment.into_iter().map(corner_label).collect(),
    };
    write_toml(&out.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerSummary {
    pub horizon: usize,
    pub discount: f64,
    pub return_note: String,
    pub held_out: Vec<String>,
    pub returns: Vec<f64>,
    pub robustness: f64,
    pub population_corner_assignment: Vec<String>,
}

fn learner_for(train: &TrainConfig, world: &GridWorld, pop: &Population) -> Result<(LearnerSummary, LearnerCheckpoint)> {
    let learner = train_learner(world, &pop.teammates, train)?;
    let corners = world.spec().goal_cells.clone();
    let experts = corners
        .iter()
        .map(|&c| make_corner_expert(world, c))
        .collect::<Result<Vec<_>>>()?;
    let mut report = evaluate_robustness(world, &learner, &experts)?;
    report.corner_assignment = corner_assignment(world, pop)?;
    let summary = LearnerSummary {
        horizon: world.horizon(),
        discount: world.discount(),
        return_note: RETURN_NOTE.into(),
        held_out: corners.into_iter().map(|c| corner_label(Some(c))).collect(),
        returns: report.returns,
        robustness: report.robustness,
        population_corner_assignment: report.corner_assignment.into_iter().map(corner_label).collect(),
    };
    let ckpt = LearnerCheckpoint {
        version: CHECKPOINT_VERSION,
        env: world.spec().clone(),
        horizon: world.horizon(),
        discount: world.discount(),
        learner_logits: learner.to_rows(),
    };
    Ok((summary, ckpt))
}

pub fn learner(cfg: &RunConfig, checkpoint: &Path, out: &Path) -> Result<LearnerSummary> {
    write_toml(&out.join(CONFIG_ECHO), cfg)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let (world, pop) = checkpoint_world(&ckpt)?;
    let (summary, learner_ckpt) = learner_for(&cfg.train, &world, &pop)?;
    write_toml(&out.join(LEARNER_FILE), &learner_ckpt)?;
    write_toml(&out.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

pub fn gradcheck(cfg: &RunConfig, out: &Path) -> Result<crate::trainer::GradCheckReport> {
    write_toml(&out.join(CONFIG_ECHO), cfg)?;
    let report = finite_diff_check(&cfg.train, cfg.gradcheck.trials)?;
    write_toml(&out.join(GRADCHECK_FILE), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub corner_assignment: Vec<String>,
    pub corner_split: bool,
    pub diagonal_ok: bool,
    pub objective: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learner_robustness: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub method: String,
    pub runs: usize,
    /// Runs whose teammates cover every goal cell with all diagonal entries
    /// at least 95% of the optimal self-play return.
    pub corner_split_count: usize,
    pub horizon: usize,
    pub discount: f64,
    pub return_note: String,
    pub seeds: Vec<SeedOutcome>,
}

pub fn sweep(cfg: &RunConfig, out: &Path) -> Result<SweepSummary> {
    write_toml(&out.join(CONFIG_ECHO), cfg)?;
    let outcomes: Vec<SeedOutcome> = cfg
        .sweep
        .seeds
        .par_iter()
        .map(|&seed| -> Result<SeedOutcome> {
            let mut run = cfg.clone();
            run.train.seed = seed;
            let dir = out.join(format!("seed_{seed}"));
            let g = generate(&run, &dir)?;
            let learner_robustness = if cfg.sweep.learner {
                Some(learner(&run, &dir.join(CHECKPOINT_FILE), &dir.join("learner"))?.robustness)
            } else {
                None
            };
            Ok(SeedOutcome {
                seed,
                corner_assignment: g.corner_assignment,
                corner_split: g.corner_split,
                diagonal_ok: g.diagonal_ok,
                objective: g.objective,
                learner_robustness,
            })
        })
        .collect::<Result<_>>()?;
    let summary = SweepSummary {
        method: method_name(cfg.train.method).into(),
        runs: outcomes.len(),
        corner_split_count: outcomes.iter().filter(|o| o.corner_split && o.diagonal_ok).count(),
        horizon: cfg.train.horizon,
        discount: cfg.train.discount,
        return_note: RETURN_NOTE.into(),
        seeds: outcomes,
    };
    write_toml(&out.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}
