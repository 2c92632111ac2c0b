//! Command-line driver: train policies, evaluate checkpoints, and sweep
//! scenario axes, writing JSON-lines logs, CSV tables, and checkpoints.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use dtvec::baselines::{
    centralized_observation, ra_action, run_baseline, split_joint_action, BaselineMode,
    BaselineOutcome, BaselinePolicy, FIXED_WEIGHTS,
};
use dtvec::config::{RunConfig, SweepAxis};
use dtvec::environment::{Environment, RawJointAction, WeightVector};
use dtvec::mamo::{evaluate_policy, greedy_joint_action, train, ActorPolicies, IterationRecord};
use dtvec::neural::{load_checkpoint, save_checkpoint, Mlp};
use dtvec::par::maybe_par_map;
use dtvec::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    Mamo,
    Random,
    Centralized,
    MultiagentFixed,
}

#[derive(Parser)]
#[command(name = "dtvec", about = "Digital-twin vehicular edge simulator and trainer")]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Disables data-parallel maps.
    #[arg(long, global = true)]
    single_thread: bool,
    /// Output directory for logs, tables, and checkpoints.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Trains the selected policy and writes log, history table, and
    /// checkpoint.
    Train {
        #[arg(long, value_enum, default_value = "mamo")]
        mode: Mode,
    },
    /// Evaluates a trained checkpoint (or the random policy) greedily.
    Eval {
        #[arg(long, value_enum, default_value = "mamo")]
        mode: Mode,
    },
    /// Trains and evaluates along one scenario axis, writing sweep.csv.
    Sweep {
        #[arg(long, value_enum)]
        sweep: Axis,
        #[arg(long, value_enum, default_value = "mamo")]
        mode: Mode,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Axis {
    Bandwidth,
    RequiredInfo,
}

impl From<Axis> for SweepAxis {
    fn from(a: Axis) -> Self {
        match a {
            Axis::Bandwidth => SweepAxis::Bandwidth,
            Axis::RequiredInfo => SweepAxis::RequiredInfo,
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.training.seed = seed;
        config.scenario.seed = seed;
    }
    Ok(config)
}

fn write_history_csv(path: &Path, history: &[IterationRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for record in history {
        writer.serialize(record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Trained policy in a mode-independent wrapper.
enum TrainedPolicy {
    Random,
    Actors(ActorPolicies),
    Centralized(Mlp),
}

impl TrainedPolicy {
    fn save(&self, path: &Path) -> Result<()> {
        let mut nets = BTreeMap::new();
        match self {
            TrainedPolicy::Random => return Ok(()),
            TrainedPolicy::Actors(actors) => {
                nets.insert("vehicle_policy".to_string(), actors.vehicle.clone());
                nets.insert("edge_policy".to_string(), actors.edge.clone());
            }
            TrainedPolicy::Centralized(policy) => {
                nets.insert("policy".to_string(), policy.clone());
            }
        }
        save_checkpoint(path, &nets)
    }

    fn load(mode: Mode, path: &Path) -> Result<Self> {
        match mode {
            Mode::Random => Ok(TrainedPolicy::Random),
            Mode::Centralized => {
                let mut nets = load_checkpoint(path)?;
                let policy = nets
                    .remove("policy")
                    .ok_or_else(|| Error::MissingArtifact("policy net in checkpoint".into()))?;
                Ok(TrainedPolicy::Centralized(policy))
            }
            Mode::Mamo | Mode::MultiagentFixed => {
                let mut nets = load_checkpoint(path)?;
                let vehicle = nets
                    .remove("vehicle_policy")
                    .ok_or_else(|| Error::MissingArtifact("vehicle policy in checkpoint".into()))?;
                let edge = nets
                    .remove("edge_policy")
                    .ok_or_else(|| Error::MissingArtifact("edge policy in checkpoint".into()))?;
                Ok(TrainedPolicy::Actors(ActorPolicies { vehicle, edge }))
            }
        }
    }

    fn act(&self, env: &Environment, rng: &mut ChaCha8Rng) -> RawJointAction {
        match self {
            TrainedPolicy::Random => ra_action(env, rng),
            TrainedPolicy::Actors(actors) => greedy_joint_action(actors, env),
            TrainedPolicy::Centralized(policy) => {
                let flat = policy
                    .infer_one(&centralized_observation(env))
                    .expect("observation length fixed");
                split_joint_action(env, &flat)
            }
        }
    }
}

fn train_mode(mode: Mode, config: &RunConfig, out: &Path) -> Result<Vec<IterationRecord>> {
    std::fs::create_dir_all(out)?;
    let mut env = config.build_environment()?;
    let log_file = File::create(out.join("log.jsonl"))?;
    let mut log = BufWriter::new(log_file);
    let (history, policy) = match mode {
        Mode::Mamo => {
            let outcome = train(&mut env, &config.training, Some(&mut log))?;
            (outcome.history, TrainedPolicy::Actors(outcome.actors))
        }
        _ => {
            let BaselineOutcome { history, policy } =
                run_baseline(baseline_of(mode), &mut env, &config.training, Some(&mut log))?;
            let policy = match policy {
                BaselinePolicy::Random => TrainedPolicy::Random,
                BaselinePolicy::Centralized(p) => TrainedPolicy::Centralized(p),
                BaselinePolicy::Multiagent(a) => TrainedPolicy::Actors(a),
            };
            (history, policy)
        }
    };
    log.flush()?;
    write_history_csv(&out.join("history.csv"), &history)?;
    policy.save(&out.join("checkpoint.bin"))?;
    Ok(history)
}

fn baseline_of(mode: Mode) -> BaselineMode {
    match mode {
        Mode::Random => BaselineMode::Random,
        Mode::Centralized => BaselineMode::CentralizedFixed,
        Mode::MultiagentFixed => BaselineMode::MultiagentFixed,
        Mode::Mamo => unreachable!("mamo is not a baseline"),
    }
}

fn eval_weights(mode: Mode, config: &RunConfig) -> WeightVector {
    match mode {
        Mode::Mamo => config.eval_weights(),
        _ => FIXED_WEIGHTS,
    }
}

fn eval_mode(mode: Mode, config: &RunConfig, out: &Path) -> Result<()> {
    let mut env = config.build_environment()?;
    let policy = TrainedPolicy::load(mode, &out.join("checkpoint.bin"))?;
    let summary = evaluate_policy(
        &mut env,
        &mut |env, rng| policy.act(env, rng),
        config.run.eval_episodes,
        eval_weights(mode, config),
        config.training.seed,
    )?;
    let mut writer = csv::Writer::from_path(out.join("eval.csv"))?;
    writer.write_record([
        "episodes",
        "mean_scalarized_return",
        "mean_qpuc",
        "qpuc_stderr",
        "avg_sensing_cost",
        "avg_transmission_cost",
    ])?;
    writer.write_record([
        summary.episodes.to_string(),
        summary.mean_scalarized_return.to_string(),
        summary.mean_qpuc.to_string(),
        summary.qpuc_stderr.to_string(),
        summary.aux.avg_sensing_cost.to_string(),
        summary.aux.avg_transmission_cost.to_string(),
    ])?;
    writer.flush()?;
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

#[derive(Serialize)]
struct SweepRow {
    value: f64,
    mean_scalarized_return: f64,
    mean_qpuc: f64,
    qpuc_stderr: f64,
    avg_sensing_cost: f64,
    avg_transmission_cost: f64,
}

fn sweep_mode(axis: SweepAxis, mode: Mode, config: &RunConfig, out: &Path, parallel: bool) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let points = axis.values();
    let rows: Vec<Result<SweepRow>> = maybe_par_map(points, parallel, |value| {
        let point_config = axis.apply(config, value);
        let mut env = point_config.build_environment()?;
        let (history, policy) = match mode {
            Mode::Mamo => {
                let outcome = train(&mut env, &point_config.training, None)?;
                (outcome.history, TrainedPolicy::Actors(outcome.actors))
            }
            _ => {
                let outcome =
                    run_baseline(baseline_of(mode), &mut env, &point_config.training, None)?;
                let policy = match outcome.policy {
                    BaselinePolicy::Random => TrainedPolicy::Random,
                    BaselinePolicy::Centralized(p) => TrainedPolicy::Centralized(p),
                    BaselinePolicy::Multiagent(a) => TrainedPolicy::Actors(a),
                };
                (outcome.history, policy)
            }
        };
        let _ = history;
        let summary = evaluate_policy(
            &mut env,
            &mut |env, rng| policy.act(env, rng),
            point_config.run.eval_episodes,
            eval_weights(mode, &point_config),
            point_config.training.seed,
        )?;
        Ok(SweepRow {
            value,
            mean_scalarized_return: summary.mean_scalarized_return,
            mean_qpuc: summary.mean_qpuc,
            qpuc_stderr: summary.qpuc_stderr,
            avg_sensing_cost: summary.aux.avg_sensing_cost,
            avg_transmission_cost: summary.aux.avg_transmission_cost,
        })
    });
    let mut writer = csv::Writer::from_path(out.join("sweep.csv"))?;
    for row in rows {
        writer.serialize(row?)?;
    }
    writer.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli)?;
    match cli.command {
        Command::Train { mode } => {
            let history = train_mode(mode, &config, &cli.out)?;
            if let Some(last) = history.last() {
                println!("{}", serde_json::to_string(last)?);
            }
            Ok(())
        }
        Command::Eval { mode } => eval_mode(mode, &config, &cli.out),
        Command::Sweep { sweep, mode } => {
            sweep_mode(sweep.into(), mode, &config, &cli.out, !cli.single_thread)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
