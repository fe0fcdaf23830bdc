//! Config loading and subcommand dispatch for the `riarag` binary.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::Value;
use thiserror::Error;

use riarag_core::domain::ProjectCatalog;
use riarag_core::qe_env::replay_feedback_with_catalog;
use riarag_core::rl_core::gradcheck::{default_topologies, run_gradcheck};
use riarag_core::trainer::{
    dqn_csv, metrics_csv, metrics_from_events, ppo_csv, read_events, replay_into_kb,
    run_ablation_suite, train_to_dir, Event, JsonlSink, RunArtifacts, RunConfig, Trainer,
    TrainerError,
};

/// Finite-difference step and pass bound of the gradient check.
pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
const GRADCHECK_SEEDS: u64 = 10;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: cannot read {path}: {message}")]
    MissingConfig { path: PathBuf, message: String },
    #[error("config: {path}: parse error: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("config: unknown key `{0}`")]
    UnknownKey(String),
    #[error("config: malformed override `{0}`, expected key=value")]
    BadOverride(String),
    #[error("config: invalid `{key}`: {message}")]
    Validation { key: String, message: String },
    #[error("cli: {0}")]
    Usage(String),
    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Runtime(TrainerError),
    #[error("gradcheck: max relative error {0:e} exceeds {GRADCHECK_TOLERANCE:e}")]
    GradCheck(f64),
}

impl From<TrainerError> for CliError {
    fn from(e: TrainerError) -> Self {
        match e {
            TrainerError::Validation { key, message } => CliError::Validation { key, message },
            other => CliError::Runtime(other),
        }
    }
}

impl CliError {
    /// 1 for anything wrong with the inputs' configuration, 2 for failures
    /// while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::MissingConfig { .. }
            | CliError::Parse { .. }
            | CliError::UnknownKey(_)
            | CliError::BadOverride(_)
            | CliError::Validation { .. }
            | CliError::Usage(_) => 1,
            CliError::Io { .. } | CliError::Runtime(_) | CliError::GradCheck(_) => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Overlay `patch` onto `base`, recursing into objects.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

/// Set `key` (dotted path) to `raw`, read as JSON when it parses and as a
/// string otherwise. Every path segment must already exist.
pub fn apply_override(config: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::BadOverride(assignment.to_string()))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(CliError::BadOverride(assignment.to_string()));
    }
    let mut slot = &mut *config;
    for part in key.split('.') {
        slot = slot
            .as_object_mut()
            .and_then(|o| o.get_mut(part))
            .ok_or_else(|| CliError::UnknownKey(key.to_string()))?;
    }
    *slot = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok(())
}

/// Read a JSON config document (keys it omits keep their defaults), apply
/// the overrides in order and validate the result.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::MissingConfig {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut value = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
    merge(&mut value, doc);
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    let config: RunConfig = serde_json::from_value(value).map_err(|e| {
        let message = e.to_string();
        match message.strip_prefix("unknown field `") {
            Some(rest) => CliError::UnknownKey(rest.split('`').next().unwrap_or(rest).to_string()),
            None => CliError::Parse {
                path: path.to_path_buf(),
                message,
            },
        }
    })?;
    config.validate()?;
    Ok(config)
}

#[derive(Debug, Parser)]
#[command(
    name = "riarag",
    version,
    about = "Train and evaluate the RL test-generation loop"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct Common {
    /// JSON run config; omitted keys take their defaults.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (overrides `output_dir` in the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dotted-key override, e.g. `--set ppo.learning_rate=1e-4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the training loop and write events, CSVs and a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from this checkpoint, appending to the event log.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Full system and the four single-flag ablations over several seeds.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Number of seeds, starting at the config seed.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
    /// Greedy episodes from a checkpoint, with learning switched off.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
    },
    /// Feed a JSONL feedback file through the reward and KB-evolution path.
    Replay {
        #[command(flatten)]
        common: Common,
        /// Feedback records, one JSON object per line.
        #[arg(long)]
        input: PathBuf,
        /// Test catalog the feedback refers to.
        #[arg(long)]
        catalog: PathBuf,
        /// Start from this checkpoint's store instead of a freshly seeded one.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Re-derive the CSV files from an event log.
    Export {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
    },
    /// Finite-difference check of the network gradients.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Train { common, .. }
            | Command::Ablate { common, .. }
            | Command::Evaluate { common, .. }
            | Command::Replay { common, .. }
            | Command::Export { common, .. }
            | Command::Gradcheck { common } => common,
        }
    }
}

fn output_dir(common: &Common, config: &RunConfig) -> Result<PathBuf, CliError> {
    common
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .ok_or_else(|| CliError::Usage("no output directory: pass --out or set output_dir".into()))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(io_err(path))
}

fn to_json<T: serde::Serialize>(value: &T) -> Vec<u8> {
    serde_json::to_vec_pretty(value).expect("report types serialize")
}

/// Execute one invocation. Returns the text to print on success.
pub fn run(cli: Cli) -> Result<String, CliError> {
    let common = cli.command.common();
    let config = load_config(&common.config, &common.overrides)?;
    match &cli.command {
        Command::Train { common, resume } => {
            let dir = output_dir(common, &config)?;
            let mut trainer = match resume {
                Some(path) => {
                    let mut t = Trainer::restore(path)?;
                    t.continue_with(&config)?;
                    t
                }
                None => Trainer::new(config.clone())?,
            };
            let paths = train_to_dir(&mut trainer, &dir, resume.is_some())?;
            let last = trainer.state.metrics.last();
            Ok(format!(
                "trained {} episodes; final reward {:.4}, defect detection {:.4}\nmetrics: {}\ncheckpoint: {}",
                trainer.state.episode,
                last.map_or(0.0, |m| m.r_total),
                last.map_or(0.0, |m| m.defect_detection_rate),
                paths.metrics.display(),
                paths.checkpoint.display()
            ))
        }
        Command::Ablate { common, seeds } => {
            if *seeds == 0 {
                return Err(CliError::Usage("--seeds must be at least 1".into()));
            }
            let dir = output_dir(common, &config)?;
            std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            let seed_list: Vec<u64> = (0..*seeds).map(|i| config.seed + i).collect();
            let table = run_ablation_suite(&config, &seed_list)?;
            let text = table.render();
            write(&dir.join("ablation.json"), to_json(&table))?;
            write(&dir.join("ablation.txt"), &text)?;
            Ok(text)
        }
        Command::Evaluate {
            common,
            checkpoint,
            episodes,
        } => {
            let dir = output_dir(common, &config)?;
            std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            let mut trainer = Trainer::restore(checkpoint)?;
            let events = dir.join("eval_events.jsonl");
            if events.exists() {
                std::fs::remove_file(&events).map_err(io_err(&events))?;
            }
            let mut sink = JsonlSink::append(&events)?;
            let metrics = trainer.evaluate(*episodes, &mut sink)?;
            write(&dir.join("eval_metrics.csv"), metrics_csv(&metrics)?)?;
            let n = metrics.len().max(1) as f64;
            Ok(format!(
                "evaluated {} greedy episodes; mean reward {:.4}, defect detection {:.4}",
                metrics.len(),
                metrics.iter().map(|m| m.r_total).sum::<f64>() / n,
                metrics.iter().map(|m| m.defect_detection_rate).sum::<f64>() / n
            ))
        }
        Command::Replay {
            common,
            input,
            catalog,
            checkpoint,
        } => {
            let dir = output_dir(common, &config)?;
            std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            let text = std::fs::read_to_string(catalog).map_err(io_err(catalog))?;
            let catalog: ProjectCatalog =
                serde_json::from_str(&text).map_err(|e| CliError::Parse {
                    path: catalog.clone(),
                    message: e.to_string(),
                })?;
            let mut kb = match checkpoint {
                Some(path) => Trainer::restore(path)?.state.kb,
                None => Trainer::new(config.clone())?.state.kb,
            };
            let records = replay_feedback_with_catalog(input, catalog.clone())
                .map_err(|e| CliError::Runtime(TrainerError::from(e)))?;
            let report = replay_into_kb(&mut kb, records, &catalog, &config)?;
            write(&dir.join("replay_report.json"), to_json(&report))?;
            write(&dir.join("kb_snapshot.json"), to_json(&kb.snapshot()))?;
            Ok(format!(
                "replayed {} records; {} edge updates, {} tests ingested, mean reward {:.4}",
                report.records,
                report.edges_touched,
                report.tests_ingested,
                report.mean_reward.total
            ))
        }
        Command::Export { common, input } => {
            let dir = output_dir(common, &config)?;
            std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            let events = read_events(input)?;
            let metrics = metrics_from_events(&events);
            let ppo: Vec<_> = events
                .iter()
                .filter_map(|e| match e {
                    Event::PpoUpdate(r) => Some(*r),
                    _ => None,
                })
                .collect();
            let dqn: Vec<_> = events
                .iter()
                .filter_map(|e| match e {
                    Event::KbAction(r) => Some(*r),
                    _ => None,
                })
                .collect();
            let paths = RunArtifacts::in_dir(&dir);
            write(&paths.metrics, metrics_csv(&metrics)?)?;
            write(&paths.ppo, ppo_csv(&ppo)?)?;
            write(&paths.dqn, dqn_csv(&dqn)?)?;
            Ok(format!(
                "exported {} episodes to {}",
                metrics.len(),
                dir.display()
            ))
        }
        Command::Gradcheck { common } => {
            let report = run_gradcheck(&default_topologies(), GRADCHECK_SEEDS, GRADCHECK_STEP);
            let max = report.max_relative_error();
            if let Some(dir) = common.out.clone().or_else(|| config.output_dir.clone()) {
                std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
                write(&dir.join("gradcheck.json"), to_json(&report))?;
            }
            if !(max < GRADCHECK_TOLERANCE) {
                return Err(CliError::GradCheck(max));
            }
            Ok(format!(
                "gradcheck: {} cases, max relative error {max:.3e} (< {GRADCHECK_TOLERANCE:e})",
                report.cases.len()
            ))
        }
    }
}
