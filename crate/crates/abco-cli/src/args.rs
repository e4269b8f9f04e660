//! Command-line flags. Every flag is optional at parse time so that a TOML
//! config file can supply it; flags win over the file, and the merged
//! result is what gets recorded in manifests.

use std::path::{Path, PathBuf};

use abco::envs::EnvId;
use abco::training::SamplingMode;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "abco", version, about = "Imitation from observation with ABCO")]
pub struct Cli {
    /// TOML file with [collect], [train], [eval] and [table] sections
    /// mirroring the flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write random-policy interactions or expert demonstrations.
    Collect(CollectArgs),
    /// Run the iterated IDM / policy loop.
    Train(TrainArgs),
    /// Evaluate a checkpoint: prints `aer=<f> performance=<f>`.
    Eval(EvalArgs),
    /// Assemble the results tables, running missing runs on request.
    Table(TableArgs),
}

fn parse_env(s: &str) -> Result<EnvId, String> {
    s.parse().map_err(|e: abco::Error| e.to_string())
}

fn parse_sampling(s: &str) -> Result<SamplingMode, String> {
    s.parse().map_err(|e: abco::Error| e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Labels {
    /// IDM-inferred actions.
    Idm,
    /// The expert's own actions (behavioral cloning).
    Expert,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Main,
    Ablation,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct CollectArgs {
    #[arg(value_parser = parse_env)]
    pub env: Option<EnvId>,
    /// Number of random-policy interactions.
    #[arg(long, conflicts_with = "expert")]
    pub pre: Option<usize>,
    /// Number of successful expert episodes (state-only).
    #[arg(long)]
    pub expert: Option<usize>,
    /// Keep expert actions, for the behavioral-cloning baseline.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub with_actions: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrainArgs {
    #[arg(long, value_parser = parse_env)]
    pub env: Option<EnvId>,
    #[arg(long)]
    pub alpha: Option<usize>,
    #[arg(long, value_enum)]
    pub attention: Option<Switch>,
    #[arg(long, value_parser = parse_sampling)]
    pub sampling: Option<SamplingMode>,
    #[arg(long, value_enum)]
    pub labels: Option<Labels>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Pre-demonstration JSONL file.
    #[arg(long)]
    pub pre: Option<PathBuf>,
    /// Demonstration JSONL file.
    #[arg(long)]
    pub demos: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub idm_epochs: Option<usize>,
    #[arg(long)]
    pub policy_epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Policy rollouts per iteration.
    #[arg(long)]
    pub rollouts: Option<usize>,
    #[arg(long)]
    pub eval_episodes: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct EvalArgs {
    /// Checkpoint file, or `expert:<env>` / `random:<env>` for the
    /// reference policies.
    #[arg(long)]
    pub checkpoint: Option<String>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON result path; defaults to `<checkpoint>.eval.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct TableArgs {
    #[arg(long, value_enum)]
    pub suite: Option<Suite>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory holding the runs; defaults to `<out>/runs`.
    #[arg(long)]
    pub runs: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Environments to run (all six by default); others stay blank.
    #[arg(long, value_delimiter = ',', value_parser = parse_env)]
    pub envs: Option<Vec<EnvId>>,
    /// Train any run that is missing instead of failing.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub run_missing: Option<bool>,
    #[arg(long)]
    pub alpha: Option<usize>,
    #[arg(long)]
    pub n_pre: Option<usize>,
    #[arg(long)]
    pub n_demos: Option<usize>,
    #[arg(long)]
    pub idm_epochs: Option<usize>,
    #[arg(long)]
    pub policy_epochs: Option<usize>,
    #[arg(long)]
    pub rollouts: Option<usize>,
    #[arg(long)]
    pub eval_episodes: Option<usize>,
}

/// Sections of the config file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub collect: CollectArgs,
    #[serde(default)]
    pub train: TrainArgs,
    #[serde(default)]
    pub eval: EvalArgs,
    #[serde(default)]
    pub table: TableArgs,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))
    }
}

/// Fills every unset field of `self` from `file`.
macro_rules! merge_impl {
    ($t:ty { $($f:ident),* $(,)? }) => {
        impl $t {
            pub fn merged(self, file: $t) -> $t {
                Self { $($f: self.$f.or(file.$f)),* }
            }
        }
    };
}

merge_impl!(CollectArgs { env, pre, expert, with_actions, seed, out });
merge_impl!(TrainArgs {
    env, alpha, attention, sampling, labels, seed, pre, demos, out, idm_epochs,
    policy_epochs, batch_size, learning_rate, rollouts, eval_episodes, hidden,
});
merge_impl!(EvalArgs { checkpoint, episodes, seed, out });
merge_impl!(TableArgs {
    suite, out, runs, seeds, envs, run_missing, alpha, n_pre, n_demos, idm_epochs,
    policy_epochs, rollouts, eval_episodes,
});

/// A required value that neither the flags nor the file provided.
pub fn required<T>(v: Option<T>, name: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::Usage(format!("missing required option --{name}")))
}
