use std::path::PathBuf;

use clap::{Parser, Subcommand};
use mbrkit_core::provider::ProviderSpec;
use mbrkit_core::{Rule, TieBreak};

use crate::config::{AnalysisKind, Format, MetricKind};

#[derive(Debug, Parser)]
#[command(name = "mbrkit", version, about = "Decision-rule decoding over candidate lists")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CommandArgs,
}

#[derive(Debug, Subcommand)]
pub enum CommandArgs {
    /// Select one candidate per segment with a decision rule.
    Decode(Flags),
    /// Score a decode output against references.
    Eval(Flags),
    /// Paired bootstrap between two decode outputs.
    Significance(Flags),
    /// Source-count ablation, quasi-source quality or average QE curves.
    Analyze(Flags),
    /// Call counts and wall time per rule.
    Bench(Flags),
}

impl CommandArgs {
    pub fn flags(&self) -> &Flags {
        match self {
            Self::Decode(f) | Self::Eval(f) | Self::Significance(f) | Self::Analyze(f) | Self::Bench(f) => f,
        }
    }
}

fn parse_tie_break(s: &str) -> Result<TieBreak, String> {
    match s {
        "lowest_index" => Ok(TieBreak::LowestIndex),
        "highest_logprob" => Ok(TieBreak::HighestLogprob),
        _ => Err(format!("unknown tie-break `{s}` (expected lowest_index or highest_logprob)")),
    }
}

/// Flags shared by every subcommand. Unset flags fall back to the config
/// file, then to built-in defaults.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Flags {
    /// Segments JSONL (decode, analyze, bench) or decode output (eval, significance).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// TOML config file; keys mirror the long flags with underscores.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub rule: Option<Rule>,
    /// mock:lexical | mock:qe | mock:bleu | cmd:"<command line>" | tcp:host:port
    #[arg(long)]
    pub provider: Option<ProviderSpec>,
    /// Joint QE provider for --filter-m (defaults to --provider).
    #[arg(long)]
    pub qe_provider: Option<ProviderSpec>,
    /// Factorable provider for source-quality similarity.
    #[arg(long)]
    pub embed_provider: Option<ProviderSpec>,
    /// sMBR support size, original source included.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub filter_m: Option<usize>,
    #[arg(long)]
    pub weighted: bool,
    #[arg(long, value_parser = parse_tie_break)]
    pub tie_break: Option<TieBreak>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Include the full score vector in decode records.
    #[arg(long)]
    pub emit_scores: bool,
    /// Ignore unknown fields in segment files.
    #[arg(long)]
    pub lenient: bool,
    /// Segments JSONL whose references are used by eval and significance.
    #[arg(long)]
    pub refs: Option<PathBuf>,
    /// Second decode output for significance.
    #[arg(long)]
    pub compare: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub metric: Option<MetricKind>,
    #[arg(long)]
    pub resamples: Option<usize>,
    #[arg(long, value_enum)]
    pub analysis: Option<AnalysisKind>,
    #[arg(long, value_delimiter = ',')]
    pub k_values: Option<Vec<usize>>,
    /// Rules to benchmark, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub rules: Option<Vec<Rule>>,
    #[arg(long)]
    pub repetitions: Option<usize>,
    /// Synthetic per-item scorer latency for bench.
    #[arg(long)]
    pub latency_us: Option<u64>,
    /// Also time bench runs on the worker pool.
    #[arg(long)]
    pub parallel: bool,
    #[arg(long)]
    pub scorer_timeout_s: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Scorer connections per remote provider.
    #[arg(long)]
    pub connections: Option<usize>,
}
