//! Effective run configuration: flags over config file over defaults.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use mbrkit_core::bridge::BridgeOptions;
use mbrkit_core::decision::RuleConfig;
use mbrkit_core::metrics::{CorpusBleu, CorpusMetric, MeanSentenceBleu};
use mbrkit_core::provider::{MockKind, ProviderSpec};
use mbrkit_core::significance::{DEFAULT_RESAMPLES, DEFAULT_SEED};
use mbrkit_core::{Rule, SchemaMode, TieBreak};
use serde::{Deserialize, Serialize};

use crate::args::Flags;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Decode,
    Eval,
    Significance,
    Analyze,
    Bench,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Jsonl,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum MetricKind {
    #[default]
    CorpusBleu,
    MeanSentenceBleu,
}

impl MetricKind {
    pub fn metric(self) -> Box<dyn CorpusMetric> {
        match self {
            Self::CorpusBleu => Box::new(CorpusBleu::default()),
            Self::MeanSentenceBleu => Box::new(MeanSentenceBleu::default()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum AnalysisKind {
    #[default]
    Ablation,
    Quality,
    AvgQe,
}

/// Config file contents. Every key is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub input: Option<PathBuf>,
    pub rule: Option<Rule>,
    pub provider: Option<ProviderSpec>,
    pub qe_provider: Option<ProviderSpec>,
    pub embed_provider: Option<ProviderSpec>,
    pub k: Option<usize>,
    pub filter_m: Option<usize>,
    pub weighted: Option<bool>,
    pub tie_break: Option<TieBreak>,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub format: Option<Format>,
    pub threads: Option<usize>,
    pub emit_scores: Option<bool>,
    pub lenient: Option<bool>,
    pub refs: Option<PathBuf>,
    pub compare: Option<PathBuf>,
    pub metric: Option<MetricKind>,
    pub resamples: Option<usize>,
    pub analysis: Option<AnalysisKind>,
    pub k_values: Option<Vec<usize>>,
    pub rules: Option<Vec<Rule>>,
    pub repetitions: Option<usize>,
    pub latency_us: Option<u64>,
    pub parallel: Option<bool>,
    pub scorer_timeout_s: Option<f64>,
    pub batch_size: Option<usize>,
    pub connections: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("config {}", path.display()))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub input: PathBuf,
    pub rule: Rule,
    pub provider: ProviderSpec,
    pub qe_provider: Option<ProviderSpec>,
    pub embed_provider: ProviderSpec,
    pub k: Option<usize>,
    pub filter_m: Option<usize>,
    pub weighted: bool,
    pub tie_break: TieBreak,
    pub seed: u64,
    /// Omitted from the output header.
    #[serde(skip_serializing)]
    pub output: Option<PathBuf>,
    pub format: Format,
    /// `None` uses every logical core.
    pub threads: Option<usize>,
    pub emit_scores: bool,
    pub lenient: bool,
    pub refs: Option<PathBuf>,
    pub compare: Option<PathBuf>,
    pub metric: MetricKind,
    pub resamples: usize,
    pub analysis: AnalysisKind,
    pub k_values: Option<Vec<usize>>,
    pub rules: Option<Vec<Rule>>,
    pub repetitions: usize,
    pub latency_us: u64,
    pub parallel: bool,
    pub scorer_timeout_s: f64,
    pub batch_size: usize,
    pub connections: usize,
}

impl RunConfig {
    pub fn resolve(command: Command, flags: &Flags) -> Result<Self> {
        let file = match &flags.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let bridge = BridgeOptions::default();
        let input = flags
            .input
            .clone()
            .or(file.input)
            .context("--input is required (flag or `input` in the config file)")?;
        let cfg = Self {
            command,
            input,
            rule: flags.rule.or(file.rule).unwrap_or(Rule::Smbr),
            provider: flags
                .provider
                .clone()
                .or(file.provider)
                .unwrap_or(ProviderSpec::Mock(MockKind::Qe)),
            qe_provider: flags.qe_provider.clone().or(file.qe_provider),
            embed_provider: flags
                .embed_provider
                .clone()
                .or(file.embed_provider)
                .unwrap_or(ProviderSpec::Mock(MockKind::Lexical)),
            k: flags.k.or(file.k),
            filter_m: flags.filter_m.or(file.filter_m),
            weighted: flags.weighted || file.weighted.unwrap_or(false),
            tie_break: flags.tie_break.or(file.tie_break).unwrap_or_default(),
            seed: flags.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
            output: flags.output.clone().or(file.output),
            format: flags.format.or(file.format).unwrap_or_default(),
            threads: flags.threads.or(file.threads),
            emit_scores: flags.emit_scores || file.emit_scores.unwrap_or(false),
            lenient: flags.lenient || file.lenient.unwrap_or(false),
            refs: flags.refs.clone().or(file.refs),
            compare: flags.compare.clone().or(file.compare),
            metric: flags.metric.or(file.metric).unwrap_or_default(),
            resamples: flags.resamples.or(file.resamples).unwrap_or(DEFAULT_RESAMPLES),
            analysis: flags.analysis.or(file.analysis).unwrap_or_default(),
            k_values: flags.k_values.clone().or(file.k_values),
            rules: flags.rules.clone().or(file.rules),
            repetitions: flags.repetitions.or(file.repetitions).unwrap_or(5),
            latency_us: flags.latency_us.or(file.latency_us).unwrap_or(0),
            parallel: flags.parallel || file.parallel.unwrap_or(false),
            scorer_timeout_s: flags
                .scorer_timeout_s
                .or(file.scorer_timeout_s)
                .unwrap_or(bridge.timeout.as_secs_f64()),
            batch_size: flags.batch_size.or(file.batch_size).unwrap_or(bridge.batch_size),
            connections: flags.connections.or(file.connections).unwrap_or(1),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.k == Some(0) {
            bail!("--k must be at least 1 (the original source)");
        }
        if self.filter_m == Some(0) {
            bail!("--filter-m must be positive");
        }
        if self.threads == Some(0) {
            bail!("--threads must be positive");
        }
        if self.batch_size == 0 || self.connections == 0 {
            bail!("--batch-size and --connections must be positive");
        }
        if !(self.scorer_timeout_s.is_finite() && self.scorer_timeout_s > 0.0) {
            bail!("--scorer-timeout-s must be a positive number of seconds");
        }
        Ok(())
    }

    pub fn rule_config(&self, rule: Rule) -> RuleConfig {
        RuleConfig {
            rule,
            weighted: self.weighted,
            k: self.k,
            filter_m: self.filter_m,
            tie_break: self.tie_break,
        }
    }

    pub fn schema(&self) -> SchemaMode {
        if self.lenient {
            SchemaMode::Lenient
        } else {
            SchemaMode::Strict
        }
    }

    pub fn bridge_options(&self) -> BridgeOptions {
        BridgeOptions {
            timeout: Duration::from_secs_f64(self.scorer_timeout_s),
            batch_size: self.batch_size,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(input: Option<&str>) -> Flags {
        Flags {
            input: input.map(PathBuf::from),
            ..Flags::default()
        }
    }

    #[test]
    fn defaults() {
        let cfg = RunConfig::resolve(Command::Decode, &flags(Some("in.jsonl"))).unwrap();
        assert_eq!(cfg.rule, Rule::Smbr);
        assert_eq!(cfg.provider, ProviderSpec::Mock(MockKind::Qe));
        assert_eq!(cfg.seed, DEFAULT_SEED);
        assert_eq!(cfg.format, Format::Jsonl);
        assert!(!cfg.weighted && cfg.k.is_none());
    }

    #[test]
    fn flags_override_file() {
        let dir = std::env::temp_dir().join(format!("mbrkit-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("c.toml");
        std::fs::write(&path, "input = \"a.jsonl\"\nrule = \"map\"\nseed = 5\nweighted = true\nprovider = \"mock:bleu\"\n").unwrap();
        let mut f = flags(None);
        f.config = Some(path.clone());
        let from_file = RunConfig::resolve(Command::Decode, &f).unwrap();
        assert_eq!((from_file.rule, from_file.seed, from_file.weighted), (Rule::Map, 5, true));
        assert_eq!(from_file.input, PathBuf::from("a.jsonl"));

        f.rule = Some(Rule::QeRerank);
        f.seed = Some(9);
        f.input = Some("b.jsonl".into());
        let cfg = RunConfig::resolve(Command::Decode, &f).unwrap();
        assert_eq!((cfg.rule, cfg.seed), (Rule::QeRerank, 9));
        assert_eq!(cfg.input, PathBuf::from("b.jsonl"));
        assert_eq!(cfg.provider, ProviderSpec::Mock(MockKind::Bleu));
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::resolve(Command::Decode, &flags(None)).is_err());
        for edit in [
            (|f: &mut Flags| f.k = Some(0)) as fn(&mut Flags),
            |f| f.threads = Some(0),
            |f| f.filter_m = Some(0),
            |f| f.scorer_timeout_s = Some(-1.0),
        ] {
            let mut f = flags(Some("x"));
            edit(&mut f);
            assert!(RunConfig::resolve(Command::Decode, &f).is_err());
        }
    }
}
