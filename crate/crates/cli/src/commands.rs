use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use mbrkit_core::analysis::{avg_qe_to_original, source_count_ablation, source_quality_set};
use mbrkit_core::bench::{reports_to_text, run_bench, BenchOptions, BenchReport, LatencyModel, LatencyProvider};
use mbrkit_core::corpus::{support_view, SupportKind};
use mbrkit_core::decision::decide_segment;
use mbrkit_core::metrics::{corpus_bleu, tokenize, BleuScore, Smoothing, TokenizeMode, DEFAULT_MAX_N};
use mbrkit_core::significance::{paired_bootstrap, BootstrapConfig, SignificanceReport};
use mbrkit_core::utility::{require_shape, Shape};
use mbrkit_core::{load_segments, DecisionResult, Rule, SegmentSet, UtilityProvider};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{AnalysisKind, Command, Format, MetricKind, RunConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeRecord {
    pub id: String,
    pub rule: Rule,
    pub selected_index: usize,
    pub selected_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
    pub tied_indices: Vec<usize>,
}

#[derive(Serialize)]
struct Header<'a> {
    tool: &'static str,
    version: &'static str,
    #[serde(flatten)]
    config: &'a RunConfig,
}

struct Output {
    format: Format,
    out: Box<dyn Write>,
}

impl Output {
    fn open(cfg: &RunConfig) -> Result<Self> {
        let out: Box<dyn Write> = match &cfg.output {
            Some(p) => Box::new(BufWriter::new(
                File::create(p).with_context(|| format!("creating output {}", p.display()))?,
            )),
            None => Box::new(BufWriter::new(std::io::stdout().lock())),
        };
        let mut o = Self { format: cfg.format, out };
        o.header(cfg)?;
        Ok(o)
    }

    fn header(&mut self, cfg: &RunConfig) -> Result<()> {
        let value = serde_json::to_value(Header {
            tool: "mbrkit",
            version: env!("CARGO_PKG_VERSION"),
            config: cfg,
        })?;
        match self.format {
            Format::Jsonl => writeln!(self.out, "{}", serde_json::json!({ "header": value }))?,
            Format::Text => writeln!(self.out, "# {value}")?,
        }
        Ok(())
    }

    fn json<T: Serialize>(&mut self, value: &T) -> Result<()> {
        serde_json::to_writer(&mut self.out, value)?;
        writeln!(self.out)?;
        Ok(())
    }

    fn text(&mut self, text: &str) -> Result<()> {
        self.out.write_all(text.as_bytes())?;
        if !text.ends_with('\n') {
            writeln!(self.out)?;
        }
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        self.out.flush().context("writing output")
    }
}

pub fn run(cfg: &RunConfig) -> Result<()> {
    match cfg.command {
        Command::Decode => decode(cfg),
        Command::Eval => eval(cfg),
        Command::Significance => significance(cfg),
        Command::Analyze => analyze(cfg),
        Command::Bench => bench(cfg),
    }
}

fn load(cfg: &RunConfig) -> Result<SegmentSet> {
    load_segments(&cfg.input, cfg.schema()).with_context(|| format!("{}", cfg.input.display()))
}

fn provider(cfg: &RunConfig, spec: &mbrkit_core::provider::ProviderSpec) -> Result<Arc<dyn UtilityProvider>> {
    spec.build(cfg.bridge_options(), cfg.connections)
        .with_context(|| format!("provider {spec}"))
}

/// Rejects rule/provider combinations up front, before any segment is scored.
fn check_shapes(rule: Rule, cfg: &RunConfig, utility: &dyn UtilityProvider, qe: Option<&dyn UtilityProvider>) -> Result<()> {
    let hint = |shape: Shape| match shape {
        Shape::Factorable => "try --provider mock:lexical",
        Shape::Joint => "try --provider mock:qe",
    };
    let need = match rule {
        Rule::MbrFast => Some(Shape::Factorable),
        Rule::QeRerank | Rule::Smbr => Some(Shape::Joint),
        Rule::Map | Rule::MbrNaive => None,
    };
    if let Some(shape) = need {
        require_shape(utility, rule.as_str(), shape).map_err(|e| anyhow!("{e} ({})", hint(shape)))?;
    }
    if cfg.filter_m.is_some() && matches!(rule, Rule::MbrNaive | Rule::MbrFast) {
        require_shape(qe.unwrap_or(utility), "QE filtering", Shape::Joint)
            .map_err(|e| anyhow!("{e} (--filter-m needs a joint --qe-provider)"))?;
    }
    Ok(())
}

fn decode(cfg: &RunConfig) -> Result<()> {
    let set = load(cfg)?;
    let rc = cfg.rule_config(cfg.rule);
    let utility: Arc<dyn UtilityProvider> = match cfg.rule {
        // MAP reads logprobs only
        Rule::Map => Arc::new(mbrkit_core::utility::ConstantUtility::new(0.0)),
        _ => provider(cfg, &cfg.provider)?,
    };
    let qe = cfg.qe_provider.as_ref().map(|p| provider(cfg, p)).transpose()?;
    check_shapes(cfg.rule, cfg, &*utility, qe.as_deref())?;

    // decide everything first; a failing run writes nothing
    let results: Vec<Result<DecisionResult>> = set
        .segments()
        .par_iter()
        .map(|seg| {
            decide_segment(seg, &rc, &*utility, qe.as_deref()).with_context(|| format!("segment `{}`", seg.id))
        })
        .collect();

    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let mut out = Output::open(cfg)?;
    for (seg, r) in set.iter().zip(results) {
        let rec = DecodeRecord {
            id: seg.id.clone(),
            rule: r.rule,
            selected_index: r.selected_index,
            selected_text: seg.candidates[r.selected_index].text.clone(),
            scores: cfg.emit_scores.then_some(r.scores),
            tied_indices: r.tied_indices,
        };
        match out.format {
            Format::Jsonl => out.json(&rec)?,
            Format::Text => out.text(&format!("{}\t{}\t{}", rec.id, rec.selected_index, rec.selected_text))?,
        }
    }
    out.finish()
}

fn read_jsonl(path: &Path) -> Result<Vec<(usize, serde_json::Value)>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.with_context(|| format!("{}: line {}", path.display(), i + 1))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value =
            serde_json::from_str(&line).with_context(|| format!("{}: line {}: invalid JSON", path.display(), i + 1))?;
        rows.push((i + 1, v));
    }
    Ok(rows)
}

/// Decode records in file order; the header line is skipped.
pub fn read_decode_output(path: &Path) -> Result<Vec<DecodeRecord>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line, v) in read_jsonl(path)? {
        if v.get("header").is_some() {
            continue;
        }
        let rec: DecodeRecord = serde_json::from_value(v)
            .with_context(|| format!("{}: line {line}: not a decode record", path.display()))?;
        if !seen.insert(rec.id.clone()) {
            bail!("{}: line {line}: duplicate id `{}`", path.display(), rec.id);
        }
        out.push(rec);
    }
    if out.is_empty() {
        bail!("{}: no decode records", path.display());
    }
    Ok(out)
}

#[derive(Deserialize)]
struct RefRow {
    id: String,
    #[serde(default)]
    references: Vec<String>,
}

/// References by id from any JSONL whose rows carry `id` and `references`.
pub fn read_references(path: &Path) -> Result<HashMap<String, Vec<String>>> {
    let mut out = HashMap::new();
    for (line, v) in read_jsonl(path)? {
        if v.get("header").is_some() {
            continue;
        }
        let row: RefRow =
            serde_json::from_value(v).with_context(|| format!("{}: line {line}: expected `id` and `references`", path.display()))?;
        if row.references.is_empty() {
            bail!("{}: line {line}: segment `{}` has no references", path.display(), row.id);
        }
        if out.insert(row.id.clone(), row.references).is_some() {
            bail!("{}: line {line}: duplicate id `{}`", path.display(), row.id);
        }
    }
    Ok(out)
}

fn id_list<'a>(ids: impl IntoIterator<Item = &'a str>) -> String {
    let mut v: Vec<&str> = ids.into_iter().collect();
    v.sort_unstable();
    const SHOWN: usize = 20;
    let more = v.len().saturating_sub(SHOWN);
    let mut s = v.into_iter().take(SHOWN).map(|i| format!("`{i}`")).collect::<Vec<_>>().join(", ");
    if more > 0 {
        s.push_str(&format!(" and {more} more"));
    }
    s
}

/// References in record order. Both sides must cover exactly the same ids.
fn align(records: &[DecodeRecord], refs: &HashMap<String, Vec<String>>) -> Result<Vec<Vec<String>>> {
    let have: HashSet<&str> = records.iter().map(|r| r.id.as_str()).collect();
    if !have.iter().any(|id| refs.contains_key(*id)) {
        bail!("decode output and references share no ids");
    }
    let missing_refs: Vec<&str> = records.iter().map(|r| r.id.as_str()).filter(|id| !refs.contains_key(*id)).collect();
    if !missing_refs.is_empty() {
        bail!("no references for ids {}", id_list(missing_refs));
    }
    let missing_out: Vec<&str> = refs.keys().map(String::as_str).filter(|id| !have.contains(id)).collect();
    if !missing_out.is_empty() {
        bail!("decode output lacks ids {}", id_list(missing_out));
    }
    Ok(records.iter().map(|r| refs[&r.id].clone()).collect())
}

fn refs_path(cfg: &RunConfig) -> Result<&Path> {
    cfg.refs.as_deref().context("--refs is required (a JSONL file with `id` and `references`)")
}

#[derive(Debug, Serialize)]
struct EvalReport {
    metric: MetricKind,
    segments: usize,
    value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    bleu: Option<BleuScore>,
}

fn eval(cfg: &RunConfig) -> Result<()> {
    let records = read_decode_output(&cfg.input)?;
    let refs = read_references(refs_path(cfg)?)?;
    let aligned = align(&records, &refs)?;
    let report = match cfg.metric {
        MetricKind::CorpusBleu => {
            let pairs: Vec<_> = records
                .iter()
                .zip(&aligned)
                .map(|(r, refs)| {
                    (
                        tokenize(&r.selected_text, TokenizeMode::Intl),
                        refs.iter().map(|x| tokenize(x, TokenizeMode::Intl)).collect(),
                    )
                })
                .collect();
            let bleu = corpus_bleu(&pairs, DEFAULT_MAX_N, Smoothing::None)?;
            EvalReport {
                metric: cfg.metric,
                segments: records.len(),
                value: bleu.value,
                bleu: Some(bleu),
            }
        }
        MetricKind::MeanSentenceBleu => {
            let hyps: Vec<&str> = records.iter().map(|r| r.selected_text.as_str()).collect();
            EvalReport {
                metric: cfg.metric,
                segments: records.len(),
                value: cfg.metric.metric().score(&hyps, &aligned)?,
                bleu: None,
            }
        }
    };
    let mut out = Output::open(cfg)?;
    match out.format {
        Format::Jsonl => out.json(&report)?,
        Format::Text => {
            let mut s = format!("{:<20}{:.4}\n{:<20}{}\n", "bleu", report.value * 100.0, "segments", report.segments);
            if let Some(b) = &report.bleu {
                let p: Vec<String> = b.precisions.iter().map(|p| format!("{:.1}", p * 100.0)).collect();
                s.push_str(&format!(
                    "{:<20}{}\n{:<20}{:.4}\n{:<20}{}/{}\n",
                    "precisions",
                    p.join("/"),
                    "brevity_penalty",
                    b.brevity_penalty,
                    "hyp_len/ref_len",
                    b.hyp_len,
                    b.ref_len
                ));
            }
            out.text(&s)?;
        }
    }
    out.finish()
}

fn significance(cfg: &RunConfig) -> Result<()> {
    let a = read_decode_output(&cfg.input)?;
    let compare = cfg.compare.as_deref().context("--compare is required (the second decode output)")?;
    let b = read_decode_output(compare)?;
    let refs = read_references(refs_path(cfg)?)?;
    let aligned = align(&a, &refs).context("system A")?;
    align(&b, &refs).context("system B")?;
    let b_by_id: HashMap<&str, &str> = b.iter().map(|r| (r.id.as_str(), r.selected_text.as_str())).collect();
    let hyps_a: Vec<&str> = a.iter().map(|r| r.selected_text.as_str()).collect();
    let hyps_b: Vec<&str> = a.iter().map(|r| b_by_id[r.id.as_str()]).collect();
    let metric = cfg.metric.metric();
    let report = paired_bootstrap(
        metric.as_ref(),
        &hyps_a,
        &hyps_b,
        &aligned,
        BootstrapConfig {
            resamples: cfg.resamples,
            seed: cfg.seed,
        },
    )?;
    let mut out = Output::open(cfg)?;
    match out.format {
        Format::Jsonl => out.json(&report)?,
        Format::Text => out.text(&significance_text(&report))?,
    }
    out.finish()
}

pub fn significance_text(r: &SignificanceReport) -> String {
    format!(
        "{:<12}{:.4}\n{:<12}{:.4}{}\n{:<12}{:+.4}\n{:<12}{}  (wins {}/{}, ties {}, seed {})\n",
        "system A",
        r.score_a * 100.0,
        "system B",
        r.score_b * 100.0,
        r.marker,
        "delta",
        r.delta * 100.0,
        "p",
        r.p_value,
        r.wins_a,
        r.wins_b,
        r.ties,
        r.seed
    )
}

/// `1..=m` where `m` is the smallest support (original included) in the set.
fn default_k_values(set: &SegmentSet) -> Result<Vec<usize>> {
    let m = set
        .iter()
        .map(|s| support_view(s, SupportKind::QuasiSourcesWithOriginal).map(|v| v.len()))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .min()
        .ok_or_else(|| anyhow!("no segments"))?;
    Ok((1..=m).collect())
}

#[derive(Serialize)]
struct AnalysisRecord<T: Serialize> {
    analysis: AnalysisKind,
    #[serde(flatten)]
    report: T,
}

fn analyze(cfg: &RunConfig) -> Result<()> {
    let set = load(cfg)?;
    let mut out;
    match cfg.analysis {
        AnalysisKind::Ablation | AnalysisKind::AvgQe => {
            let p = provider(cfg, &cfg.provider)?;
            require_shape(&*p, "sMBR analysis", Shape::Joint).map_err(|e| anyhow!("{e} (try --provider mock:qe)"))?;
            let k_values = match &cfg.k_values {
                Some(k) => k.clone(),
                None => default_k_values(&set)?,
            };
            let curve = if cfg.analysis == AnalysisKind::Ablation {
                source_count_ablation(&set, &*p, &k_values, cfg.metric.metric().as_ref())?
            } else {
                avg_qe_to_original(&set, &*p, &k_values)?
            };
            out = Output::open(cfg)?;
            match out.format {
                Format::Jsonl => out.json(&AnalysisRecord {
                    analysis: cfg.analysis,
                    report: &curve,
                })?,
                Format::Text => out.text(&curve.to_text())?,
            }
        }
        AnalysisKind::Quality => {
            let p = provider(cfg, &cfg.embed_provider)?;
            require_shape(&*p, "source quality", Shape::Factorable)
                .map_err(|e| anyhow!("{e} (try --embed-provider mock:lexical)"))?;
            let report = source_quality_set(&set, &*p)?;
            out = Output::open(cfg)?;
            match out.format {
                Format::Jsonl => out.json(&AnalysisRecord {
                    analysis: cfg.analysis,
                    report: &report,
                })?,
                Format::Text => out.text(&report.to_text())?,
            }
        }
    }
    out.finish()
}

fn bench(cfg: &RunConfig) -> Result<()> {
    let set = load(cfg)?;
    let p = provider(cfg, &cfg.provider)?;
    let rules = match &cfg.rules {
        Some(r) => r.clone(),
        None => match p.shape() {
            Shape::Joint => vec![Rule::MbrNaive, Rule::QeRerank, Rule::Smbr],
            Shape::Factorable => vec![Rule::MbrNaive, Rule::MbrFast],
        },
    };
    for &r in &rules {
        check_shapes(r, cfg, &*p, None)?;
    }
    let configs: Vec<_> = rules.iter().map(|&r| cfg.rule_config(r)).collect();
    let opts = BenchOptions {
        repetitions: cfg.repetitions,
        parallel: cfg.parallel,
    };
    let reports: Vec<BenchReport> = if cfg.latency_us > 0 {
        let lat = LatencyModel::uniform(Duration::from_micros(cfg.latency_us));
        run_bench(&configs, &set, LatencyProvider::new(p, lat), opts)?
    } else {
        run_bench(&configs, &set, p, opts)?
    };
    let mut out = Output::open(cfg)?;
    match out.format {
        Format::Jsonl => {
            for r in &reports {
                out.json(r)?;
            }
        }
        Format::Text => out.text(&reports_to_text(&reports))?,
    }
    out.finish()
}
