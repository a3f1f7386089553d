//! Call counting and wall-time measurement for the decision rules.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use indexmap::IndexSet;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::corpus::{support_view, Segment, SegmentSet, SupportKind};
use crate::decision::{decide_segment, DecisionError, Rule, RuleConfig};
use crate::utility::{Embedding, PointwiseView, ProviderCapabilities, ScoreError, Shape, Triple, UtilityProvider};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("repetitions must be at least 1")]
    NoRepetitions,
    #[error("no segments")]
    Empty,
    #[error("segment `{id}`: {source}")]
    Segment {
        id: String,
        #[source]
        source: DecisionError,
    },
    #[error("{rule}: call counts {actual:?} differ from the expected {expected:?}")]
    CountMismatch { rule: String, expected: CallTally, actual: CallTally },
    #[error(transparent)]
    Score(#[from] ScoreError),
}

impl BenchError {
    pub fn is_scorer_failure(&self) -> bool {
        match self {
            BenchError::Segment { source, .. } => source.is_scorer_failure(),
            BenchError::Score(e) => e.is_scorer_failure(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CallTally {
    pub embed_calls: u64,
    pub embed_texts: u64,
    pub estimate_calls: u64,
    pub estimate_triples: u64,
    pub pair_calls: u64,
    pub pair_items: u64,
}

impl std::ops::AddAssign for CallTally {
    fn add_assign(&mut self, o: Self) {
        self.embed_calls += o.embed_calls;
        self.embed_texts += o.embed_texts;
        self.estimate_calls += o.estimate_calls;
        self.estimate_triples += o.estimate_triples;
        self.pair_calls += o.pair_calls;
        self.pair_items += o.pair_items;
    }
}

/// Transparent wrapper counting every delegated call and item.
#[derive(Debug, Default)]
pub struct CountingProvider<P> {
    inner: P,
    embed_calls: AtomicU64,
    embed_texts: AtomicU64,
    estimate_calls: AtomicU64,
    estimate_triples: AtomicU64,
    pair_calls: AtomicU64,
    pair_items: AtomicU64,
}

impl<P: UtilityProvider> CountingProvider<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            embed_calls: AtomicU64::new(0),
            embed_texts: AtomicU64::new(0),
            estimate_calls: AtomicU64::new(0),
            estimate_triples: AtomicU64::new(0),
            pair_calls: AtomicU64::new(0),
            pair_items: AtomicU64::new(0),
        }
    }

    pub fn tally(&self) -> CallTally {
        CallTally {
            embed_calls: self.embed_calls.load(Ordering::SeqCst),
            embed_texts: self.embed_texts.load(Ordering::SeqCst),
            estimate_calls: self.estimate_calls.load(Ordering::SeqCst),
            estimate_triples: self.estimate_triples.load(Ordering::SeqCst),
            pair_calls: self.pair_calls.load(Ordering::SeqCst),
            pair_items: self.pair_items.load(Ordering::SeqCst),
        }
    }

    pub fn reset(&self) {
        for c in [
            &self.embed_calls,
            &self.embed_texts,
            &self.estimate_calls,
            &self.estimate_triples,
            &self.pair_calls,
            &self.pair_items,
        ] {
            c.store(0, Ordering::SeqCst);
        }
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }
}

impl<P: UtilityProvider> UtilityProvider for CountingProvider<P> {
    fn capabilities(&self) -> &ProviderCapabilities {
        self.inner.capabilities()
    }

    fn score_pairs(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScoreError> {
        self.pair_calls.fetch_add(1, Ordering::SeqCst);
        self.pair_items.fetch_add(pairs.len() as u64, Ordering::SeqCst);
        self.inner.score_pairs(pairs)
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding>, ScoreError> {
        self.embed_calls.fetch_add(1, Ordering::SeqCst);
        self.embed_texts.fetch_add(texts.len() as u64, Ordering::SeqCst);
        self.inner.embed(texts)
    }

    fn estimate(&self, triples: &[Triple<'_>]) -> Result<Vec<f64>, ScoreError> {
        self.estimate_calls.fetch_add(1, Ordering::SeqCst);
        self.estimate_triples.fetch_add(triples.len() as u64, Ordering::SeqCst);
        self.inner.estimate(triples)
    }
}

/// Per-item synthetic cost added by [`LatencyProvider`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LatencyModel {
    pub pair: Duration,
    pub embed: Duration,
    pub estimate: Duration,
}

impl LatencyModel {
    /// Expensive pair scoring and embedding, cheap estimation.
    pub fn uniform(per_item: Duration) -> Self {
        Self {
            pair: per_item,
            embed: per_item,
            estimate: per_item / 100,
        }
    }
}

/// Busy-waits for a fixed time per item before delegating.
#[derive(Debug)]
pub struct LatencyProvider<P> {
    inner: P,
    model: LatencyModel,
}

impl<P> LatencyProvider<P> {
    pub fn new(inner: P, model: LatencyModel) -> Self {
        Self { inner, model }
    }
}

fn spin(per_item: Duration, items: usize) {
    if per_item.is_zero() || items == 0 {
        return;
    }
    let until = Instant::now() + per_item * items as u32;
    while Instant::now() < until {
        std::hint::spin_loop();
    }
}

impl<P: UtilityProvider> UtilityProvider for LatencyProvider<P> {
    fn capabilities(&self) -> &ProviderCapabilities {
        self.inner.capabilities()
    }

    fn score_pairs(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScoreError> {
        spin(self.model.pair, pairs.len());
        self.inner.score_pairs(pairs)
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding>, ScoreError> {
        spin(self.model.embed, texts.len());
        self.inner.embed(texts)
    }

    fn estimate(&self, triples: &[Triple<'_>]) -> Result<Vec<f64>, ScoreError> {
        spin(self.model.estimate, triples.len());
        self.inner.estimate(triples)
    }
}

/// Exact call counts one segment must produce under `config`.
pub fn expected_tally(segment: &Segment, config: &RuleConfig, shape: Shape) -> Result<CallTally, DecisionError> {
    let c = segment.candidates.len() as u64;
    let mut t = CallTally::default();
    match config.rule {
        Rule::Map => {}
        Rule::QeRerank => {
            t.pair_calls = 1;
            t.pair_items = c;
        }
        Rule::Smbr => {
            let available = support_view(segment, SupportKind::QuasiSourcesWithOriginal)?.len();
            let k = config.k.unwrap_or(available) as u64;
            t.pair_calls = 1;
            t.pair_items = k * c;
        }
        Rule::MbrNaive | Rule::MbrFast => {
            let s = config.filter_m.map_or(c, |m| m as u64);
            if config.filter_m.is_some() {
                // QE filter runs through the same provider
                t.pair_calls += 1;
                t.pair_items += c;
            }
            match (config.rule, shape) {
                (Rule::MbrNaive, Shape::Joint) => {
                    t.pair_calls += 1;
                    t.pair_items += c * s;
                }
                (Rule::MbrNaive, Shape::Factorable) => {
                    t.embed_calls = c * s;
                    t.embed_texts = 3 * c * s;
                    t.estimate_calls = c * s;
                    t.estimate_triples = c * s;
                }
                _ => {
                    // supports are drawn from the candidates
                    let mut distinct: IndexSet<&str> = IndexSet::new();
                    distinct.insert(segment.source.as_str());
                    distinct.extend(segment.candidate_texts());
                    t.embed_calls = 1;
                    t.embed_texts = distinct.len() as u64;
                    t.estimate_calls = c;
                    t.estimate_triples = c * s;
                }
            }
        }
    }
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BenchSizes {
    /// Largest |C| in the corpus.
    pub candidates: usize,
    /// Largest support size |S| the rule used.
    pub supports: usize,
    /// sMBR support size, when applicable.
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timing {
    pub median_s: f64,
    pub min_s: f64,
    pub max_s: f64,
    pub per_segment_s: f64,
}

impl Timing {
    fn from_runs(mut runs: Vec<Duration>, segments: usize) -> Self {
        runs.sort();
        let secs = |d: Duration| d.as_secs_f64();
        let n = runs.len();
        let median = if n % 2 == 1 {
            secs(runs[n / 2])
        } else {
            (secs(runs[n / 2 - 1]) + secs(runs[n / 2])) / 2.0
        };
        Self {
            median_s: median,
            min_s: secs(runs[0]),
            max_s: secs(runs[n - 1]),
            per_segment_s: median / segments as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub rule: String,
    pub provider: String,
    pub segments: usize,
    pub repetitions: usize,
    pub sizes: BenchSizes,
    pub tally: CallTally,
    pub wall_time: Timing,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parallel_wall_time: Option<Timing>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchOptions {
    pub repetitions: usize,
    /// Also time the rayon path.
    pub parallel: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            repetitions: 5,
            parallel: false,
        }
    }
}

fn label(config: &RuleConfig) -> String {
    let mut s = config.rule.to_string();
    if let (Rule::Smbr, Some(k)) = (config.rule, config.k) {
        let _ = write!(s, "(k={k})");
    }
    if let Some(m) = config.filter_m {
        let _ = write!(s, "(m={m})");
    }
    s
}

fn run_once<P: UtilityProvider>(
    segments: &SegmentSet,
    config: &RuleConfig,
    counter: &CountingProvider<P>,
    parallel: bool,
) -> Result<Duration, BenchError> {
    let pointwise = config.rule == Rule::MbrNaive && counter.shape() == Shape::Factorable;
    let one = |seg: &Segment| -> Result<(), BenchError> {
        let wrap = |source| BenchError::Segment {
            id: seg.id.clone(),
            source,
        };
        if pointwise {
            let view = PointwiseView::new(counter, Some(seg.source.clone()))?;
            decide_segment(seg, config, &view, None).map_err(wrap)?;
        } else {
            decide_segment(seg, config, counter, None).map_err(wrap)?;
        }
        Ok(())
    };
    let start = Instant::now();
    if parallel {
        segments.segments().par_iter().try_for_each(one)?;
    } else {
        segments.iter().try_for_each(one)?;
    }
    Ok(start.elapsed())
}

/// Runs every rule `repetitions` times over the corpus, checking that each
/// run issues exactly the expected provider calls.
///
/// A factorable provider under naive MBR is scored through a
/// [`PointwiseView`], so every pair re-embeds its texts.
pub fn run_bench<P: UtilityProvider>(
    rules: &[RuleConfig],
    segments: &SegmentSet,
    provider: P,
    options: BenchOptions,
) -> Result<Vec<BenchReport>, BenchError> {
    if options.repetitions == 0 {
        return Err(BenchError::NoRepetitions);
    }
    if segments.is_empty() {
        return Err(BenchError::Empty);
    }
    let counter = CountingProvider::new(provider);
    let shape = counter.shape();
    let mut reports = Vec::new();
    for config in rules {
        let mut expected = CallTally::default();
        let mut sizes = BenchSizes {
            candidates: 0,
            supports: 0,
            k: None,
        };
        for seg in segments.iter() {
            expected += expected_tally(seg, config, shape).map_err(|source| BenchError::Segment {
                id: seg.id.clone(),
                source,
            })?;
            let c = seg.candidates.len();
            sizes.candidates = sizes.candidates.max(c);
            let s = match config.rule {
                Rule::Map => 0,
                Rule::QeRerank => 1,
                Rule::Smbr => {
                    let k = config
                        .k
                        .unwrap_or_else(|| support_view(seg, SupportKind::QuasiSourcesWithOriginal).map_or(0, |v| v.len()));
                    sizes.k = Some(sizes.k.unwrap_or(0).max(k));
                    k
                }
                Rule::MbrNaive | Rule::MbrFast => config.filter_m.unwrap_or(c),
            };
            sizes.supports = sizes.supports.max(s);
        }

        let mut runs = Vec::with_capacity(options.repetitions);
        let mut tally = CallTally::default();
        for _ in 0..options.repetitions {
            counter.reset();
            runs.push(run_once(segments, config, &counter, false)?);
            tally = counter.tally();
            if tally != expected {
                return Err(BenchError::CountMismatch {
                    rule: label(config),
                    expected,
                    actual: tally,
                });
            }
        }
        let parallel_wall_time = if options.parallel {
            let mut pruns = Vec::with_capacity(options.repetitions);
            for _ in 0..options.repetitions {
                pruns.push(run_once(segments, config, &counter, true)?);
            }
            Some(Timing::from_runs(pruns, segments.len()))
        } else {
            None
        };
        reports.push(BenchReport {
            rule: label(config),
            provider: counter.capabilities().name.clone(),
            segments: segments.len(),
            repetitions: options.repetitions,
            sizes,
            tally,
            wall_time: Timing::from_runs(runs, segments.len()),
            parallel_wall_time,
        });
    }
    Ok(reports)
}

/// Plain-text table, one row per rule.
pub fn reports_to_text(reports: &[BenchReport]) -> String {
    let mut out = format!(
        "{:<16}{:>6}{:>6}{:>6}{:>12}{:>12}{:>12}{:>14}{:>14}{:>14}\n",
        "rule", "|C|", "|S|", "K", "pair_items", "embed_txt", "est_trip", "median_s", "per_seg_s", "parallel_s"
    );
    for r in reports {
        let k = r.sizes.k.map_or_else(|| "-".to_string(), |k| k.to_string());
        let par = r
            .parallel_wall_time
            .as_ref()
            .map_or_else(|| "-".to_string(), |t| format!("{:.6}", t.median_s));
        let _ = writeln!(
            out,
            "{:<16}{:>6}{:>6}{:>6}{:>12}{:>12}{:>12}{:>14.6}{:>14.6}{:>14}",
            r.rule,
            r.sizes.candidates,
            r.sizes.supports,
            k,
            r.tally.pair_items,
            r.tally.embed_texts,
            r.tally.estimate_triples,
            r.wall_time.median_s,
            r.wall_time.per_segment_s,
            par
        );
    }
    out
}
