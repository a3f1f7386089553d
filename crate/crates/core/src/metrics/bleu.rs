//! Sentence- and corpus-level BLEU with clipped n-gram precision, the
//! closest-reference brevity penalty, and optional smoothing.

use std::collections::HashMap;

use serde::Serialize;
use thiserror::Error;

use super::tokenize::{tokenize, TokenSequence, TokenizeMode};

#[derive(Debug, Error, PartialEq)]
pub enum BleuError {
    #[error("max_n must be at least 1")]
    ZeroOrder,
    #[error("at least one reference is required")]
    NoReferences,
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("{hyps} hypotheses but {refs} reference lists")]
    LengthMismatch { hyps: usize, refs: usize },
    #[error("self-BLEU undefined for fewer than 2 sentences (got {0})")]
    SelfBleuUndefined(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "k")]
pub enum Smoothing {
    #[default]
    None,
    /// Adds `k` to matches and totals of every order above unigrams.
    AddK(f64),
    /// The j-th zero precision (counted over orders) becomes 1/2^j.
    ExpDecay,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BleuScore {
    /// In [0, 1].
    pub value: f64,
    /// Effective (post-smoothing) precision for each order.
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
    /// Set for an empty hypothesis, whose score is 0 by convention.
    pub degenerate: bool,
}

/// Additive sufficient statistics; corpus BLEU sums these before scoring.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: Vec<u64>,
    pub totals: Vec<u64>,
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn zero(max_n: usize) -> Self {
        Self {
            matches: vec![0; max_n],
            totals: vec![0; max_n],
            hyp_len: 0,
            ref_len: 0,
        }
    }

    pub fn add(&mut self, other: &BleuStats) {
        for (a, b) in self.matches.iter_mut().zip(&other.matches) {
            *a += b;
        }
        for (a, b) in self.totals.iter_mut().zip(&other.totals) {
            *a += b;
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    pub fn max_n(&self) -> usize {
        self.matches.len()
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Length of the reference closest to `hyp_len`; ties go to the shorter one.
fn closest_ref_len(hyp_len: usize, refs: &[TokenSequence]) -> usize {
    refs.iter()
        .map(TokenSequence::len)
        .min_by_key(|&r| (r.abs_diff(hyp_len), r))
        .unwrap_or(0)
}

pub fn bleu_stats(hyp: &TokenSequence, refs: &[TokenSequence], max_n: usize) -> Result<BleuStats, BleuError> {
    if max_n == 0 {
        return Err(BleuError::ZeroOrder);
    }
    if refs.is_empty() {
        return Err(BleuError::NoReferences);
    }
    let mut stats = BleuStats::zero(max_n);
    for n in 1..=max_n {
        let hyp_counts = ngram_counts(hyp.tokens(), n);
        let mut max_ref: HashMap<&[String], u64> = HashMap::new();
        for r in refs {
            for (gram, c) in ngram_counts(r.tokens(), n) {
                let slot = max_ref.entry(gram).or_insert(0);
                *slot = (*slot).max(c);
            }
        }
        stats.matches[n - 1] = hyp_counts
            .iter()
            .map(|(gram, &c)| c.min(max_ref.get(gram).copied().unwrap_or(0)))
            .sum();
        stats.totals[n - 1] = (hyp.len() + 1).saturating_sub(n) as u64;
    }
    stats.hyp_len = hyp.len();
    stats.ref_len = closest_ref_len(hyp.len(), refs);
    Ok(stats)
}

pub fn score_from_stats(stats: &BleuStats, smoothing: Smoothing) -> BleuScore {
    let max_n = stats.max_n();
    let raw: Vec<f64> = stats
        .matches
        .iter()
        .zip(&stats.totals)
        .map(|(&m, &t)| if t == 0 { 0.0 } else { m as f64 / t as f64 })
        .collect();
    // The ratio is clamped to a unit hypothesis length so the penalty
    // stays in (0, 1] for empty hypotheses.
    let brevity_penalty = if stats.hyp_len >= stats.ref_len {
        1.0
    } else {
        (1.0 - stats.ref_len as f64 / stats.hyp_len.max(1) as f64).exp()
    };
    let zero = |precisions: Vec<f64>, degenerate: bool| BleuScore {
        value: 0.0,
        precisions,
        brevity_penalty,
        hyp_len: stats.hyp_len,
        ref_len: stats.ref_len,
        degenerate,
    };
    if stats.hyp_len == 0 {
        return zero(raw, true);
    }
    if stats.matches[0] == 0 {
        return zero(raw, false);
    }

    let mut precisions = Vec::with_capacity(max_n);
    let mut zeros = 0i32;
    for n in 0..max_n {
        let (m, t) = (stats.matches[n] as f64, stats.totals[n] as f64);
        let p = match smoothing {
            Smoothing::AddK(k) if n >= 1 => (m + k) / (t + k),
            _ if stats.matches[n] > 0 => m / t,
            Smoothing::ExpDecay => {
                zeros += 1;
                0.5f64.powi(zeros)
            }
            _ => 0.0,
        };
        precisions.push(p);
    }
    if precisions.iter().any(|&p| p <= 0.0) {
        return zero(precisions, false);
    }
    let log_sum: f64 = precisions.iter().map(|p| p.ln()).sum();
    BleuScore {
        value: brevity_penalty * (log_sum / max_n as f64).exp(),
        precisions,
        brevity_penalty,
        hyp_len: stats.hyp_len,
        ref_len: stats.ref_len,
        degenerate: false,
    }
}

pub fn sentence_bleu(
    hyp: &TokenSequence,
    refs: &[TokenSequence],
    max_n: usize,
    smoothing: Smoothing,
) -> Result<BleuScore, BleuError> {
    Ok(score_from_stats(&bleu_stats(hyp, refs, max_n)?, smoothing))
}

/// Aggregates clipped counts and lengths over the corpus, then scores once.
pub fn corpus_bleu(
    pairs: &[(TokenSequence, Vec<TokenSequence>)],
    max_n: usize,
    smoothing: Smoothing,
) -> Result<BleuScore, BleuError> {
    if pairs.is_empty() {
        return Err(BleuError::EmptyCorpus);
    }
    let mut total = BleuStats::zero(max_n);
    for (hyp, refs) in pairs {
        total.add(&bleu_stats(hyp, refs, max_n)?);
    }
    Ok(score_from_stats(&total, smoothing))
}

/// Mean sentence BLEU (exp-decay smoothing) of each sentence against the
/// others, scaled to [0, 100].
pub fn self_bleu(sentences: &[&str], max_n: usize, mode: TokenizeMode) -> Result<f64, BleuError> {
    if sentences.len() < 2 {
        return Err(BleuError::SelfBleuUndefined(sentences.len()));
    }
    let toks: Vec<TokenSequence> = sentences.iter().map(|s| tokenize(s, mode)).collect();
    let mut total = 0.0;
    for (i, hyp) in toks.iter().enumerate() {
        let rest: Vec<TokenSequence> = toks
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, t)| t.clone())
            .collect();
        total += sentence_bleu(hyp, &rest, max_n, Smoothing::ExpDecay)?.value;
    }
    Ok(total / toks.len() as f64 * 100.0)
}
