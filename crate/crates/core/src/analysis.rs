//! Source-count ablation, quasi-source diversity and similarity, and
//! average QE against the original source as a function of support size.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::corpus::{Provenance, Segment, SegmentSet};
use crate::decision::{Decider, DecisionError};
use crate::metrics::{self_bleu, BleuError, CorpusMetric, TokenizeMode, DEFAULT_MAX_N};
use crate::utility::{require_shape, ScoreError, Shape, UtilityProvider};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("k_values must be non-empty, positive and strictly increasing")]
    BadKValues,
    #[error("segment `{id}`: {source}")]
    Segment {
        id: String,
        #[source]
        source: DecisionError,
    },
    #[error("segment `{id}` has no references")]
    MissingReferences { id: String },
    #[error("segment `{id}` has no quasi-sources")]
    NoQuasiSources { id: String },
    #[error("no segments")]
    Empty,
    #[error(transparent)]
    Metric(#[from] BleuError),
    #[error(transparent)]
    Score(#[from] ScoreError),
}

impl AnalysisError {
    pub fn is_scorer_failure(&self) -> bool {
        match self {
            AnalysisError::Segment { source, .. } => source.is_scorer_failure(),
            AnalysisError::Score(e) => e.is_scorer_failure(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationCurve {
    pub metric_name: String,
    pub k_values: Vec<usize>,
    pub metric_values: Vec<f64>,
}

impl AblationCurve {
    pub fn to_text(&self) -> String {
        let mut out = format!("{:>4}  {}\n", "|S|", self.metric_name);
        for (k, v) in self.k_values.iter().zip(&self.metric_values) {
            let _ = writeln!(out, "{k:>4}  {v:.6}");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SourceQualityReport {
    /// Absent when every segment has fewer than two quasi-sources.
    pub self_bleu: Option<f64>,
    /// Cosine similarity in [-1, 1].
    pub mean_semantic_similarity: f64,
    pub n_sources: usize,
    pub n_segments: usize,
}

impl SourceQualityReport {
    /// Similarity is printed ×100 alongside Self-BLEU.
    pub fn to_text(&self) -> String {
        let sb = self.self_bleu.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"));
        format!(
            "{:<12}{:>10}\n{:<12}{:>10}\n{:<12}{:>10.2}\n{:<12}{:>10}\n",
            "segments",
            self.n_segments,
            "self-bleu",
            sb,
            "similarity",
            self.mean_semantic_similarity * 100.0,
            "sources",
            self.n_sources
        )
    }
}

fn check_k_values(k_values: &[usize]) -> Result<(), AnalysisError> {
    if k_values.is_empty() || k_values[0] == 0 || k_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(AnalysisError::BadKValues);
    }
    Ok(())
}

fn seg_err(seg: &Segment) -> impl Fn(DecisionError) -> AnalysisError + '_ {
    move |source| AnalysisError::Segment {
        id: seg.id.clone(),
        source,
    }
}

/// Uniform sMBR winner index at support size `k`.
fn smbr_winner(seg: &Segment, provider: &dyn UtilityProvider, k: usize) -> Result<usize, AnalysisError> {
    let sources = crate::decision::smbr_sources(seg, Some(k), false).map_err(seg_err(seg))?;
    let r = Decider::default()
        .smbr_select(&sources, &seg.candidates, provider)
        .map_err(seg_err(seg))?;
    Ok(r.selected_index)
}

/// Winners for every segment at every k: `out[k_idx][segment]`.
fn winners(segments: &SegmentSet, provider: &dyn UtilityProvider, k_values: &[usize]) -> Result<Vec<Vec<usize>>, AnalysisError> {
    check_k_values(k_values)?;
    require_shape(provider, "sMBR analysis", Shape::Joint)?;
    if segments.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let per_segment: Vec<Vec<usize>> = segments
        .segments()
        .par_iter()
        .map(|seg| k_values.iter().map(|&k| smbr_winner(seg, provider, k)).collect())
        .collect::<Result<_, _>>()?;
    Ok((0..k_values.len())
        .map(|ki| per_segment.iter().map(|w| w[ki]).collect())
        .collect())
}

/// Corpus metric of the sMBR selections at each support size (original first,
/// then quasi-sources in file order).
pub fn source_count_ablation(
    segments: &SegmentSet,
    provider: &dyn UtilityProvider,
    k_values: &[usize],
    metric: &dyn CorpusMetric,
) -> Result<AblationCurve, AnalysisError> {
    if let Some(seg) = segments.iter().find(|s| s.references.is_empty()) {
        return Err(AnalysisError::MissingReferences { id: seg.id.clone() });
    }
    let table = winners(segments, provider, k_values)?;
    let refs: Vec<Vec<String>> = segments.iter().map(|s| s.references.clone()).collect();
    let metric_values = table
        .iter()
        .map(|sel| {
            let hyps: Vec<&str> = segments
                .iter()
                .zip(sel)
                .map(|(s, &i)| s.candidates[i].text.as_str())
                .collect();
            metric.score(&hyps, &refs)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(AblationCurve {
        metric_name: metric.name(),
        k_values: k_values.to_vec(),
        metric_values,
    })
}

/// Mean of `f_QE(original, winner_k)` over segments; raw scores, no
/// per-segment normalization.
pub fn avg_qe_to_original(segments: &SegmentSet, provider: &dyn UtilityProvider, k_values: &[usize]) -> Result<AblationCurve, AnalysisError> {
    let table = winners(segments, provider, k_values)?;
    // QE of every candidate against the original, scored once per segment
    let qe: Vec<Vec<f64>> = segments
        .segments()
        .par_iter()
        .map(|seg| {
            Decider::default()
                .qe_rerank(&seg.source, &seg.candidates, provider)
                .map(|r| r.scores)
                .map_err(seg_err(seg))
        })
        .collect::<Result<_, _>>()?;
    let n = segments.len() as f64;
    let metric_values = table
        .iter()
        .map(|sel| sel.iter().zip(&qe).map(|(&i, q)| q[i]).sum::<f64>() / n)
        .collect();
    Ok(AblationCurve {
        metric_name: format!("avg_qe_to_original({})", provider.capabilities().name),
        k_values: k_values.to_vec(),
        metric_values,
    })
}

fn quasi_texts(seg: &Segment) -> Vec<&str> {
    seg.quasi_sources
        .iter()
        .filter(|q| q.provenance != Provenance::Original)
        .map(|q| q.text.as_str())
        .collect()
}

/// Self-BLEU and mean cosine(original, quasi) for one segment.
pub fn source_quality(segment: &Segment, embed_provider: &dyn UtilityProvider) -> Result<SourceQualityReport, AnalysisError> {
    require_shape(embed_provider, "source quality", Shape::Factorable)?;
    let quasi = quasi_texts(segment);
    if quasi.is_empty() {
        return Err(AnalysisError::NoQuasiSources { id: segment.id.clone() });
    }
    let self_bleu = if quasi.len() >= 2 {
        Some(self_bleu(&quasi, DEFAULT_MAX_N, TokenizeMode::Intl)?)
    } else {
        None
    };
    let mut texts = vec![segment.source.as_str()];
    texts.extend(&quasi);
    let embs = embed_provider.embed(&texts)?;
    let sim = embs[1..].iter().map(|e| embs[0].cosine(e)).sum::<f64>() / quasi.len() as f64;
    Ok(SourceQualityReport {
        self_bleu,
        mean_semantic_similarity: sim,
        n_sources: quasi.len(),
        n_segments: 1,
    })
}

/// Unweighted mean of per-segment reports. Self-BLEU averages only the
/// segments where it is defined.
pub fn source_quality_set(segments: &SegmentSet, embed_provider: &dyn UtilityProvider) -> Result<SourceQualityReport, AnalysisError> {
    if segments.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let reports: Vec<SourceQualityReport> = segments
        .segments()
        .par_iter()
        .map(|s| source_quality(s, embed_provider))
        .collect::<Result<_, _>>()?;
    let sb: Vec<f64> = reports.iter().filter_map(|r| r.self_bleu).collect();
    Ok(SourceQualityReport {
        self_bleu: (!sb.is_empty()).then(|| sb.iter().sum::<f64>() / sb.len() as f64),
        mean_semantic_similarity: reports.iter().map(|r| r.mean_semantic_similarity).sum::<f64>() / reports.len() as f64,
        n_sources: reports.iter().map(|r| r.n_sources).sum(),
        n_segments: reports.len(),
    })
}
