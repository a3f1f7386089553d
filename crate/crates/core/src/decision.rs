//! Decision rules: MAP, MBR (naive and embedding-cached), QE reranking and
//! source-based MBR, plus QE-based support filtering.
//!
//! Every rule returns a [`DecisionResult`] with the full decision-score
//! vector. The winner is chosen from the argmax set computed under an
//! absolute tolerance of [`TIE_TOLERANCE`]; by default the lowest index wins.

use std::fmt;
use std::str::FromStr;

use indexmap::IndexSet;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{support_view, Candidate, CorpusError, Segment, SupportEntry, SupportKind};
use crate::utility::{build_utility_matrix, require_shape, ScoreError, Shape, UtilityMatrix, UtilityProvider};

pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum DecisionError {
    #[error("candidate list is empty")]
    EmptyCandidates,
    #[error("support list is empty")]
    EmptySupport,
    #[error("candidate {index} has no logprob")]
    MissingLogprob { index: usize },
    #[error("expected {expected} support weights, got {found}")]
    WeightLength { expected: usize, found: usize },
    #[error("support weight {index} is {value}; weights must be finite and non-negative")]
    InvalidWeight { index: usize, value: f64 },
    #[error("support weights sum to zero")]
    ZeroWeightMass,
    #[error("either every support carries a weight or none does")]
    MixedWeights,
    #[error("weighted decoding requested but supports carry no weights")]
    MissingWeights,
    #[error("filter size {m} is invalid for {available} candidates")]
    FilterSize { m: usize, available: usize },
    #[error("support size {k} requested but only {available} sources available")]
    InsufficientSupport { k: usize, available: usize },
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

impl DecisionError {
    pub fn is_scorer_failure(&self) -> bool {
        matches!(self, DecisionError::Score(e) if e.is_scorer_failure())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Map,
    MbrNaive,
    MbrFast,
    QeRerank,
    Smbr,
}

impl Rule {
    pub const ALL: [Rule; 5] = [Rule::Map, Rule::MbrNaive, Rule::MbrFast, Rule::QeRerank, Rule::Smbr];

    pub fn as_str(self) -> &'static str {
        match self {
            Rule::Map => "map",
            Rule::MbrNaive => "mbr_naive",
            Rule::MbrFast => "mbr_fast",
            Rule::QeRerank => "qe_rerank",
            Rule::Smbr => "smbr",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Rule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Rule::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown rule `{s}` (expected one of map, mbr_naive, mbr_fast, qe_rerank, smbr)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    #[default]
    LowestIndex,
    /// Highest logprob among the tied candidates, then lowest index. Falls
    /// back to lowest index when any tied candidate lacks a logprob.
    HighestLogprob,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecisionResult {
    pub rule: Rule,
    pub selected_index: usize,
    pub scores: Vec<f64>,
    pub tied_indices: Vec<usize>,
    pub support_size: usize,
    pub weighted: bool,
}

/// Normalized support distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportWeights(Vec<f64>);

impl SupportWeights {
    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    /// Renormalizes non-negative raw weights to sum to one.
    pub fn from_raw(raw: &[f64]) -> Result<Self, DecisionError> {
        if raw.is_empty() {
            return Err(DecisionError::EmptySupport);
        }
        if let Some((index, &value)) = raw.iter().enumerate().find(|(_, w)| !w.is_finite() || **w < 0.0) {
            return Err(DecisionError::InvalidWeight { index, value });
        }
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return Err(DecisionError::ZeroWeightMass);
        }
        Ok(Self(raw.iter().map(|w| w / total).collect()))
    }

    /// Softmax over log-probabilities: the model distribution renormalized
    /// over the finite support set.
    pub fn from_logprobs(logprobs: &[f64]) -> Result<Self, DecisionError> {
        if logprobs.is_empty() {
            return Err(DecisionError::EmptySupport);
        }
        let max = logprobs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let raw: Vec<f64> = logprobs.iter().map(|lp| (lp - max).exp()).collect();
        Self::from_raw(&raw)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `scores[i] = Σ_j w_j · M[i][j]`, accumulated left to right starting from
/// the first term, so a single unit-weight support reproduces `M[i][0]`
/// exactly.
fn expected_utility(matrix: &UtilityMatrix, weights: &[f64]) -> Vec<f64> {
    (0..matrix.rows()).map(|i| weighted_sum(matrix.row(i), weights)).collect()
}

fn weighted_sum(row: &[f64], weights: &[f64]) -> f64 {
    let mut it = row.iter().zip(weights);
    let (u0, w0) = it.next().expect("non-empty support");
    it.fold(w0 * u0, |acc, (u, w)| acc + w * u)
}

/// Argmax set under [`TIE_TOLERANCE`].
pub fn argmax_set(scores: &[f64]) -> Vec<usize> {
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s >= best - TIE_TOLERANCE)
        .map(|(i, _)| i)
        .collect()
}

/// Rule runner carrying the tie-break policy.
#[derive(Debug, Clone, Copy, Default)]
pub struct Decider {
    pub tie_break: TieBreak,
}

impl Decider {
    pub fn new(tie_break: TieBreak) -> Self {
        Self { tie_break }
    }

    fn finish(
        &self,
        rule: Rule,
        candidates: &[Candidate],
        scores: Vec<f64>,
        support_size: usize,
        weighted: bool,
    ) -> Result<DecisionResult, DecisionError> {
        if let Some(index) = scores.iter().position(|s| !s.is_finite()) {
            return Err(ScoreError::NonFinite { index }.into());
        }
        let tied = argmax_set(&scores);
        let selected = match self.tie_break {
            TieBreak::LowestIndex => tied[0],
            TieBreak::HighestLogprob => {
                let lps: Option<Vec<f64>> = tied.iter().map(|&i| candidates[i].logprob).collect();
                match lps {
                    Some(lps) => {
                        let mut best = 0;
                        for (k, lp) in lps.iter().enumerate() {
                            if *lp > lps[best] {
                                best = k;
                            }
                        }
                        tied[best]
                    }
                    None => tied[0],
                }
            }
        };
        Ok(DecisionResult {
            rule,
            selected_index: selected,
            scores,
            tied_indices: tied,
            support_size,
            weighted,
        })
    }

    /// Highest model log-probability.
    pub fn map_select(&self, candidates: &[Candidate]) -> Result<DecisionResult, DecisionError> {
        if candidates.is_empty() {
            return Err(DecisionError::EmptyCandidates);
        }
        let scores = candidates
            .iter()
            .enumerate()
            .map(|(index, c)| c.logprob.ok_or(DecisionError::MissingLogprob { index }))
            .collect::<Result<Vec<_>, _>>()?;
        self.finish(Rule::Map, candidates, scores, 0, false)
    }

    /// Expected utility over the full `|C| × |S|` table built by
    /// [`build_utility_matrix`]. Uniform weights when `weights` is `None`.
    pub fn mbr_select_naive(
        &self,
        candidates: &[Candidate],
        supports: &[&str],
        provider: &dyn UtilityProvider,
        weights: Option<&SupportWeights>,
        context_source: Option<&str>,
    ) -> Result<DecisionResult, DecisionError> {
        check_sets(candidates, supports, weights)?;
        let texts: Vec<&str> = candidates.iter().map(|c| c.text.as_str()).collect();
        let matrix = build_utility_matrix(provider, &texts, supports, context_source)?;
        let uniform;
        let w = match weights {
            Some(w) => w.as_slice(),
            None => {
                uniform = SupportWeights::uniform(supports.len());
                uniform.as_slice()
            }
        };
        let scores = expected_utility(&matrix, w);
        self.finish(Rule::MbrNaive, candidates, scores, supports.len(), weights.is_some())
    }

    /// Embedding-cached MBR for factorable providers: every distinct text in
    /// `{source} ∪ candidates ∪ supports` is embedded once, then each row of
    /// estimator triples is scored and aggregated.
    pub fn mbr_select_fast(
        &self,
        candidates: &[Candidate],
        supports: &[&str],
        source: &str,
        provider: &dyn UtilityProvider,
        weights: Option<&SupportWeights>,
    ) -> Result<DecisionResult, DecisionError> {
        require_shape(provider, "mbr_fast", Shape::Factorable)?;
        check_sets(candidates, supports, weights)?;

        let mut distinct: IndexSet<&str> = IndexSet::new();
        distinct.insert(source);
        distinct.extend(candidates.iter().map(|c| c.text.as_str()));
        distinct.extend(supports.iter().copied());
        let texts: Vec<&str> = distinct.iter().copied().collect();
        let embs = provider.embed(&texts)?;
        if embs.len() != texts.len() {
            return Err(ScoreError::LengthMismatch {
                expected: texts.len(),
                found: embs.len(),
            }
            .into());
        }
        let emb = |t: &str| &embs[distinct.get_index_of(t).expect("text was inserted")];
        let src = emb(source);
        let support_embs: Vec<_> = supports.iter().map(|s| emb(s)).collect();

        let uniform;
        let w = match weights {
            Some(w) => w.as_slice(),
            None => {
                uniform = SupportWeights::uniform(supports.len());
                uniform.as_slice()
            }
        };
        let mut scores = Vec::with_capacity(candidates.len());
        for (row, c) in candidates.iter().enumerate() {
            let hyp = emb(&c.text);
            let triples: Vec<_> = support_embs.iter().map(|s| (src, *s, hyp)).collect();
            let utils = provider.estimate(&triples).map_err(|e| match e {
                ScoreError::Failed { index, .. } | ScoreError::NonFinite { index } => ScoreError::AtCell {
                    row,
                    col: index,
                    source: Box::new(e),
                },
                other => other,
            })?;
            if utils.len() != triples.len() {
                return Err(ScoreError::LengthMismatch {
                    expected: triples.len(),
                    found: utils.len(),
                }
                .into());
            }
            scores.push(weighted_sum(&utils, w));
        }
        self.finish(Rule::MbrFast, candidates, scores, supports.len(), weights.is_some())
    }

    /// `argmax_h f_QE(source, h)`.
    pub fn qe_rerank(
        &self,
        source: &str,
        candidates: &[Candidate],
        provider: &dyn UtilityProvider,
    ) -> Result<DecisionResult, DecisionError> {
        require_shape(provider, "qe_rerank", Shape::Joint)?;
        let scores = qe_scores(source, candidates, provider)?;
        self.finish(Rule::QeRerank, candidates, scores, 1, false)
    }

    /// Source-based MBR: sources act as supports and the joint QE provider as
    /// utility. Weighted when every source carries a weight, uniform when
    /// none does.
    pub fn smbr_select(
        &self,
        sources: &[SupportEntry<'_>],
        candidates: &[Candidate],
        provider: &dyn UtilityProvider,
    ) -> Result<DecisionResult, DecisionError> {
        require_shape(provider, "smbr", Shape::Joint)?;
        if candidates.is_empty() {
            return Err(DecisionError::EmptyCandidates);
        }
        if sources.is_empty() {
            return Err(DecisionError::EmptySupport);
        }
        let raw: Option<Vec<f64>> = sources.iter().map(|s| s.weight).collect();
        let (weights, weighted) = match raw {
            Some(raw) => (SupportWeights::from_raw(&raw)?, true),
            None if sources.iter().any(|s| s.weight.is_some()) => return Err(DecisionError::MixedWeights),
            None => (SupportWeights::uniform(sources.len()), false),
        };
        let texts: Vec<&str> = candidates.iter().map(|c| c.text.as_str()).collect();
        let source_texts: Vec<&str> = sources.iter().map(|s| s.text).collect();
        let matrix = build_utility_matrix(provider, &texts, &source_texts, None)?;
        let scores = expected_utility(&matrix, weights.as_slice());
        self.finish(Rule::Smbr, candidates, scores, sources.len(), weighted)
    }

    /// Indices of the `m` candidates with the highest QE score against
    /// `source`, best first; ties keep candidate order.
    pub fn filter_support(
        &self,
        candidates: &[Candidate],
        source: &str,
        provider: &dyn UtilityProvider,
        m: usize,
    ) -> Result<Vec<usize>, DecisionError> {
        require_shape(provider, "filter_support", Shape::Joint)?;
        if candidates.is_empty() {
            return Err(DecisionError::EmptyCandidates);
        }
        if m == 0 || m > candidates.len() {
            return Err(DecisionError::FilterSize {
                m,
                available: candidates.len(),
            });
        }
        let scores = qe_scores(source, candidates, provider)?;
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        order.truncate(m);
        Ok(order)
    }
}

fn qe_scores(source: &str, candidates: &[Candidate], provider: &dyn UtilityProvider) -> Result<Vec<f64>, DecisionError> {
    if candidates.is_empty() {
        return Err(DecisionError::EmptyCandidates);
    }
    let pairs: Vec<(&str, &str)> = candidates.iter().map(|c| (source, c.text.as_str())).collect();
    let scores = provider.score_pairs(&pairs)?;
    if scores.len() != pairs.len() {
        return Err(ScoreError::LengthMismatch {
            expected: pairs.len(),
            found: scores.len(),
        }
        .into());
    }
    Ok(scores)
}

fn check_sets(candidates: &[Candidate], supports: &[&str], weights: Option<&SupportWeights>) -> Result<(), DecisionError> {
    if candidates.is_empty() {
        return Err(DecisionError::EmptyCandidates);
    }
    if supports.is_empty() {
        return Err(DecisionError::EmptySupport);
    }
    if let Some(w) = weights {
        if w.len() != supports.len() {
            return Err(DecisionError::WeightLength {
                expected: supports.len(),
                found: w.len(),
            });
        }
    }
    Ok(())
}

pub fn map_select(candidates: &[Candidate]) -> Result<DecisionResult, DecisionError> {
    Decider::default().map_select(candidates)
}

pub fn mbr_select_naive(
    candidates: &[Candidate],
    supports: &[&str],
    provider: &dyn UtilityProvider,
    weights: Option<&SupportWeights>,
    context_source: Option<&str>,
) -> Result<DecisionResult, DecisionError> {
    Decider::default().mbr_select_naive(candidates, supports, provider, weights, context_source)
}

pub fn mbr_select_fast(
    candidates: &[Candidate],
    supports: &[&str],
    source: &str,
    provider: &dyn UtilityProvider,
    weights: Option<&SupportWeights>,
) -> Result<DecisionResult, DecisionError> {
    Decider::default().mbr_select_fast(candidates, supports, source, provider, weights)
}

pub fn qe_rerank(source: &str, candidates: &[Candidate], provider: &dyn UtilityProvider) -> Result<DecisionResult, DecisionError> {
    Decider::default().qe_rerank(source, candidates, provider)
}

pub fn smbr_select(
    sources: &[SupportEntry<'_>],
    candidates: &[Candidate],
    provider: &dyn UtilityProvider,
) -> Result<DecisionResult, DecisionError> {
    Decider::default().smbr_select(sources, candidates, provider)
}

pub fn filter_support(
    candidates: &[Candidate],
    source: &str,
    provider: &dyn UtilityProvider,
    m: usize,
) -> Result<Vec<usize>, DecisionError> {
    Decider::default().filter_support(candidates, source, provider, m)
}

/// Per-run rule configuration applied to whole segments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleConfig {
    pub rule: Rule,
    /// MBR: softmax of candidate logprobs; sMBR: quasi-source weights.
    pub weighted: bool,
    /// sMBR support size, original source included. `None` uses all sources.
    pub k: Option<usize>,
    /// MBR: keep only the top-`m` candidates by QE as supports.
    pub filter_m: Option<usize>,
    pub tie_break: TieBreak,
}

impl RuleConfig {
    pub fn new(rule: Rule) -> Self {
        Self {
            rule,
            weighted: false,
            k: None,
            filter_m: None,
            tie_break: TieBreak::default(),
        }
    }
}

/// The sMBR support list truncated to `k` entries (original first).
pub fn smbr_sources<'a>(segment: &'a Segment, k: Option<usize>, weighted: bool) -> Result<Vec<SupportEntry<'a>>, DecisionError> {
    let mut view = support_view(segment, SupportKind::QuasiSourcesWithOriginal)?;
    if let Some(k) = k {
        if k == 0 || k > view.len() {
            return Err(DecisionError::InsufficientSupport {
                k,
                available: view.len(),
            });
        }
        view.truncate(k);
    }
    if weighted {
        if view.iter().any(|e| e.weight.is_none()) {
            return Err(DecisionError::MissingWeights);
        }
    } else {
        view.iter_mut().for_each(|e| e.weight = None);
    }
    Ok(view)
}

/// Runs one configured rule on a segment.
///
/// `utility` is the rule's provider; `qe` serves support filtering and is
/// only consulted when `filter_m` is set.
pub fn decide_segment(
    segment: &Segment,
    config: &RuleConfig,
    utility: &dyn UtilityProvider,
    qe: Option<&dyn UtilityProvider>,
) -> Result<DecisionResult, DecisionError> {
    let decider = Decider::new(config.tie_break);
    let cands = &segment.candidates;
    match config.rule {
        Rule::Map => decider.map_select(cands),
        Rule::QeRerank => decider.qe_rerank(&segment.source, cands, utility),
        Rule::Smbr => {
            let sources = smbr_sources(segment, config.k, config.weighted)?;
            decider.smbr_select(&sources, cands, utility)
        }
        Rule::MbrNaive | Rule::MbrFast => {
            if cands.is_empty() {
                return Err(DecisionError::EmptyCandidates);
            }
            let support_idx: Vec<usize> = match config.filter_m {
                Some(m) => {
                    let qe = qe.unwrap_or(utility);
                    decider.filter_support(cands, &segment.source, qe, m)?
                }
                None => (0..cands.len()).collect(),
            };
            let supports: Vec<&str> = support_idx.iter().map(|&i| cands[i].text.as_str()).collect();
            let weights = if config.weighted {
                let lps = support_idx
                    .iter()
                    .map(|&i| cands[i].logprob.ok_or(DecisionError::MissingLogprob { index: i }))
                    .collect::<Result<Vec<_>, _>>()?;
                Some(SupportWeights::from_logprobs(&lps)?)
            } else {
                None
            };
            if config.rule == Rule::MbrFast {
                decider.mbr_select_fast(cands, &supports, &segment.source, utility, weights.as_ref())
            } else {
                let context = (utility.shape() == Shape::Factorable).then_some(segment.source.as_str());
                decider.mbr_select_naive(cands, &supports, utility, weights.as_ref(), context)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Provenance, QuasiSource};
    use crate::utility::{BleuUtility, ConstantUtility, LexicalMock, QeMock};

    fn cands(texts: &[&str]) -> Vec<Candidate> {
        texts.iter().map(|t| Candidate::new(*t)).collect()
    }

    fn lp_cands(lps: &[f64]) -> Vec<Candidate> {
        lps.iter().enumerate().map(|(i, &lp)| Candidate::with_logprob(format!("c{i}"), lp)).collect()
    }

    fn entries<'a>(texts: &[&'a str]) -> Vec<SupportEntry<'a>> {
        texts.iter().map(|t| SupportEntry { text: t, weight: None }).collect()
    }

    #[test]
    fn map_argmax_and_ties() {
        assert_eq!(map_select(&lp_cands(&[-1.0, -0.5, -2.0])).unwrap().selected_index, 1);
        assert_eq!(map_select(&lp_cands(&[-3.0])).unwrap().selected_index, 0);
        let tie = map_select(&lp_cands(&[-1.0, -1.0])).unwrap();
        assert_eq!(tie.tied_indices, vec![0, 1]);
        assert_eq!(tie.selected_index, 0);
    }

    #[test]
    fn map_requires_logprobs() {
        let mut c = lp_cands(&[-1.0, -2.0]);
        c[1].logprob = None;
        assert!(matches!(map_select(&c), Err(DecisionError::MissingLogprob { index: 1 })));
        assert!(matches!(map_select(&[]), Err(DecisionError::EmptyCandidates)));
    }

    #[test]
    fn mbr_bleu_three_by_three() {
        // Brute-force row means of the golden BLEU matrix: rows 0 and 1 tie
        // at (d + o) / 3, row 2 scores d / 3.
        let texts = ["a b c", "a b d", "x y z"];
        let r = mbr_select_naive(&cands(&texts), &texts, &BleuUtility::default(), None, None).unwrap();
        assert_eq!(r.tied_indices, vec![0, 1]);
        assert_eq!(r.selected_index, 0);
        assert!((r.scores[0] - 0.43089913901954563).abs() < 1e-12);
        assert!((r.scores[2] - 0.2802988050845715).abs() < 1e-12);
        assert_eq!(r.support_size, 3);
    }

    #[test]
    fn mbr_single_candidate() {
        let r = mbr_select_naive(&cands(&["only"]), &["x", "y"], &QeMock::new(), None, None).unwrap();
        assert_eq!(r.selected_index, 0);
    }

    #[test]
    fn constant_utility_ties_everything() {
        let c = cands(&["a", "b", "c"]);
        let r = mbr_select_naive(&c, &["a", "b", "c"], &ConstantUtility::new(0.7), None, None).unwrap();
        assert_eq!(r.tied_indices, vec![0, 1, 2]);
        assert_eq!(r.selected_index, 0);
    }

    #[test]
    fn fast_equals_naive_on_lexical_instance() {
        let texts = ["a b c", "a b d", "x y z"];
        let c = cands(&texts);
        let lex = LexicalMock::new();
        let naive = mbr_select_naive(&c, &texts, &lex, None, Some("a b e")).unwrap();
        let fast = mbr_select_fast(&c, &texts, "a b e", &lex, None).unwrap();
        for (a, b) in naive.scores.iter().zip(&fast.scores) {
            assert!((a - b).abs() < 1e-9);
        }
        assert_eq!(naive.selected_index, fast.selected_index);
    }

    #[test]
    fn fast_single_identical_support_scores_one() {
        let c = cands(&["a b", "c d e", "f"]);
        let r = mbr_select_fast(&c, &["c d e"], "src", &LexicalMock::new(), None).unwrap();
        assert!((r.scores[1] - 1.0).abs() < 1e-12);
        assert_eq!(r.selected_index, 1);
    }

    #[test]
    fn fast_rejects_joint_provider() {
        let err = mbr_select_fast(&cands(&["a"]), &["a"], "s", &QeMock::new(), None).unwrap_err();
        assert!(matches!(err, DecisionError::Score(ScoreError::ShapeMismatch { .. })));
    }

    #[test]
    fn qe_rerank_examples() {
        let qe = QeMock::new();
        let r = qe_rerank("a b c", &cands(&["a b c", "x y"]), &qe).unwrap();
        assert_eq!(r.scores, vec![1.0, 0.0]);
        assert_eq!(r.selected_index, 0);
        assert_eq!(r.support_size, 1);
        assert_eq!(qe_rerank("a", &cands(&["z"]), &qe).unwrap().selected_index, 0);
        // hand token-F1: 2/3 for both
        let tie = qe_rerank("a b c", &cands(&["a b d", "a c d"]), &qe).unwrap();
        assert!((tie.scores[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(tie.scores[0], tie.scores[1]);
        assert_eq!(tie.tied_indices, vec![0, 1]);
        assert_eq!(tie.selected_index, 0);
    }

    #[test]
    fn qe_rerank_rejects_factorable() {
        assert!(qe_rerank("a", &cands(&["a"]), &LexicalMock::new()).is_err());
    }

    #[test]
    fn smbr_single_original_is_qe_rerank() {
        let qe = QeMock::new();
        let c = cands(&["a b c", "a b", "q r s t"]);
        let s = smbr_select(&entries(&["a b d"]), &c, &qe).unwrap();
        let q = qe_rerank("a b d", &c, &qe).unwrap();
        assert_eq!(s.scores, q.scores);
        assert_eq!(s.selected_index, q.selected_index);
        assert_eq!(s.tied_indices, q.tied_indices);
    }

    #[test]
    fn smbr_weight_normalization_invariance() {
        let qe = QeMock::new();
        let c = cands(&["a b c", "a b e", "z z"]);
        let mk = |w: [f64; 3]| {
            ["a b c", "a b e", "c z"]
                .iter()
                .zip(w)
                .map(|(t, w)| SupportEntry { text: t, weight: Some(w) })
                .collect::<Vec<_>>()
        };
        let a = smbr_select(&mk([2.0, 1.0, 1.0]), &c, &qe).unwrap();
        let b = smbr_select(&mk([0.5, 0.25, 0.25]), &c, &qe).unwrap();
        assert_eq!(a.scores, b.scores);
        assert!(a.weighted);
    }

    #[test]
    fn smbr_golden_uniform() {
        // Token F1 by hand: "a b c" vs sources {1, 2/3}, "a b e" vs {2/3, 1},
        // "z z" vs {0, 0}; uniform mean.
        let r = smbr_select(&entries(&["a b c", "a b e"]), &cands(&["a b c", "a b e", "z z"]), &QeMock::new()).unwrap();
        let golden = [0.8333333333333333, 0.8333333333333333, 0.0];
        for (s, g) in r.scores.iter().zip(golden) {
            assert!((s - g).abs() < 1e-12);
        }
        assert_eq!(r.tied_indices, vec![0, 1]);
        assert!(!r.weighted);
    }

    #[test]
    fn smbr_rejects_negative_and_mixed_weights() {
        let c = cands(&["a"]);
        let neg = [SupportEntry { text: "a", weight: Some(-1.0) }];
        assert!(matches!(smbr_select(&neg, &c, &QeMock::new()), Err(DecisionError::InvalidWeight { .. })));
        let mixed = [SupportEntry { text: "a", weight: Some(1.0) }, SupportEntry { text: "b", weight: None }];
        assert!(matches!(smbr_select(&mixed, &c, &QeMock::new()), Err(DecisionError::MixedWeights)));
    }

    #[test]
    fn filter_support_examples() {
        let qe = QeMock::new();
        // F1 vs "a b c d" by hand: 1/3, 1, 1/2, 3/4
        let c = cands(&["a x", "a b c d", "a b y z", "a b c q"]);
        assert_eq!(filter_support(&c, "a b c d", &qe, 2).unwrap(), vec![1, 3]);
        assert_eq!(filter_support(&c, "a b c d", &qe, 4).unwrap(), vec![1, 3, 2, 0]);
        let top = filter_support(&c, "a b c d", &qe, 1).unwrap();
        assert_eq!(top, vec![qe_rerank("a b c d", &c, &qe).unwrap().selected_index]);
        assert!(matches!(filter_support(&c, "a", &qe, 5), Err(DecisionError::FilterSize { .. })));
    }

    #[test]
    fn filter_ties_keep_lower_index() {
        let c = cands(&["a b d", "a c d", "a b c"]);
        assert_eq!(filter_support(&c, "a b c", &QeMock::new(), 3).unwrap(), vec![2, 0, 1]);
    }

    #[test]
    fn empty_candidates_rejected_everywhere() {
        let qe = QeMock::new();
        assert!(matches!(mbr_select_naive(&[], &["a"], &qe, None, None), Err(DecisionError::EmptyCandidates)));
        assert!(matches!(qe_rerank("a", &[], &qe), Err(DecisionError::EmptyCandidates)));
        assert!(matches!(smbr_select(&entries(&["a"]), &[], &qe), Err(DecisionError::EmptyCandidates)));
        assert!(matches!(
            mbr_select_fast(&[], &["a"], "s", &LexicalMock::new(), None),
            Err(DecisionError::EmptyCandidates)
        ));
    }

    #[test]
    fn weight_length_checked() {
        let w = SupportWeights::uniform(2);
        let err = mbr_select_naive(&cands(&["a"]), &["a", "b", "c"], &QeMock::new(), Some(&w), None).unwrap_err();
        assert!(matches!(err, DecisionError::WeightLength { expected: 3, found: 2 }));
    }

    #[test]
    fn support_weights_sum_to_one() {
        let w = SupportWeights::from_logprobs(&[-1.0, -2.0, -0.5]).unwrap();
        assert!((w.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let u = SupportWeights::uniform(4);
        assert_eq!(u.as_slice(), &[0.25; 4]);
        assert!(matches!(SupportWeights::from_raw(&[0.0, 0.0]), Err(DecisionError::ZeroWeightMass)));
    }

    #[test]
    fn highest_logprob_tie_break() {
        let mut c = lp_cands(&[-3.0, -1.0, -2.0]);
        c.iter_mut().for_each(|c| c.text = "same".into());
        let d = Decider::new(TieBreak::HighestLogprob);
        let r = d.qe_rerank("same", &c, &QeMock::new()).unwrap();
        assert_eq!(r.tied_indices, vec![0, 1, 2]);
        assert_eq!(r.selected_index, 1);
        assert_eq!(qe_rerank("same", &c, &QeMock::new()).unwrap().selected_index, 0);
    }

    fn segment() -> Segment {
        Segment {
            id: "s".into(),
            source: "a b c".into(),
            candidates: vec![
                Candidate::with_logprob("a b c", -2.0),
                Candidate::with_logprob("a b e", -0.5),
                Candidate::with_logprob("z z", -1.0),
            ],
            quasi_sources: vec![
                QuasiSource::weighted("a b e", Provenance::Pp, 3.0),
                QuasiSource::weighted("a b e f", Provenance::Bt, 1.0),
            ],
            references: vec![],
        }
    }

    #[test]
    fn decide_segment_smbr_k1_matches_qe() {
        let seg = segment();
        let qe = QeMock::new();
        let mut cfg = RuleConfig::new(Rule::Smbr);
        cfg.k = Some(1);
        let s = decide_segment(&seg, &cfg, &qe, None).unwrap();
        let q = decide_segment(&seg, &RuleConfig::new(Rule::QeRerank), &qe, None).unwrap();
        assert_eq!(s.scores, q.scores);
        assert_eq!(s.selected_index, q.selected_index);
    }

    #[test]
    fn decide_segment_weighted_smbr_uses_synthesized_original_weight() {
        let seg = segment();
        let mut cfg = RuleConfig::new(Rule::Smbr);
        cfg.weighted = true;
        let r = decide_segment(&seg, &cfg, &QeMock::new(), None).unwrap();
        // raw weights [3 (original = max), 3, 1] normalized to [3/7, 3/7, 1/7]
        let u = |s: &str, c: &str| crate::utility::token_f1(s, c);
        let expected = 3.0 / 7.0 * u("a b c", "a b e") + 3.0 / 7.0 * u("a b e", "a b e") + 1.0 / 7.0 * u("a b e f", "a b e");
        assert!((r.scores[1] - expected).abs() < 1e-12);
        assert!(r.weighted);
    }

    #[test]
    fn decide_segment_k_too_large() {
        let mut cfg = RuleConfig::new(Rule::Smbr);
        cfg.k = Some(4);
        assert!(matches!(
            decide_segment(&segment(), &cfg, &QeMock::new(), None),
            Err(DecisionError::InsufficientSupport { k: 4, available: 3 })
        ));
    }

    #[test]
    fn decide_segment_weighted_mbr_uses_softmax() {
        let seg = segment();
        let mut cfg = RuleConfig::new(Rule::MbrNaive);
        cfg.weighted = true;
        let r = decide_segment(&seg, &cfg, &QeMock::new(), None).unwrap();
        let w = SupportWeights::from_logprobs(&[-2.0, -0.5, -1.0]).unwrap();
        let texts = seg.candidate_texts();
        let direct = mbr_select_naive(&seg.candidates, &texts, &QeMock::new(), Some(&w), None).unwrap();
        assert_eq!(r.scores, direct.scores);
    }

    #[test]
    fn decide_segment_filtered_mbr() {
        let seg = segment();
        let mut cfg = RuleConfig::new(Rule::MbrNaive);
        cfg.filter_m = Some(2);
        let qe = QeMock::new();
        let r = decide_segment(&seg, &cfg, &BleuUtility::default(), Some(&qe)).unwrap();
        assert_eq!(r.support_size, 2);
    }
}
