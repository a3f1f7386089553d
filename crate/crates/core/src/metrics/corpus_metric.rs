use super::bleu::{bleu_stats, score_from_stats, sentence_bleu, BleuError, BleuStats, Smoothing};
use super::tokenize::{tokenize, TokenSequence, TokenizeMode};
use super::DEFAULT_MAX_N;

/// A corpus-level metric expressed through additive per-segment statistics.
///
/// Any resampled corpus is scored by summing the statistics of its segments
/// (in resample order) and calling [`CorpusMetric::finalize`], which is a
/// full recomputation of the metric on that corpus.
pub trait CorpusMetric: Send + Sync {
    fn name(&self) -> String;

    fn segment_stats(&self, hyp: &str, refs: &[String]) -> Result<Vec<f64>, BleuError>;

    fn finalize(&self, totals: &[f64]) -> f64;

    fn score(&self, hyps: &[&str], refs: &[Vec<String>]) -> Result<f64, BleuError> {
        if hyps.is_empty() {
            return Err(BleuError::EmptyCorpus);
        }
        if hyps.len() != refs.len() {
            return Err(BleuError::LengthMismatch {
                hyps: hyps.len(),
                refs: refs.len(),
            });
        }
        let mut totals: Vec<f64> = Vec::new();
        for (h, r) in hyps.iter().zip(refs) {
            let stats = self.segment_stats(h, r)?;
            if totals.is_empty() {
                totals = stats;
            } else {
                totals.iter_mut().zip(&stats).for_each(|(a, b)| *a += b);
            }
        }
        Ok(self.finalize(&totals))
    }
}

fn tokenize_refs(refs: &[String], mode: TokenizeMode) -> Vec<TokenSequence> {
    refs.iter().map(|r| tokenize(r, mode)).collect()
}

/// Corpus BLEU without smoothing, in [0, 1].
#[derive(Debug, Clone, Copy)]
pub struct CorpusBleu {
    pub mode: TokenizeMode,
    pub max_n: usize,
}

impl Default for CorpusBleu {
    fn default() -> Self {
        Self {
            mode: TokenizeMode::Intl,
            max_n: DEFAULT_MAX_N,
        }
    }
}

impl CorpusMetric for CorpusBleu {
    fn name(&self) -> String {
        "corpus_bleu".into()
    }

    /// Layout: matches[0..n], totals[0..n], hyp_len, ref_len.
    fn segment_stats(&self, hyp: &str, refs: &[String]) -> Result<Vec<f64>, BleuError> {
        let s = bleu_stats(&tokenize(hyp, self.mode), &tokenize_refs(refs, self.mode), self.max_n)?;
        let mut out: Vec<f64> = s.matches.iter().map(|&m| m as f64).collect();
        out.extend(s.totals.iter().map(|&t| t as f64));
        out.push(s.hyp_len as f64);
        out.push(s.ref_len as f64);
        Ok(out)
    }

    fn finalize(&self, totals: &[f64]) -> f64 {
        let n = self.max_n;
        let stats = BleuStats {
            matches: totals[..n].iter().map(|&v| v as u64).collect(),
            totals: totals[n..2 * n].iter().map(|&v| v as u64).collect(),
            hyp_len: totals[2 * n] as usize,
            ref_len: totals[2 * n + 1] as usize,
        };
        score_from_stats(&stats, Smoothing::None).value
    }
}

/// Mean of exp-decay-smoothed sentence BLEU, in [0, 1].
#[derive(Debug, Clone, Copy)]
pub struct MeanSentenceBleu {
    pub mode: TokenizeMode,
    pub max_n: usize,
}

impl Default for MeanSentenceBleu {
    fn default() -> Self {
        Self {
            mode: TokenizeMode::Intl,
            max_n: DEFAULT_MAX_N,
        }
    }
}

impl CorpusMetric for MeanSentenceBleu {
    fn name(&self) -> String {
        "mean_sentence_bleu".into()
    }

    fn segment_stats(&self, hyp: &str, refs: &[String]) -> Result<Vec<f64>, BleuError> {
        let s = sentence_bleu(
            &tokenize(hyp, self.mode),
            &tokenize_refs(refs, self.mode),
            self.max_n,
            Smoothing::ExpDecay,
        )?;
        Ok(vec![s.value, 1.0])
    }

    fn finalize(&self, totals: &[f64]) -> f64 {
        totals[0] / totals[1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::corpus_bleu;

    #[test]
    fn corpus_bleu_metric_matches_direct_computation() {
        let hyps = ["the cat sat on the mat", "a b c d e"];
        let refs = vec![vec!["the cat is on the mat".to_string()], vec!["a b c d f".to_string()]];
        let via_metric = CorpusBleu::default().score(&hyps, &refs).unwrap();
        let pairs: Vec<_> = hyps
            .iter()
            .zip(&refs)
            .map(|(h, r)| (tokenize(h, TokenizeMode::Intl), tokenize_refs(r, TokenizeMode::Intl)))
            .collect();
        let direct = corpus_bleu(&pairs, 4, Smoothing::None).unwrap().value;
        assert_eq!(via_metric, direct);
    }

    #[test]
    fn mean_sentence_bleu_averages() {
        let hyps = ["a b c d", "x y"];
        let refs = vec![vec!["a b c d".to_string()], vec!["p q".to_string()]];
        assert_eq!(MeanSentenceBleu::default().score(&hyps, &refs).unwrap(), 0.5);
    }

    #[test]
    fn missing_references_error() {
        let refs = vec![vec![]];
        assert!(CorpusBleu::default().score(&["a"], &refs).is_err());
    }
}
