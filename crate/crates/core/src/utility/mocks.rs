//! Deterministic in-process providers. Their arithmetic is fixed so that an
//! external scorer can reproduce it bit-for-bit.

use super::{check_dims, Embedding, ProviderCapabilities, ScoreError, Triple, UtilityProvider};
use crate::metrics::{sentence_bleu, tokenize, Smoothing, TokenizeMode, DEFAULT_MAX_N};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub const LEXICAL_DIM: usize = 256;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// L2-normalized signed bag of hashed whitespace tokens.
///
/// Bucket is `hash % dim`, sign is negative when bit 63 of the hash is set.
/// Empty text (or a bag whose buckets cancel exactly) yields the zero vector.
pub fn lexical_embedding(text: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for token in text.split_whitespace() {
        let h = fnv1a64(token.as_bytes());
        v[(h % dim as u64) as usize] += if h >> 63 == 1 { -1.0 } else { 1.0 };
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Token-level F1 over whitespace tokens with multiset overlap,
/// `2 * overlap / (|a| + |b|)`. Two empty texts score 1.
pub fn token_f1(a: &str, b: &str) -> f64 {
    let mut ta: Vec<&str> = a.split_whitespace().collect();
    let mut tb: Vec<&str> = b.split_whitespace().collect();
    match (ta.is_empty(), tb.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    ta.sort_unstable();
    tb.sort_unstable();
    let (mut i, mut j, mut overlap) = (0, 0, 0usize);
    while i < ta.len() && j < tb.len() {
        match ta[i].cmp(tb[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                overlap += 1;
                i += 1;
                j += 1;
            }
        }
    }
    2.0 * overlap as f64 / (ta.len() + tb.len()) as f64
}

/// Factorable mock: hashed bag-of-tokens embeddings, cosine estimator that
/// ignores the source slot.
#[derive(Debug, Clone)]
pub struct LexicalMock {
    caps: ProviderCapabilities,
}

impl LexicalMock {
    pub fn new() -> Self {
        Self::with_dim(LEXICAL_DIM)
    }

    pub fn with_dim(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self {
            caps: ProviderCapabilities::factorable("lexical-mock", dim, true),
        }
    }

    fn dim(&self) -> usize {
        self.caps.embedding_dim.unwrap_or(LEXICAL_DIM)
    }
}

impl Default for LexicalMock {
    fn default() -> Self {
        Self::new()
    }
}

impl UtilityProvider for LexicalMock {
    fn capabilities(&self) -> &ProviderCapabilities {
        &self.caps
    }

    /// Mock-only convenience: the left text fills both source and support slots.
    fn score_pairs(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScoreError> {
        pairs
            .iter()
            .map(|(left, right)| {
                let embs = self.embed(&[left, left, right])?;
                Ok(self.estimate(&[(&embs[0], &embs[1], &embs[2])])?[0])
            })
            .collect()
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding>, ScoreError> {
        texts
            .iter()
            .map(|t| Embedding::new(lexical_embedding(t, self.dim())))
            .collect()
    }

    fn estimate(&self, triples: &[Triple<'_>]) -> Result<Vec<f64>, ScoreError> {
        check_dims(self.dim(), triples)?;
        Ok(triples.iter().map(|(_, support, hyp)| support.cosine(hyp)).collect())
    }
}

/// Joint mock: token F1 between the two texts.
#[derive(Debug, Clone)]
pub struct QeMock {
    caps: ProviderCapabilities,
}

impl QeMock {
    pub fn new() -> Self {
        Self {
            caps: ProviderCapabilities::joint("qe-mock", true),
        }
    }
}

impl Default for QeMock {
    fn default() -> Self {
        Self::new()
    }
}

impl UtilityProvider for QeMock {
    fn capabilities(&self) -> &ProviderCapabilities {
        &self.caps
    }

    fn score_pairs(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScoreError> {
        Ok(pairs.iter().map(|(a, b)| token_f1(a, b)).collect())
    }
}

/// Joint surface-metric utility: `u(support, hyp) = BLEU(hyp, [support])`
/// with exp-decay smoothing.
#[derive(Debug, Clone)]
pub struct BleuUtility {
    caps: ProviderCapabilities,
    mode: TokenizeMode,
}

impl BleuUtility {
    pub fn new(mode: TokenizeMode) -> Self {
        Self {
            caps: ProviderCapabilities::joint("bleu-utility", true),
            mode,
        }
    }
}

impl Default for BleuUtility {
    fn default() -> Self {
        Self::new(TokenizeMode::Intl)
    }
}

impl UtilityProvider for BleuUtility {
    fn capabilities(&self) -> &ProviderCapabilities {
        &self.caps
    }

    fn score_pairs(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScoreError> {
        pairs
            .iter()
            .enumerate()
            .map(|(index, (support, hyp))| {
                let refs = [tokenize(support, self.mode)];
                sentence_bleu(&tokenize(hyp, self.mode), &refs, DEFAULT_MAX_N, Smoothing::ExpDecay)
                    .map(|s| s.value)
                    .map_err(|e| ScoreError::Failed {
                        index,
                        message: e.to_string(),
                    })
            })
            .collect()
    }
}

/// Joint provider returning the same score for every pair.
#[derive(Debug, Clone)]
pub struct ConstantUtility {
    caps: ProviderCapabilities,
    value: f64,
}

impl ConstantUtility {
    pub fn new(value: f64) -> Self {
        Self {
            caps: ProviderCapabilities::joint("constant", true),
            value,
        }
    }
}

impl UtilityProvider for ConstantUtility {
    fn capabilities(&self) -> &ProviderCapabilities {
        &self.caps
    }

    fn score_pairs(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScoreError> {
        Ok(vec![self.value; pairs.len()])
    }
}
