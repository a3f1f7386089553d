//! Surface metrics: tokenization, BLEU, Self-BLEU and corpus-level metric
//! adapters used by evaluation, significance testing and analysis.

mod bleu;
mod corpus_metric;
mod tokenize;

pub use bleu::{
    bleu_stats, corpus_bleu, score_from_stats, self_bleu, sentence_bleu, BleuError, BleuScore, BleuStats, Smoothing,
};
pub use corpus_metric::{CorpusBleu, CorpusMetric, MeanSentenceBleu};
pub use tokenize::{tokenize, TokenSequence, TokenizeMode};

/// Highest n-gram order used throughout unless configured otherwise.
pub const DEFAULT_MAX_N: usize = 4;
