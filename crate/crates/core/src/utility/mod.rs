//! The utility function `u(support, hypothesis)` shared by every decision
//! rule.
//!
//! Providers come in two shapes. A *joint* provider scores a (left, right)
//! text pair in one opaque step, the way a QE model reads a concatenated
//! source and hypothesis. A *factorable* provider splits the work into a
//! per-sentence embedding plus a cheap estimator over
//! `(source, support, hypothesis)` embedding triples, which lets MBR embed
//! every distinct sentence once.

mod matrix;
mod mocks;
mod pointwise;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use matrix::{build_utility_matrix, UtilityMatrix};
pub use mocks::{fnv1a64, lexical_embedding, token_f1, BleuUtility, ConstantUtility, LexicalMock, QeMock, LEXICAL_DIM};
pub use pointwise::PointwiseView;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Factorable,
    Joint,
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Shape::Factorable => "factorable",
            Shape::Joint => "joint",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderCapabilities {
    pub name: String,
    pub shape: Shape,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_dim: Option<usize>,
    pub deterministic: bool,
}

impl ProviderCapabilities {
    pub fn joint(name: impl Into<String>, deterministic: bool) -> Self {
        Self {
            name: name.into(),
            shape: Shape::Joint,
            embedding_dim: None,
            deterministic,
        }
    }

    pub fn factorable(name: impl Into<String>, embedding_dim: usize, deterministic: bool) -> Self {
        Self {
            name: name.into(),
            shape: Shape::Factorable,
            embedding_dim: Some(embedding_dim),
            deterministic,
        }
    }

    /// `embedding_dim` is present (and positive) exactly for factorable providers.
    pub fn validate(&self) -> Result<(), String> {
        match (self.shape, self.embedding_dim) {
            (Shape::Factorable, Some(d)) if d > 0 => Ok(()),
            (Shape::Factorable, Some(_)) => Err("embedding_dim must be positive".into()),
            (Shape::Factorable, None) => Err("factorable provider must declare embedding_dim".into()),
            (Shape::Joint, Some(_)) => Err("joint provider must not declare embedding_dim".into()),
            (Shape::Joint, None) => Ok(()),
        }
    }
}

/// Fixed-length sentence embedding with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self, ScoreError> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(ScoreError::NonFinite { index: i });
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Cosine similarity; 0 when either vector is zero.
    pub fn cosine(&self, other: &Embedding) -> f64 {
        let (na, nb) = (self.norm(), other.norm());
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        let dot: f64 = self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum();
        dot / (na * nb)
    }
}

/// `(source, support, hypothesis)` embeddings; order matters to the estimator.
pub type Triple<'a> = (&'a Embedding, &'a Embedding, &'a Embedding);

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ScoreError {
    #[error("provider {provider} is {actual}, but {op} requires a {required} provider")]
    ShapeMismatch {
        provider: String,
        op: &'static str,
        actual: Shape,
        required: Shape,
    },
    #[error("embedding dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("scoring failed at item {index}: {message}")]
    Failed { index: usize, message: String },
    #[error("non-finite value at item {index}")]
    NonFinite { index: usize },
    #[error("expected {expected} results, got {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("at matrix cell ({row}, {col}): {source}")]
    AtCell {
        row: usize,
        col: usize,
        #[source]
        source: Box<ScoreError>,
    },
    #[error("scorer error: {0}")]
    Remote(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("scorer did not answer within {0:?}")]
    Timeout(std::time::Duration),
}

impl ScoreError {
    pub fn shape(provider: &ProviderCapabilities, op: &'static str, required: Shape) -> Self {
        ScoreError::ShapeMismatch {
            provider: provider.name.clone(),
            op,
            actual: provider.shape,
            required,
        }
    }

    /// True for failures of the scorer or its transport, as opposed to
    /// invalid requests.
    pub fn is_scorer_failure(&self) -> bool {
        match self {
            ScoreError::Remote(_)
            | ScoreError::Transport(_)
            | ScoreError::Protocol(_)
            | ScoreError::Timeout(_)
            | ScoreError::Failed { .. }
            | ScoreError::NonFinite { .. }
            | ScoreError::LengthMismatch { .. } => true,
            ScoreError::AtCell { source, .. } => source.is_scorer_failure(),
            _ => false,
        }
    }
}

/// Contract every utility source implements, in-process or remote.
///
/// Implementations must be safe for concurrent calls and must return results
/// in input order. Scores are "higher is better".
pub trait UtilityProvider: Send + Sync {
    fn capabilities(&self) -> &ProviderCapabilities;

    /// One score per `(left, right)` pair. For MBR `left` is the support and
    /// `right` the hypothesis; for QE `left` is the source.
    fn score_pairs(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScoreError>;

    fn embed(&self, _texts: &[&str]) -> Result<Vec<Embedding>, ScoreError> {
        Err(ScoreError::shape(self.capabilities(), "embed", Shape::Factorable))
    }

    fn estimate(&self, _triples: &[Triple<'_>]) -> Result<Vec<f64>, ScoreError> {
        Err(ScoreError::shape(self.capabilities(), "estimate", Shape::Factorable))
    }

    fn shape(&self) -> Shape {
        self.capabilities().shape
    }
}

macro_rules! forward_provider {
    ($ty:ty) => {
        impl<P: UtilityProvider + ?Sized> UtilityProvider for $ty {
            fn capabilities(&self) -> &ProviderCapabilities {
                (**self).capabilities()
            }
            fn score_pairs(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScoreError> {
                (**self).score_pairs(pairs)
            }
            fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding>, ScoreError> {
                (**self).embed(texts)
            }
            fn estimate(&self, triples: &[Triple<'_>]) -> Result<Vec<f64>, ScoreError> {
                (**self).estimate(triples)
            }
        }
    };
}

forward_provider!(&P);
forward_provider!(Box<P>);
forward_provider!(Arc<P>);

/// Checks that `provider` has the required shape for `op`.
pub fn require_shape(provider: &dyn UtilityProvider, op: &'static str, required: Shape) -> Result<(), ScoreError> {
    if provider.shape() == required {
        Ok(())
    } else {
        Err(ScoreError::shape(provider.capabilities(), op, required))
    }
}

pub(crate) fn check_dims(expected: usize, triples: &[Triple<'_>]) -> Result<(), ScoreError> {
    for (s, h, c) in triples {
        for e in [s, h, c] {
            if e.dim() != expected {
                return Err(ScoreError::DimensionMismatch {
                    expected,
                    found: e.dim(),
                });
            }
        }
    }
    Ok(())
}
