use super::{ProviderCapabilities, ScoreError, Shape, UtilityProvider};

/// Presents a factorable provider as a joint one by recomputing all three
/// embeddings for every scored pair, the cost profile of an MBR
/// implementation without an embedding cache.
///
/// `score_pairs((support, hyp))` is `estimate(embed(source), embed(support),
/// embed(hyp))`, where `source` is the fixed context passed at construction
/// or, absent one, the support itself.
pub struct PointwiseView<P> {
    inner: P,
    context_source: Option<String>,
    caps: ProviderCapabilities,
}

impl<P: UtilityProvider> PointwiseView<P> {
    pub fn new(inner: P, context_source: Option<String>) -> Result<Self, ScoreError> {
        if inner.shape() != Shape::Factorable {
            return Err(ScoreError::shape(inner.capabilities(), "pointwise view", Shape::Factorable));
        }
        let caps = ProviderCapabilities::joint(
            format!("{}-pointwise", inner.capabilities().name),
            inner.capabilities().deterministic,
        );
        Ok(Self {
            inner,
            context_source,
            caps,
        })
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }
}

impl<P: UtilityProvider> UtilityProvider for PointwiseView<P> {
    fn capabilities(&self) -> &ProviderCapabilities {
        &self.caps
    }

    fn score_pairs(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScoreError> {
        pairs
            .iter()
            .enumerate()
            .map(|(index, &(support, hyp))| {
                let src = self.context_source.as_deref().unwrap_or(support);
                let embs = self.inner.embed(&[src, support, hyp])?;
                if embs.len() != 3 {
                    return Err(ScoreError::LengthMismatch {
                        expected: 3,
                        found: embs.len(),
                    });
                }
                let score = self.inner.estimate(&[(&embs[0], &embs[1], &embs[2])])?;
                score.first().copied().ok_or(ScoreError::Failed {
                    index,
                    message: "estimator returned no score".into(),
                })
            })
            .collect()
    }
}
