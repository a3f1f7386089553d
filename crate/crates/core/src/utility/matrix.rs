use indexmap::IndexSet;

use super::{ScoreError, Shape, UtilityProvider};

/// `rows × cols` table with entry `(i, j) = u(supports[j], candidates[i])`.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    /// Indices into the candidate list.
    pub row_labels: Vec<usize>,
    /// Indices into the support list.
    pub col_labels: Vec<usize>,
}

impl UtilityMatrix {
    pub fn from_rows(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self, ScoreError> {
        if values.len() != rows * cols {
            return Err(ScoreError::LengthMismatch {
                expected: rows * cols,
                found: values.len(),
            });
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(ScoreError::AtCell {
                row: k / cols,
                col: k % cols,
                source: Box::new(ScoreError::NonFinite { index: k }),
            });
        }
        Ok(Self {
            rows,
            cols,
            values,
            row_labels: (0..rows).collect(),
            col_labels: (0..cols).collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Entries mapped through `f`, e.g. an affine rescaling.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }
}

fn locate(err: ScoreError, cols: usize) -> ScoreError {
    match err {
        ScoreError::Failed { index, .. } | ScoreError::NonFinite { index } => ScoreError::AtCell {
            row: index / cols,
            col: index % cols,
            source: Box::new(err),
        },
        other => other,
    }
}

/// Builds the full utility table.
///
/// Joint providers get one `score_pairs` batch over every
/// `(supports[j], candidates[i])`. Factorable providers embed each distinct
/// text exactly once and estimate `(context, support, candidate)` triples;
/// without a context source the support fills the source slot, which keeps
/// every entry bit-identical to the provider's own `score_pairs`.
pub fn build_utility_matrix(
    provider: &dyn UtilityProvider,
    candidates: &[&str],
    supports: &[&str],
    context_source: Option<&str>,
) -> Result<UtilityMatrix, ScoreError> {
    if candidates.is_empty() || supports.is_empty() {
        return Err(ScoreError::EmptyBatch);
    }
    let (rows, cols) = (candidates.len(), supports.len());
    let values = match provider.shape() {
        Shape::Joint => {
            let pairs: Vec<(&str, &str)> = candidates
                .iter()
                .flat_map(|&c| supports.iter().map(move |&s| (s, c)))
                .collect();
            let scores = provider.score_pairs(&pairs).map_err(|e| locate(e, cols))?;
            if scores.len() != pairs.len() {
                return Err(ScoreError::LengthMismatch {
                    expected: pairs.len(),
                    found: scores.len(),
                });
            }
            scores
        }
        Shape::Factorable => {
            let mut distinct: IndexSet<&str> = IndexSet::new();
            if let Some(src) = context_source {
                distinct.insert(src);
            }
            distinct.extend(supports.iter().copied());
            distinct.extend(candidates.iter().copied());
            let texts: Vec<&str> = distinct.iter().copied().collect();
            let embs = provider.embed(&texts)?;
            if embs.len() != texts.len() {
                return Err(ScoreError::LengthMismatch {
                    expected: texts.len(),
                    found: embs.len(),
                });
            }
            let idx = |t: &str| distinct.get_index_of(t).expect("text was inserted");
            let src = context_source.map(|s| &embs[idx(s)]);
            let support_embs: Vec<_> = supports.iter().map(|s| &embs[idx(s)]).collect();
            let mut triples = Vec::with_capacity(rows * cols);
            for c in candidates {
                let hyp = &embs[idx(c)];
                for s in &support_embs {
                    triples.push((src.unwrap_or(s), *s, hyp));
                }
            }
            let scores = provider.estimate(&triples).map_err(|e| locate(e, cols))?;
            if scores.len() != triples.len() {
                return Err(ScoreError::LengthMismatch {
                    expected: triples.len(),
                    found: scores.len(),
                });
            }
            scores
        }
    };
    UtilityMatrix::from_rows(rows, cols, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::utility::{BleuUtility, Embedding, LexicalMock, QeMock};

    #[test]
    fn one_by_one_identity() {
        let m = build_utility_matrix(&QeMock::new(), &["a b"], &["a b"], None).unwrap();
        assert_eq!(m.values(), &[1.0]);
    }

    #[test]
    fn entries_match_pointwise_calls() {
        let qe = QeMock::new();
        let cands = ["a b c", "b c d"];
        let sups = ["a", "a b", "c d e"];
        let m = build_utility_matrix(&qe, &cands, &sups, None).unwrap();
        assert_eq!((m.rows(), m.cols()), (2, 3));
        for (i, c) in cands.iter().enumerate() {
            for (j, s) in sups.iter().enumerate() {
                let direct = qe.score_pairs(&[(s, c)]).unwrap()[0];
                assert_eq!(m.get(i, j).to_bits(), direct.to_bits());
            }
        }
    }

    #[test]
    fn factorable_entries_match_pointwise() {
        let lex = LexicalMock::new();
        let cands = ["a b c", "b c d e", "x"];
        let sups = ["a b", "c d e", "x y"];
        let m = build_utility_matrix(&lex, &cands, &sups, None).unwrap();
        for (i, c) in cands.iter().enumerate() {
            for (j, s) in sups.iter().enumerate() {
                assert_eq!(m.get(i, j).to_bits(), lex.score_pairs(&[(s, c)]).unwrap()[0].to_bits());
            }
        }
        let with_src = build_utility_matrix(&lex, &cands, &sups, Some("src text")).unwrap();
        let e = lex.embed(&["src text", sups[1], cands[0]]).unwrap();
        let direct = lex.estimate(&[(&e[0], &e[1], &e[2])]).unwrap()[0];
        assert_eq!(with_src.get(0, 1).to_bits(), direct.to_bits());
    }

    #[test]
    fn bleu_matrix_golden() {
        // u(s_j, c_i) by hand: identical 3-token sentences score 1 * (1/2)^{1/4}
        // after exp-decay; two shared tokens score (2/3 * 1/2 * 1/2 * 1/4)^{1/4}.
        let texts = ["a b c", "a b d", "x y z"];
        let m = build_utility_matrix(&BleuUtility::default(), &texts, &texts, None).unwrap();
        let diag = 0.8408964152537145;
        let off = 0.45180100180492244;
        let golden = [[diag, off, 0.0], [off, diag, 0.0], [0.0, 0.0, diag]];
        for (i, row) in golden.iter().enumerate() {
            for (j, want) in row.iter().enumerate() {
                assert!((m.get(i, j) - want).abs() < 1e-12, "({i},{j})");
            }
        }
        assert!((diag - 0.5f64.powf(0.25)).abs() < 1e-15);
        assert!((off - (2.0f64 / 3.0 * 0.5 * 0.5 * 0.25).powf(0.25)).abs() < 1e-15);
    }

    #[test]
    fn empty_inputs_rejected() {
        assert_eq!(build_utility_matrix(&QeMock::new(), &[], &["a"], None), Err(ScoreError::EmptyBatch));
        assert_eq!(build_utility_matrix(&QeMock::new(), &["a"], &[], None), Err(ScoreError::EmptyBatch));
    }

    struct FailsAt(usize);

    impl UtilityProvider for FailsAt {
        fn capabilities(&self) -> &crate::utility::ProviderCapabilities {
            static CAPS: std::sync::OnceLock<crate::utility::ProviderCapabilities> = std::sync::OnceLock::new();
            CAPS.get_or_init(|| crate::utility::ProviderCapabilities::joint("fails", true))
        }
        fn score_pairs(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScoreError> {
            if pairs.len() > self.0 {
                Err(ScoreError::Failed {
                    index: self.0,
                    message: "boom".into(),
                })
            } else {
                Ok(vec![0.0; pairs.len()])
            }
        }
    }

    #[test]
    fn failures_carry_coordinates() {
        let err = build_utility_matrix(&FailsAt(4), &["a", "b"], &["x", "y", "z"], None).unwrap_err();
        assert!(matches!(err, ScoreError::AtCell { row: 1, col: 1, .. }), "{err}");
    }

    #[test]
    fn non_finite_entries_rejected() {
        assert!(UtilityMatrix::from_rows(1, 2, vec![0.0, f64::NAN]).is_err());
        let _ = Embedding::new(vec![0.0]).unwrap();
    }
}
