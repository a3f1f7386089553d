use mbrkit_core::bench::CountingProvider;
use mbrkit_core::corpus::SupportEntry;
use mbrkit_core::decision::{
    argmax_set, mbr_select_fast, mbr_select_naive, qe_rerank, smbr_select, SupportWeights, TIE_TOLERANCE,
};
use mbrkit_core::utility::{LexicalMock, ProviderCapabilities, QeMock, ScoreError, UtilityProvider};
use mbrkit_core::Candidate;
use proptest::prelude::*;

/// `a * inner + b`, a > 0.
struct Affine<P> {
    inner: P,
    a: f64,
    b: f64,
}

impl<P: UtilityProvider> UtilityProvider for Affine<P> {
    fn capabilities(&self) -> &ProviderCapabilities {
        self.inner.capabilities()
    }
    fn score_pairs(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScoreError> {
        Ok(self.inner.score_pairs(pairs)?.into_iter().map(|u| self.a * u + self.b).collect())
    }
}

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e", "f", "the", "cat"]), 0..7).prop_map(|w| w.join(" "))
}

fn candidates(max: usize) -> impl Strategy<Value = Vec<Candidate>> {
    prop::collection::vec((sentence(), -20.0f64..0.0), 1..max)
        .prop_map(|v| v.into_iter().map(|(t, lp)| Candidate::with_logprob(t, lp)).collect())
}

fn texts(c: &[Candidate]) -> Vec<&str> {
    c.iter().map(|c| c.text.as_str()).collect()
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

/// Gap between the best and second-best distinct score.
fn top_gap(scores: &[f64]) -> f64 {
    let mut s = scores.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    s.windows(2).map(|w| w[0] - w[1]).find(|g| *g > TIE_TOLERANCE).unwrap_or(f64::INFINITY)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn smbr_with_only_the_original_is_qe_rerank(src in sentence(), cands in candidates(16)) {
        let qe = QeMock::new();
        let s = smbr_select(&[SupportEntry { text: &src, weight: None }], &cands, &qe).unwrap();
        let q = qe_rerank(&src, &cands, &qe).unwrap();
        prop_assert_eq!(bits(&s.scores), bits(&q.scores));
        prop_assert_eq!(s.selected_index, q.selected_index);
        prop_assert_eq!(s.tied_indices, q.tied_indices);
    }

    #[test]
    fn fast_matches_naive(src in sentence(), cands in candidates(12), extra in prop::collection::vec(sentence(), 0..4), weighted in any::<bool>()) {
        let lex = LexicalMock::new();
        let mut supports = texts(&cands);
        supports.extend(extra.iter().map(String::as_str));
        let w = weighted.then(|| SupportWeights::from_logprobs(&(0..supports.len()).map(|i| -(i as f64) * 0.3).collect::<Vec<_>>()).unwrap());
        let naive = mbr_select_naive(&cands, &supports, &lex, w.as_ref(), Some(&src)).unwrap();
        let fast = mbr_select_fast(&cands, &supports, &src, &lex, w.as_ref()).unwrap();
        for (a, b) in naive.scores.iter().zip(&fast.scores) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
        prop_assert_eq!(naive.selected_index, fast.selected_index);
    }

    #[test]
    fn selection_is_in_argmax_set(cands in candidates(16)) {
        let qe = QeMock::new();
        let r = mbr_select_naive(&cands, &texts(&cands), &qe, None, None).unwrap();
        prop_assert!(r.tied_indices.contains(&r.selected_index));
        prop_assert_eq!(r.selected_index, r.tied_indices[0]);
        prop_assert_eq!(&r.tied_indices, &argmax_set(&r.scores));
        let best = r.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(r.scores[r.selected_index] >= best - TIE_TOLERANCE);
    }

    #[test]
    fn positive_affine_utility_keeps_selection(cands in candidates(12), a in prop::sample::select(vec![0.5, 2.0, 3.0, 10.0]), b in -2.0f64..2.0) {
        let qe = QeMock::new();
        let base = mbr_select_naive(&cands, &texts(&cands), &qe, None, None).unwrap();
        prop_assume!(top_gap(&base.scores) > 1e-9);
        let aff = Affine { inner: QeMock::new(), a, b };
        let moved = mbr_select_naive(&cands, &texts(&cands), &aff, None, None).unwrap();
        prop_assert_eq!(base.selected_index, moved.selected_index);
    }

    #[test]
    fn weight_rescaling_is_invisible(src in sentence(), quasi in prop::collection::vec((sentence(), 0.01f64..5.0), 1..5), cands in candidates(10), c in 0.01f64..100.0) {
        let qe = QeMock::new();
        let mk = |scale: f64| -> Vec<SupportEntry<'_>> {
            std::iter::once(SupportEntry { text: src.as_str(), weight: Some(scale) })
                .chain(quasi.iter().map(|(t, w)| SupportEntry { text: t.as_str(), weight: Some(w * scale) }))
                .collect()
        };
        let a = smbr_select(&mk(1.0), &cands, &qe).unwrap();
        let b = smbr_select(&mk(c), &cands, &qe).unwrap();
        for (x, y) in a.scores.iter().zip(&b.scores) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
        prop_assume!(top_gap(&a.scores) > 1e-9);
        prop_assert_eq!(a.selected_index, b.selected_index);
    }

    #[test]
    fn duplicated_original_leaves_scores_unchanged(src in sentence(), cands in candidates(10), copies in 2usize..6) {
        let qe = QeMock::new();
        let one = smbr_select(&[SupportEntry { text: &src, weight: None }], &cands, &qe).unwrap();
        let many: Vec<_> = (0..copies).map(|_| SupportEntry { text: &src, weight: None }).collect();
        let dup = smbr_select(&many, &cands, &qe).unwrap();
        for (x, y) in one.scores.iter().zip(&dup.scores) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn qe_of_smbr_winner_never_beats_qe_rerank(src in sentence(), quasi in prop::collection::vec(sentence(), 0..6), cands in candidates(16)) {
        let qe = QeMock::new();
        let mut sources = vec![SupportEntry { text: src.as_str(), weight: None }];
        sources.extend(quasi.iter().map(|q| SupportEntry { text: q.as_str(), weight: None }));
        let winner1 = qe_rerank(&src, &cands, &qe).unwrap();
        let winner_k = smbr_select(&sources, &cands, &qe).unwrap();
        let f = |i: usize| winner1.scores[i];
        prop_assert!(f(winner_k.selected_index) <= f(winner1.selected_index) + 1e-12);
    }

    #[test]
    fn call_counts_follow_shapes(src in sentence(), cands in candidates(20), quasi in prop::collection::vec(sentence(), 0..5)) {
        let n = cands.len() as u64;
        let qe = CountingProvider::new(QeMock::new());
        mbr_select_naive(&cands, &texts(&cands), &qe, None, None).unwrap();
        prop_assert_eq!(qe.tally().pair_items, n * n);

        qe.reset();
        let mut sources = vec![SupportEntry { text: src.as_str(), weight: None }];
        sources.extend(quasi.iter().map(|q| SupportEntry { text: q.as_str(), weight: None }));
        smbr_select(&sources, &cands, &qe).unwrap();
        prop_assert_eq!(qe.tally().pair_items, sources.len() as u64 * n);

        let lex = CountingProvider::new(LexicalMock::new());
        mbr_select_fast(&cands, &texts(&cands), &src, &lex, None).unwrap();
        let mut distinct: Vec<&str> = texts(&cands);
        distinct.push(&src);
        distinct.sort_unstable();
        distinct.dedup();
        prop_assert_eq!(lex.tally().embed_texts, distinct.len() as u64);
        prop_assert_eq!(lex.tally().embed_calls, 1);
        prop_assert_eq!(lex.tally().estimate_triples, n * n);
    }
}
