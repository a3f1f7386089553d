#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mbrkit_core::corpus::write_segments;
use mbrkit_core::{Candidate, Provenance, QuasiSource, Segment, SegmentSet};
use rand_core::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

pub const VOCAB: [&str; 12] = ["the", "cat", "sat", "on", "mat", "a", "dog", "ran", "to", "house", "big", "."];

pub struct Gen(Xoshiro256PlusPlus);

impl Gen {
    pub fn new(seed: u64) -> Self {
        Self(Xoshiro256PlusPlus::seed_from_u64(seed))
    }

    /// Uniform in `lo..=hi`.
    pub fn range(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.0.next_u64() % (hi - lo + 1) as u64) as usize
    }

    pub fn unit(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn sentence(&mut self, vocab: &[&str], lo: usize, hi: usize) -> String {
        let n = self.range(lo, hi);
        (0..n).map(|_| vocab[self.range(0, vocab.len() - 1)]).collect::<Vec<_>>().join(" ")
    }

    /// A segment with logprobs, weighted quasi-sources and one reference.
    pub fn segment(&mut self, id: String, cands: (usize, usize), quasi: (usize, usize)) -> Segment {
        let n_c = self.range(cands.0, cands.1);
        let n_q = self.range(quasi.0, quasi.1);
        Segment {
            id,
            source: self.sentence(&VOCAB, 1, 8),
            candidates: (0..n_c)
                .map(|_| Candidate::with_logprob(self.sentence(&VOCAB, 1, 8), -5.0 * self.unit()))
                .collect(),
            quasi_sources: (0..n_q)
                .map(|_| QuasiSource::weighted(self.sentence(&VOCAB, 1, 8), Provenance::Pp, 0.05 + self.unit()))
                .collect(),
            references: vec![self.sentence(&VOCAB, 1, 8)],
        }
    }

    pub fn corpus(&mut self, n: usize, cands: (usize, usize), quasi: (usize, usize)) -> SegmentSet {
        SegmentSet::new((0..n).map(|i| self.segment(format!("s{i}"), cands, quasi)).collect()).unwrap()
    }
}

pub fn write_corpus(path: &Path, set: &SegmentSet) {
    let f = std::fs::File::create(path).unwrap();
    write_segments(std::io::BufWriter::new(f), set).unwrap();
}

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn mbrkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mbrkit")).args(args).output().expect("running mbrkit")
}

pub fn mock_scorer() -> &'static str {
    env!("CARGO_BIN_EXE_mbrkit-mock-scorer")
}

/// Decode records (header skipped) as JSON values.
pub fn records(stdout: &[u8]) -> Vec<serde_json::Value> {
    std::str::from_utf8(stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .filter(|v| v.get("header").is_none())
        .collect()
}

#[derive(Debug, serde::Deserialize)]
pub struct BruteCase {
    pub rule: mbrkit_core::Rule,
    pub provider: String,
    pub k: Option<usize>,
    pub weighted: bool,
    pub filter_m: Option<usize>,
    pub selected_index: usize,
    pub tied_indices: Vec<usize>,
    pub scores: Vec<f64>,
}

/// Runs every case of the brute-force fixture; returns the case count and a
/// description of each disagreement.
pub fn brute_force_mismatches() -> (usize, Vec<String>) {
    use mbrkit_core::decision::{decide_segment, RuleConfig};
    use mbrkit_core::utility::{BleuUtility, ConstantUtility, QeMock};
    use mbrkit_core::{load_segments, SchemaMode, UtilityProvider};

    let set = load_segments(fixture("brute_force.jsonl"), SchemaMode::Strict).unwrap();
    let expected: std::collections::BTreeMap<String, Vec<BruteCase>> =
        serde_json::from_str(&std::fs::read_to_string(fixture("brute_force_expected.json")).unwrap()).unwrap();
    let (bleu, qe, none) = (BleuUtility::default(), QeMock::new(), ConstantUtility::new(0.0));
    let mut n = 0;
    let mut bad = Vec::new();
    for (id, cases) in &expected {
        let seg = set.get(id).unwrap();
        for c in cases {
            n += 1;
            let utility: &dyn UtilityProvider = match c.provider.as_str() {
                "mock:bleu" => &bleu,
                "mock:qe" => &qe,
                _ => &none,
            };
            let cfg = RuleConfig {
                k: c.k,
                weighted: c.weighted,
                filter_m: c.filter_m,
                ..RuleConfig::new(c.rule)
            };
            match decide_segment(seg, &cfg, utility, Some(&qe)) {
                Ok(r) => {
                    let close = r.scores.len() == c.scores.len()
                        && r.scores.iter().zip(&c.scores).all(|(a, b)| (a - b).abs() <= 1e-12);
                    if r.selected_index != c.selected_index || r.tied_indices != c.tied_indices || !close {
                        bad.push(format!(
                            "{id} {:?}: got {} {:?}, want {} {:?}",
                            cfg, r.selected_index, r.tied_indices, c.selected_index, c.tied_indices
                        ));
                    }
                }
                Err(e) => bad.push(format!("{id} {cfg:?}: {e}")),
            }
        }
    }
    (n, bad)
}
