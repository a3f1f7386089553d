//! Segments, candidates and quasi-sources, plus JSONL ingestion.
//!
//! A segments file holds one JSON object per line:
//!
//! ```text
//! {"id": "s0", "source": "...", "candidates": [{"text": "...", "logprob": -1.2}],
//!  "quasi_sources": [{"text": "...", "provenance": "pp", "weight": 0.3}],
//!  "references": ["..."]}
//! ```
//!
//! Text is kept byte-for-byte; tokenization and normalization happen later.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed JSON: {message}")]
    Json { line: usize, message: String },
    #[error("line {line}: unknown field `{field}`")]
    UnknownField { line: usize, field: String },
    #[error("line {line}: duplicate segment id \"{id}\" (first seen on line {first_line})")]
    DuplicateId {
        id: String,
        line: usize,
        first_line: usize,
    },
    #[error("line {line}: segment \"{id}\" has no candidates")]
    EmptyCandidates { line: usize, id: String },
    #[error("line {line}: segment \"{id}\": {reason}")]
    Invalid {
        line: usize,
        id: String,
        reason: String,
    },
    #[error("segment \"{id}\": empty support set")]
    EmptySupport { id: String },
    #[error("segment \"{id}\": source is empty")]
    EmptySource { id: String },
    #[error("write failed: {0}")]
    Write(#[from] std::io::Error),
}

/// How strictly unknown fields are treated during ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SchemaMode {
    #[default]
    Strict,
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub text: String,
    /// Natural-log model probability of the hypothesis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprob: Option<f64>,
}

impl Candidate {
    pub fn new(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            logprob: None,
        }
    }

    pub fn with_logprob(text: impl Into<String>, logprob: f64) -> Self {
        Self {
            text: text.into(),
            logprob: Some(logprob),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Original,
    Pp,
    Bt,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Original => "original",
            Provenance::Pp => "pp",
            Provenance::Bt => "bt",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuasiSource {
    pub text: String,
    pub provenance: Provenance,
    /// Unnormalized paraphrase probability.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
}

impl QuasiSource {
    pub fn new(text: impl Into<String>, provenance: Provenance) -> Self {
        Self {
            text: text.into(),
            provenance,
            weight: None,
        }
    }

    pub fn weighted(text: impl Into<String>, provenance: Provenance, weight: f64) -> Self {
        Self {
            text: text.into(),
            provenance,
            weight: Some(weight),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub id: String,
    pub source: String,
    pub candidates: Vec<Candidate>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub quasi_sources: Vec<QuasiSource>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub references: Vec<String>,
}

impl Segment {
    pub fn candidate_texts(&self) -> Vec<&str> {
        self.candidates.iter().map(|c| c.text.as_str()).collect()
    }

    /// Logprobs of all candidates, or `None` if any is missing.
    pub fn logprobs(&self) -> Option<Vec<f64>> {
        self.candidates.iter().map(|c| c.logprob).collect()
    }

    fn validate(&self, line: usize, mode: SchemaMode) -> Result<(), CorpusError> {
        let invalid = |reason: String| CorpusError::Invalid {
            line,
            id: self.id.clone(),
            reason,
        };
        if self.id.is_empty() {
            return Err(invalid("id must be non-empty".into()));
        }
        if self.candidates.is_empty() && mode == SchemaMode::Strict {
            return Err(CorpusError::EmptyCandidates {
                line,
                id: self.id.clone(),
            });
        }
        for (i, c) in self.candidates.iter().enumerate() {
            if let Some(lp) = c.logprob {
                if !lp.is_finite() || lp > 0.0 {
                    return Err(invalid(format!(
                        "candidate {i} logprob {lp} must be finite and <= 0"
                    )));
                }
            }
        }
        let mut originals = 0;
        for (i, q) in self.quasi_sources.iter().enumerate() {
            if let Some(w) = q.weight {
                if !w.is_finite() || w < 0.0 {
                    return Err(invalid(format!(
                        "quasi-source {i} weight {w} must be finite and >= 0"
                    )));
                }
            }
            if q.provenance == Provenance::Original {
                originals += 1;
                if q.text != self.source {
                    return Err(invalid(format!(
                        "quasi-source {i} has provenance \"original\" but differs from source"
                    )));
                }
            }
        }
        if originals > 1 {
            return Err(invalid("more than one quasi-source has provenance \"original\"".into()));
        }
        let weighted = self.quasi_sources.iter().filter(|q| q.weight.is_some()).count();
        if weighted != 0 && weighted != self.quasi_sources.len() {
            return Err(invalid(
                "either all quasi-sources carry a weight or none do".into(),
            ));
        }
        Ok(())
    }
}

/// Counts and provenance summary of a loaded set.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Manifest {
    pub n_segments: usize,
    pub n_candidates: usize,
    pub n_quasi_sources: usize,
    pub n_references: usize,
    pub provenance: BTreeMap<String, usize>,
}

impl Manifest {
    fn from_segments(segments: &[Segment]) -> Self {
        let mut m = Manifest {
            n_segments: segments.len(),
            ..Manifest::default()
        };
        for s in segments {
            m.n_candidates += s.candidates.len();
            m.n_quasi_sources += s.quasi_sources.len();
            m.n_references += s.references.len();
            for q in &s.quasi_sources {
                *m.provenance.entry(q.provenance.as_str().to_string()).or_default() += 1;
            }
        }
        m
    }
}

/// Immutable, file-ordered collection of segments.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSet {
    segments: Vec<Segment>,
    manifest: Manifest,
}

impl SegmentSet {
    /// Builds a set from in-memory segments, applying the same validation as
    /// [`load_segments`] in strict mode (line numbers are 1-based positions).
    pub fn new(segments: Vec<Segment>) -> Result<Self, CorpusError> {
        let mut seen = HashMap::new();
        for (i, s) in segments.iter().enumerate() {
            s.validate(i + 1, SchemaMode::Strict)?;
            if let Some(first) = seen.insert(s.id.clone(), i + 1) {
                return Err(CorpusError::DuplicateId {
                    id: s.id.clone(),
                    line: i + 1,
                    first_line: first,
                });
            }
        }
        let manifest = Manifest::from_segments(&segments);
        Ok(Self { segments, manifest })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Segment> {
        self.segments.iter()
    }

    pub fn get(&self, id: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.id == id)
    }
}

impl<'a> IntoIterator for &'a SegmentSet {
    type Item = &'a Segment;
    type IntoIter = std::slice::Iter<'a, Segment>;

    fn into_iter(self) -> Self::IntoIter {
        self.segments.iter()
    }
}

const SEGMENT_FIELDS: &[&str] = &["id", "source", "candidates", "quasi_sources", "references"];
const CANDIDATE_FIELDS: &[&str] = &["text", "logprob"];
const QUASI_FIELDS: &[&str] = &["text", "provenance", "weight"];

fn check_fields(value: &Value, allowed: &[&str], prefix: &str, line: usize) -> Result<(), CorpusError> {
    if let Value::Object(map) = value {
        if let Some(key) = map.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(CorpusError::UnknownField {
                line,
                field: format!("{prefix}{key}"),
            });
        }
    }
    Ok(())
}

fn check_unknown_fields(value: &Value, line: usize) -> Result<(), CorpusError> {
    check_fields(value, SEGMENT_FIELDS, "", line)?;
    for (key, allowed) in [("candidates", CANDIDATE_FIELDS), ("quasi_sources", QUASI_FIELDS)] {
        if let Some(Value::Array(items)) = value.get(key) {
            for (i, item) in items.iter().enumerate() {
                check_fields(item, allowed, &format!("{key}[{i}]."), line)?;
            }
        }
    }
    Ok(())
}

/// Parses segments from any line-oriented reader. Blank lines are skipped.
pub fn parse_segments<R: BufRead>(reader: R, mode: SchemaMode) -> Result<SegmentSet, CorpusError> {
    let mut segments = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| CorpusError::Json {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| CorpusError::Json {
            line: line_no,
            message: e.to_string(),
        })?;
        if mode == SchemaMode::Strict {
            check_unknown_fields(&value, line_no)?;
        }
        let segment: Segment = serde_json::from_value(value).map_err(|e| CorpusError::Json {
            line: line_no,
            message: e.to_string(),
        })?;
        segment.validate(line_no, mode)?;
        if let Some(&first_line) = seen.get(&segment.id) {
            return Err(CorpusError::DuplicateId {
                id: segment.id,
                line: line_no,
                first_line,
            });
        }
        seen.insert(segment.id.clone(), line_no);
        segments.push(segment);
    }
    let manifest = Manifest::from_segments(&segments);
    Ok(SegmentSet { segments, manifest })
}

pub fn load_segments(path: impl AsRef<Path>, mode: SchemaMode) -> Result<SegmentSet, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_segments(BufReader::new(file), mode)
}

/// Writes one JSON object per segment, `\n`-terminated.
pub fn write_segments<W: Write>(mut writer: W, set: &SegmentSet) -> Result<(), CorpusError> {
    for s in set.iter() {
        let line = serde_json::to_string(s).map_err(std::io::Error::other)?;
        writer.write_all(line.as_bytes())?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

/// Which texts play the role of support hypotheses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SupportKind {
    /// Standard MBR: the candidate list doubles as the support list.
    CandidatesAsSupport,
    /// Source-based MBR: the original source followed by the quasi-sources.
    QuasiSourcesWithOriginal,
}

/// One support element with its unnormalized weight, if any.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportEntry<'a> {
    pub text: &'a str,
    pub weight: Option<f64>,
}

pub fn support_view(segment: &Segment, kind: SupportKind) -> Result<Vec<SupportEntry<'_>>, CorpusError> {
    let entries = match kind {
        SupportKind::CandidatesAsSupport => {
            // exp(lp - max) is proportional to exp(lp) and cannot underflow
            // for the best candidate.
            let weights = segment.logprobs().and_then(|lps| {
                let max = lps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (!lps.is_empty()).then(|| lps.iter().map(|lp| (lp - max).exp()).collect::<Vec<_>>())
            });
            segment
                .candidates
                .iter()
                .enumerate()
                .map(|(i, c)| SupportEntry {
                    text: &c.text,
                    weight: weights.as_ref().map(|w| w[i]),
                })
                .collect::<Vec<_>>()
        }
        SupportKind::QuasiSourcesWithOriginal => {
            if segment.source.is_empty() {
                return Err(CorpusError::EmptySource {
                    id: segment.id.clone(),
                });
            }
            let original = segment
                .quasi_sources
                .iter()
                .find(|q| q.provenance == Provenance::Original);
            let original_weight = match original {
                Some(q) => q.weight,
                None => {
                    let max = segment
                        .quasi_sources
                        .iter()
                        .filter_map(|q| q.weight)
                        .fold(None, |acc: Option<f64>, w| Some(acc.map_or(w, |a| a.max(w))));
                    if let Some(w) = max {
                        tracing::debug!(
                            segment = %segment.id,
                            weight = w,
                            "synthesized original source takes the maximum quasi-source weight"
                        );
                    }
                    // a lone original gets weight 1
                    max.or_else(|| segment.quasi_sources.is_empty().then_some(1.0))
                }
            };
            let mut entries = vec![SupportEntry {
                text: &segment.source,
                weight: original_weight,
            }];
            entries.extend(
                segment
                    .quasi_sources
                    .iter()
                    .filter(|q| q.provenance != Provenance::Original)
                    .map(|q| SupportEntry {
                        text: &q.text,
                        weight: q.weight,
                    }),
            );
            entries
        }
    };
    if entries.is_empty() {
        return Err(CorpusError::EmptySupport {
            id: segment.id.clone(),
        });
    }
    Ok(entries)
}
