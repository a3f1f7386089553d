//! Decision-phase toolkit for machine-translation decoding.
//!
//! Candidates, quasi-sources and model log-probabilities are supplied as
//! data ([`corpus`]). A [`utility`] provider scores sentence pairs, either in
//! process or through an external scorer ([`bridge`]). The [`decision`]
//! rules (MAP, MBR, QE reranking, source-based MBR) pick one candidate per
//! segment; [`metrics`], [`significance`], [`analysis`] and [`bench`]
//! evaluate and instrument those choices.

pub mod analysis;
pub mod bench;
pub mod bridge;
pub mod corpus;
pub mod decision;
pub mod metrics;
pub mod provider;
pub mod significance;
pub mod utility;

pub use corpus::{load_segments, Candidate, Provenance, QuasiSource, SchemaMode, Segment, SegmentSet};
pub use decision::{DecisionResult, Decider, Rule, SupportWeights, TieBreak};
pub use utility::{ProviderCapabilities, Shape, UtilityProvider};
