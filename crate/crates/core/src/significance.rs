//! Paired bootstrap resampling between two systems on the same segments.
//!
//! All resample indices come from one sequential xoshiro256++ stream seeded
//! with SplitMix64, so a (seed, n, resamples) triple fixes every draw.
//! Resamples are then evaluated in parallel and merged in resample order.

use rand_core::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{BleuError, CorpusMetric};

pub const GENERATOR: &str = "xoshiro256++/splitmix64";
pub const DEFAULT_RESAMPLES: usize = 1000;
pub const DEFAULT_SEED: u64 = 12345;

#[derive(Debug, Error)]
pub enum SignificanceError {
    #[error("systems have different segment counts: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("segment reference count {refs} does not match hypothesis count {hyps}")]
    RefsMismatch { hyps: usize, refs: usize },
    #[error("no segments to resample")]
    Empty,
    #[error("resample count must be positive")]
    ZeroResamples,
    #[error(transparent)]
    Metric(#[from] BleuError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            resamples: DEFAULT_RESAMPLES,
            seed: DEFAULT_SEED,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignificanceReport {
    pub metric: String,
    pub segments: usize,
    pub score_a: f64,
    pub score_b: f64,
    pub delta: f64,
    pub resamples: usize,
    pub seed: u64,
    pub generator: &'static str,
    pub wins_a: usize,
    pub wins_b: usize,
    pub ties: usize,
    /// Fraction of resamples where system A fails to beat system B.
    pub p_value: f64,
    pub marker: &'static str,
}

/// `††` for p < 0.01, `†` for p < 0.05, empty otherwise.
pub fn significance_marker(p: f64) -> &'static str {
    if p < 0.01 {
        "††"
    } else if p < 0.05 {
        "†"
    } else {
        ""
    }
}

/// Uniform draw from `0..n` by multiply-shift with rejection.
pub fn bounded(rng: &mut impl Rng, n: u64) -> u64 {
    debug_assert!(n > 0);
    let mut m = u128::from(rng.next_u64()) * u128::from(n);
    if (m as u64) < n {
        let threshold = n.wrapping_neg() % n;
        while (m as u64) < threshold {
            m = u128::from(rng.next_u64()) * u128::from(n);
        }
    }
    (m >> 64) as u64
}

/// Index table for every resample: row `r` holds draws `r*n .. (r+1)*n`.
pub fn resample_indices(n: usize, resamples: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    (0..resamples)
        .map(|_| (0..n).map(|_| bounded(&mut rng, n as u64) as usize).collect())
        .collect()
}

fn accumulate(stats: &[Vec<f64>], idx: &[usize]) -> Vec<f64> {
    let mut acc = vec![0.0; stats[0].len()];
    for &i in idx {
        for (a, s) in acc.iter_mut().zip(&stats[i]) {
            *a += s;
        }
    }
    acc
}

/// Paired bootstrap of `metric` between systems A and B.
pub fn paired_bootstrap(
    metric: &dyn CorpusMetric,
    hyps_a: &[&str],
    hyps_b: &[&str],
    refs: &[Vec<String>],
    config: BootstrapConfig,
) -> Result<SignificanceReport, SignificanceError> {
    if hyps_a.len() != hyps_b.len() {
        return Err(SignificanceError::LengthMismatch {
            a: hyps_a.len(),
            b: hyps_b.len(),
        });
    }
    if refs.len() != hyps_a.len() {
        return Err(SignificanceError::RefsMismatch {
            hyps: hyps_a.len(),
            refs: refs.len(),
        });
    }
    if hyps_a.is_empty() {
        return Err(SignificanceError::Empty);
    }
    if config.resamples == 0 {
        return Err(SignificanceError::ZeroResamples);
    }
    let stats = |hyps: &[&str]| -> Result<Vec<Vec<f64>>, BleuError> {
        hyps.iter().zip(refs).map(|(h, r)| metric.segment_stats(h, r)).collect()
    };
    let (stats_a, stats_b) = (stats(hyps_a)?, stats(hyps_b)?);
    let n = hyps_a.len();
    let all: Vec<usize> = (0..n).collect();
    let score_a = metric.finalize(&accumulate(&stats_a, &all));
    let score_b = metric.finalize(&accumulate(&stats_b, &all));

    let indices = resample_indices(n, config.resamples, config.seed);
    let outcomes: Vec<std::cmp::Ordering> = indices
        .par_iter()
        .map(|idx| {
            let ma = metric.finalize(&accumulate(&stats_a, idx));
            let mb = metric.finalize(&accumulate(&stats_b, idx));
            ma.partial_cmp(&mb).unwrap_or(std::cmp::Ordering::Equal)
        })
        .collect();
    let wins_a = outcomes.iter().filter(|o| o.is_gt()).count();
    let wins_b = outcomes.iter().filter(|o| o.is_lt()).count();
    let ties = config.resamples - wins_a - wins_b;
    let p_value = (wins_b + ties) as f64 / config.resamples as f64;

    Ok(SignificanceReport {
        metric: metric.name(),
        segments: n,
        score_a,
        score_b,
        delta: score_a - score_b,
        resamples: config.resamples,
        seed: config.seed,
        generator: GENERATOR,
        wins_a,
        wins_b,
        ties,
        p_value,
        marker: significance_marker(p_value),
    })
}
