use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Corpus, CorpusError};

/// Train/validation/test fractions. Must be positive and sum to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    /// Proportions of a 410732/13146/13011 opinion split, rounded.
    fn default() -> Self {
        SplitRatios { train: 0.94, val: 0.03, test: 0.03 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusSplit {
    pub train: Corpus,
    pub val: Corpus,
    pub test: Corpus,
}

/// Shuffle with `seed`, then allocate `floor(n * ratio)` documents to val and
/// test; the remainder goes to train. Documents keep their relative input
/// order inside each part.
pub fn split_corpus(corpus: &Corpus, ratios: SplitRatios, seed: u64) -> Result<CorpusSplit, CorpusError> {
    let parts = [ratios.train, ratios.val, ratios.test];
    if parts.iter().any(|r| !r.is_finite() || *r <= 0.0) {
        return Err(CorpusError::InvalidRatios(format!("{parts:?} must all be positive")));
    }
    let sum: f64 = parts.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(CorpusError::InvalidRatios(format!("{parts:?} sum to {sum}, not 1")));
    }
    let n = corpus.len();
    if n < parts.len() {
        return Err(CorpusError::TooSmall { size: n, parts: parts.len() });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((n as f64) * ratios.val).floor() as usize;
    let n_test = ((n as f64) * ratios.test).floor() as usize;

    let mut assignment = vec![0u8; n];
    for &i in &order[..n_val] {
        assignment[i] = 1;
    }
    for &i in &order[n_val..n_val + n_test] {
        assignment[i] = 2;
    }
    let pick = |part: u8| {
        Corpus::new(
            corpus
                .documents
                .iter()
                .zip(&assignment)
                .filter(|(_, &a)| a == part)
                .map(|(d, _)| d.clone())
                .collect(),
        )
    };
    Ok(CorpusSplit { train: pick(0), val: pick(1), test: pick(2) })
}
