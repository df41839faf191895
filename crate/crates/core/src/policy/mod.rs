//! The extraction policy: a local sentence encoder (token bi-LSTM with
//! multi-head pooling), a global bi-LSTM over sentences, an extraction-history
//! encoder (stacked multi-head attention over already extracted sentences) and
//! a feed-forward extractor producing per-sentence scores and a stop signal.
//!
//! Action probabilities: with `u_j = logistic(score_j)` over the remaining
//! set `I_t` and `p = logistic(mean stop logit)`,
//! `pi(select j) = (1 - p) * u_j / sum_{k in I_t} u_k` and
//! `pi(stop) = p * 1/|I_t|`.

mod checkpoint;
mod network;
mod params;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, load_checkpoint_into, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CheckpointError, MAGIC};
pub use network::{Encoded, Forward, StepOutputs};
pub use params::{Gradients, ParamSpec, PolicyParams};

use crate::autodiff::{log_sigmoid, sigmoid, Matrix};
use crate::corpus::{Document, Vocab, PAD_ID, UNK_ID};

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("invalid policy config: {0}")]
    InvalidConfig(String),
    #[error("no remaining sentences; extraction must already have terminated")]
    NoRemainingSentences,
    #[error("action has probability zero under the distribution")]
    ZeroProbability,
    #[error("sentence {0} is not available in the current state")]
    InfeasibleAction(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub heads: usize,
    pub history_layers: usize,
    /// Sentences beyond this many are not seen by the policy.
    pub max_sentences: usize,
    pub max_tokens_per_sentence: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            vocab_size: 2,
            embed_dim: 32,
            hidden_dim: 64,
            heads: 4,
            history_layers: 2,
            max_sentences: 200,
            max_tokens_per_sentence: 40,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let fail = |msg: String| Err(PolicyError::InvalidConfig(msg));
        let dims = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("heads", self.heads),
            ("history_layers", self.history_layers),
            ("max_sentences", self.max_sentences),
            ("max_tokens_per_sentence", self.max_tokens_per_sentence),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return fail(format!("{name} must be at least 1"));
        }
        if self.vocab_size < 2 {
            return fail("vocab_size must cover the PAD and UNK ids".into());
        }
        if !self.hidden_dim.is_multiple_of(2) {
            return fail(format!("hidden_dim {} must be even (two LSTM directions)", self.hidden_dim));
        }
        if !self.hidden_dim.is_multiple_of(self.heads) {
            return fail(format!("hidden_dim {} is not divisible by heads {}", self.hidden_dim, self.heads));
        }
        Ok(())
    }
}

/// A document mapped into the policy's id space: at most `max_sentences`
/// sentences of at most `max_tokens_per_sentence` ids each. A sentence with
/// no tokens becomes a single PAD.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocumentInput {
    pub token_ids: Vec<Vec<usize>>,
}

impl DocumentInput {
    pub fn new(document: &Document, vocab: &Vocab, config: &PolicyConfig) -> Self {
        let token_ids = document
            .sentences
            .iter()
            .take(config.max_sentences)
            .map(|s| {
                let mut ids: Vec<usize> = s
                    .tokens
                    .iter()
                    .take(config.max_tokens_per_sentence)
                    .map(|t| match vocab.id(t) {
                        id if id < config.vocab_size => id,
                        _ => UNK_ID,
                    })
                    .collect();
                if ids.is_empty() {
                    ids.push(PAD_ID);
                }
                ids
            })
            .collect();
        DocumentInput { token_ids }
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// A document together with its policy input. Sentence indices used by the
/// policy refer to the first `input.len()` document sentences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreparedDocument {
    pub document: Document,
    pub input: DocumentInput,
}

impl PreparedDocument {
    pub fn new(document: Document, vocab: &Vocab, config: &PolicyConfig) -> Self {
        let input = DocumentInput::new(&document, vocab, config);
        PreparedDocument { document, input }
    }

    pub fn len(&self) -> usize {
        self.input.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Stop,
    Select(usize),
}

/// Extracted sentences in extraction order, and the still-available set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractionState {
    pub extracted: Vec<usize>,
    /// Ascending sentence indices.
    pub remaining: Vec<usize>,
}

impl ExtractionState {
    pub fn new(sentences: usize) -> Self {
        ExtractionState { extracted: Vec::new(), remaining: (0..sentences).collect() }
    }

    pub fn step(&self) -> usize {
        self.extracted.len()
    }

    pub fn select(&mut self, sentence: usize) -> Result<(), PolicyError> {
        let pos = self
            .remaining
            .binary_search(&sentence)
            .map_err(|_| PolicyError::InfeasibleAction(sentence))?;
        self.remaining.remove(pos);
        self.extracted.push(sentence);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    pub stop_prob: f64,
    /// The remaining sentences, ascending; `sentence_probs` is aligned with it.
    pub remaining: Vec<usize>,
    pub sentence_probs: Vec<f64>,
}

impl ActionDistribution {
    /// Build from the extractor's raw scores and mean stop logit.
    pub fn from_logits(remaining: Vec<usize>, scores: &[f64], stop_logit: f64) -> Self {
        debug_assert_eq!(remaining.len(), scores.len());
        // u_j / sum u_k evaluated in log space so tiny u_j cannot underflow to 0/0.
        let log_u: Vec<f64> = scores.iter().map(|&s| log_sigmoid(s)).collect();
        let max = log_u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = log_u.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        ActionDistribution {
            stop_prob: sigmoid(stop_logit),
            remaining,
            sentence_probs: weights.into_iter().map(|w| w / total).collect(),
        }
    }

    pub fn position(&self, sentence: usize) -> Option<usize> {
        self.remaining.binary_search(&sentence).ok()
    }

    /// Probability of `action`: the stop decision times the choice given it.
    pub fn prob(&self, action: Action) -> Result<f64, PolicyError> {
        match action {
            Action::Stop => Ok(self.stop_prob / self.remaining.len() as f64),
            Action::Select(j) => {
                let k = self.position(j).ok_or(PolicyError::InfeasibleAction(j))?;
                Ok((1.0 - self.stop_prob) * self.sentence_probs[k])
            }
        }
    }

    /// Remaining sentence with the highest probability; lowest index on ties.
    pub fn argmax_sentence(&self) -> usize {
        let mut best = 0;
        for (k, &p) in self.sentence_probs.iter().enumerate() {
            if p > self.sentence_probs[best] {
                best = k;
            }
        }
        self.remaining[best]
    }
}

pub fn log_prob(distribution: &ActionDistribution, action: Action) -> Result<f64, PolicyError> {
    let p = distribution.prob(action)?;
    if p <= 0.0 {
        return Err(PolicyError::ZeroProbability);
    }
    Ok(p.ln())
}

/// Bernoulli stop draw, then (when continuing) a categorical draw over the
/// remaining sentences.
pub fn sample_action<R: Rng + ?Sized>(distribution: &ActionDistribution, rng: &mut R) -> Action {
    if rng.gen::<f64>() < distribution.stop_prob {
        return Action::Stop;
    }
    let draw: f64 = rng.gen();
    let mut cumulative = 0.0;
    for (k, &p) in distribution.sentence_probs.iter().enumerate() {
        cumulative += p;
        if draw < cumulative {
            return Action::Select(distribution.remaining[k]);
        }
    }
    // Rounding left the cumulative sum just below `draw`.
    let last = distribution
        .sentence_probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(distribution.remaining.len() - 1);
    Action::Select(distribution.remaining[last])
}

/// A document encoded once, queried at each extraction step.
pub struct PolicySession<'p> {
    pub forward: Forward<'p>,
    pub encoded: Encoded,
}

impl<'p> PolicySession<'p> {
    pub fn new(params: &'p PolicyParams, input: &DocumentInput) -> Self {
        let mut forward = Forward::new(params);
        let encoded = forward.encode(input);
        PolicySession { forward, encoded }
    }

    pub fn sentences(&self) -> usize {
        self.encoded.sentences
    }

    pub fn distribution(&mut self, state: &ExtractionState) -> Result<ActionDistribution, PolicyError> {
        self.step(state).map(|(_, d)| d)
    }

    /// Extractor outputs on the tape together with their distribution.
    pub fn step(&mut self, state: &ExtractionState) -> Result<(StepOutputs, ActionDistribution), PolicyError> {
        if state.remaining.is_empty() {
            return Err(PolicyError::NoRemainingSentences);
        }
        let outputs = self.forward.step(&self.encoded, &state.extracted, &state.remaining);
        let stop = self.forward.stop_logit(&outputs);
        let scores: Vec<f64> = self.forward.tape.value(outputs.scores).iter().copied().collect();
        let stop_logit = self.forward.tape.scalar(stop);
        Ok((outputs, ActionDistribution::from_logits(state.remaining.clone(), &scores, stop_logit)))
    }
}

pub fn init_params(config: &PolicyConfig, seed: u64) -> Result<PolicyParams, PolicyError> {
    PolicyParams::init(config, seed)
}

pub fn encode_local(input: &DocumentInput, params: &PolicyParams) -> Matrix {
    let mut f = Forward::new(params);
    let v = f.encode_local(input);
    f.tape.value(v).clone()
}

pub fn encode_global(local: &Matrix, params: &PolicyParams) -> Matrix {
    let mut f = Forward::new(params);
    let input = f.tape.input(local.clone());
    let v = f.encode_global(input);
    f.tape.value(v).clone()
}

pub fn encode_history(local: &Matrix, extracted: &[usize], params: &PolicyParams) -> Matrix {
    let mut f = Forward::new(params);
    let input = f.tape.input(local.clone());
    let v = f.encode_history(input, extracted);
    f.tape.value(v).clone()
}

/// Full forward pass for one state.
pub fn action_distribution(
    input: &DocumentInput,
    state: &ExtractionState,
    params: &PolicyParams,
) -> Result<ActionDistribution, PolicyError> {
    if state.remaining.is_empty() {
        return Err(PolicyError::NoRemainingSentences);
    }
    PolicySession::new(params, input).distribution(state)
}

#[cfg(test)]
mod tests;
