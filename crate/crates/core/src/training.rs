//! REINFORCE training with a terminal reward and no discounting.
//!
//! Every step of an episode is credited with the final reward `R_T`, so the
//! update for one episode is `theta += alpha * R_T / (T + 1) * grad sum_t log pi(A_t | S_t)`
//! where `T` counts sentence selections. There is no baseline.

use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adjoints, Var};
use crate::corpus::Vocab;
use crate::extraction::{self, ExtractionConfig, ExtractionError};
use crate::metrics::{self, RougeLVariant};
use crate::policy::{
    log_prob, sample_action, save_checkpoint, Action, CheckpointError, ExtractionState, Forward, Gradients, PolicyConfig,
    PolicyError, PolicyParams, PolicySession, PreparedDocument,
};

#[derive(Debug, thiserror::Error)]
pub enum TrainingError {
    #[error("invalid trainer config: {0}")]
    InvalidConfig(String),
    #[error("document {0:?} has no gold summary")]
    MissingGold(String),
    #[error("document {0:?} has no sentences")]
    EmptyDocument(String),
    #[error("training corpus is empty")]
    NoTrainingDocuments,
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Extraction(#[from] ExtractionError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("non-finite gradient in tensor {0}")]
    NonFiniteGradient(String),
    #[error("episode does not fit the document: {0}")]
    InvalidEpisode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStep {
    pub action: Action,
    pub log_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub doc_id: String,
    pub steps: Vec<EpisodeStep>,
    pub reward: f64,
}

impl Episode {
    /// Number of sentence selections `T`.
    pub fn selections(&self) -> usize {
        self.selected().len()
    }

    pub fn selected(&self) -> Vec<usize> {
        self.steps
            .iter()
            .filter_map(|s| match s.action {
                Action::Select(j) => Some(j),
                Action::Stop => None,
            })
            .collect()
    }

    pub fn actions(&self) -> Vec<Action> {
        self.steps.iter().map(|s| s.action).collect()
    }

    /// `R_T / (T + 1)`, the factor multiplying the log-probability gradient.
    pub fn update_scale(&self) -> f64 {
        self.reward / (self.selections() + 1) as f64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Plain gradient ascent.
    #[default]
    Sgd,
    Adam,
}

impl std::str::FromStr for Optimizer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            other => Err(format!("unknown optimizer {other:?} (sgd|adam)")),
        }
    }
}

impl std::fmt::Display for Optimizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam => "adam",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    pub episodes_per_update: usize,
    pub samples_per_document: usize,
    /// Episodes end after at most `min(N, max_steps)` selections.
    pub max_steps: usize,
    pub total_updates: usize,
    /// Validation every this many updates (0 disables periodic validation).
    pub eval_interval: usize,
    pub seed: u64,
    pub reward_variant: RougeLVariant,
    pub optimizer: Optimizer,
    /// Initial updates trained on oracle-label episodes instead of samples.
    pub warm_start_updates: usize,
    pub extraction: ExtractionConfig,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            learning_rate: 0.5,
            episodes_per_update: 4,
            samples_per_document: 8,
            max_steps: 50,
            total_updates: 2000,
            eval_interval: 100,
            seed: 0,
            reward_variant: RougeLVariant::Flattened,
            optimizer: Optimizer::Sgd,
            warm_start_updates: 0,
            extraction: ExtractionConfig::default(),
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        let fail = |m: &str| Err(TrainingError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if self.episodes_per_update == 0 {
            return fail("episodes_per_update must be at least 1");
        }
        if self.samples_per_document == 0 {
            return fail("samples_per_document must be at least 1");
        }
        if self.max_steps == 0 {
            return fail("max_steps must be at least 1");
        }
        self.extraction.validate().or_else(|e| fail(&e.to_string()))
    }
}

fn gold_of(document: &PreparedDocument) -> Result<Vec<&[String]>, TrainingError> {
    document
        .document
        .gold
        .as_ref()
        .map(|g| g.token_lists())
        .ok_or_else(|| TrainingError::MissingGold(document.document.id.clone()))
}

fn episode_reward(document: &PreparedDocument, selected: &[usize], variant: RougeLVariant) -> Result<f64, TrainingError> {
    let gold = gold_of(document)?;
    Ok(metrics::reward(&document.document.selection(selected), &gold, variant))
}

/// An episode sampled on a session's tape, with the on-tape log-probability of every step.
struct TapedEpisode {
    episode: Episode,
    log_probs: Vec<Var>,
}

fn sample_on_tape<R: Rng + ?Sized>(
    session: &mut PolicySession<'_>,
    document: &PreparedDocument,
    rng: &mut R,
    max_steps: usize,
    variant: RougeLVariant,
) -> Result<TapedEpisode, TrainingError> {
    let limit = max_steps.min(document.len());
    let mut state = ExtractionState::new(document.len());
    let mut steps = Vec::new();
    let mut log_probs = Vec::new();
    while state.extracted.len() < limit {
        let (outputs, distribution) = session.step(&state)?;
        let action = sample_action(&distribution, rng);
        steps.push(EpisodeStep { action, log_prob: log_prob(&distribution, action)? });
        let choice = match action {
            Action::Stop => None,
            Action::Select(j) => distribution.position(j),
        };
        log_probs.push(session.forward.log_prob(&outputs, choice));
        match action {
            Action::Stop => break,
            Action::Select(j) => state.select(j)?,
        }
    }
    let reward = episode_reward(document, &state.extracted, variant)?;
    Ok(TapedEpisode { episode: Episode { doc_id: document.document.id.clone(), steps, reward }, log_probs })
}

/// Sample one episode. Terminates on a stop action or after
/// `min(N, max_steps)` selections; the reward scores the selected sentences
/// in extraction order.
pub fn rollout_episode<R: Rng + ?Sized>(
    document: &PreparedDocument,
    params: &PolicyParams,
    rng: &mut R,
    max_steps: usize,
    variant: RougeLVariant,
) -> Result<Episode, TrainingError> {
    check_document(document)?;
    let mut session = PolicySession::new(params, &document.input);
    Ok(sample_on_tape(&mut session, document, rng, max_steps, variant)?.episode)
}

fn check_document(document: &PreparedDocument) -> Result<(), TrainingError> {
    gold_of(document)?;
    if document.is_empty() {
        return Err(TrainingError::EmptyDocument(document.document.id.clone()));
    }
    Ok(())
}

/// Best of `samples` independent rollouts by reward; the earliest wins ties.
pub fn select_training_episode<R: Rng + ?Sized>(
    document: &PreparedDocument,
    params: &PolicyParams,
    rng: &mut R,
    samples: usize,
    max_steps: usize,
    variant: RougeLVariant,
) -> Result<Episode, TrainingError> {
    Ok(best_episode_with_gradient(document, params, rng, samples, max_steps, variant)?.0)
}

fn best_episode_with_gradient<R: Rng + ?Sized>(
    document: &PreparedDocument,
    params: &PolicyParams,
    rng: &mut R,
    samples: usize,
    max_steps: usize,
    variant: RougeLVariant,
) -> Result<(Episode, Gradients), TrainingError> {
    check_document(document)?;
    // The encoder output does not depend on the sampled actions, so every
    // rollout shares one tape and only the winner is differentiated.
    let mut session = PolicySession::new(params, &document.input);
    let mut best: Option<TapedEpisode> = None;
    for _ in 0..samples.max(1) {
        let candidate = sample_on_tape(&mut session, document, rng, max_steps, variant)?;
        if best.as_ref().is_none_or(|b| candidate.episode.reward > b.episode.reward) {
            best = Some(candidate);
        }
    }
    let best = best.expect("at least one sample");
    let gradient = differentiate(&mut session.forward, &best.log_probs)?;
    Ok((best.episode, gradient))
}

/// Gradient of the sum of `log_probs` with respect to every parameter tensor.
fn differentiate(forward: &mut Forward<'_>, log_probs: &[Var]) -> Result<Gradients, TrainingError> {
    let mut gradient = Gradients::zeros_like(forward.params());
    let Some((&first, rest)) = log_probs.split_first() else {
        return Ok(gradient);
    };
    let total = rest.iter().fold(first, |acc, &v| forward.tape.add(acc, v));
    if !forward.tape.scalar(total).is_finite() {
        return Err(TrainingError::NonFiniteGradient("episode log-probability".into()));
    }
    let adjoints: Adjoints = forward.tape.backward(total);
    let registered: Vec<(usize, Var)> = forward.registered().collect();
    for (id, var) in registered {
        if let Some(g) = adjoints.get(var) {
            gradient.tensors_mut()[id].assign(g);
        }
    }
    if let Some(name) = gradient.first_non_finite() {
        return Err(TrainingError::NonFiniteGradient(name.to_string()));
    }
    Ok(gradient)
}

/// Replay `actions` under `params`, recording log-probabilities and the reward.
pub fn replay_episode(
    document: &PreparedDocument,
    params: &PolicyParams,
    actions: &[Action],
    variant: RougeLVariant,
) -> Result<Episode, TrainingError> {
    check_document(document)?;
    let mut session = PolicySession::new(params, &document.input);
    let (episode, _) = replay_on_tape(&mut session, document, actions, variant)?;
    Ok(episode)
}

fn replay_on_tape(
    session: &mut PolicySession<'_>,
    document: &PreparedDocument,
    actions: &[Action],
    variant: RougeLVariant,
) -> Result<(Episode, Vec<Var>), TrainingError> {
    let mut state = ExtractionState::new(document.len());
    let mut steps = Vec::new();
    let mut log_probs = Vec::new();
    for (t, &action) in actions.iter().enumerate() {
        if state.remaining.is_empty() {
            return Err(TrainingError::InvalidEpisode(format!("step {t} acts after every sentence was selected")));
        }
        let (outputs, distribution) = session.step(&state)?;
        let choice = match action {
            Action::Stop => {
                if t + 1 != actions.len() {
                    return Err(TrainingError::InvalidEpisode(format!("stop at step {t} is not the last action")));
                }
                None
            }
            Action::Select(j) => Some(distribution.position(j).ok_or(PolicyError::InfeasibleAction(j))?),
        };
        steps.push(EpisodeStep { action, log_prob: log_prob(&distribution, action)? });
        log_probs.push(session.forward.log_prob(&outputs, choice));
        if let Action::Select(j) = action {
            state.select(j)?;
        }
    }
    let reward = episode_reward(document, &state.extracted, variant)?;
    Ok((Episode { doc_id: document.document.id.clone(), steps, reward }, log_probs))
}

/// Exact gradient of `sum_t log pi(A_t | S_t)` over the episode's actions.
pub fn grad_log_prob(params: &PolicyParams, document: &PreparedDocument, episode: &Episode) -> Result<Gradients, TrainingError> {
    if episode.doc_id != document.document.id {
        return Err(TrainingError::InvalidEpisode(format!(
            "episode for {:?} replayed on {:?}",
            episode.doc_id, document.document.id
        )));
    }
    check_document(document)?;
    let mut session = PolicySession::new(params, &document.input);
    let (_, log_probs) = replay_on_tape(&mut session, document, &episode.actions(), RougeLVariant::Flattened)?;
    differentiate(&mut session.forward, &log_probs)
}

/// Sum of the episode's log-probabilities recomputed from `params`, in f64.
pub fn episode_log_prob(params: &PolicyParams, document: &PreparedDocument, actions: &[Action]) -> Result<f64, TrainingError> {
    let mut session = PolicySession::new(params, &document.input);
    let (episode, _) = replay_on_tape(&mut session, document, actions, RougeLVariant::Flattened)?;
    Ok(episode.steps.iter().map(|s| s.log_prob).sum())
}

/// `theta += alpha * R_T / (T + 1) * gradient`.
pub fn reinforce_update(params: &mut PolicyParams, episode: &Episode, gradient: &Gradients, alpha: f64) -> Result<(), TrainingError> {
    params.add_scaled(gradient, alpha * episode.update_scale())?;
    Ok(())
}

/// Mean over the batch of `R_T / (T + 1) * gradient`.
pub fn batch_direction(params: &PolicyParams, batch: &[(Episode, Gradients)]) -> Gradients {
    let mut direction = Gradients::zeros_like(params);
    if batch.is_empty() {
        return direction;
    }
    for (episode, gradient) in batch {
        direction.add_scaled(gradient, episode.update_scale());
    }
    direction.scale(1.0 / batch.len() as f64);
    direction
}

struct Adam {
    m: Gradients,
    v: Gradients,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(params: &PolicyParams) -> Self {
        Adam { m: Gradients::zeros_like(params), v: Gradients::zeros_like(params), t: 0 }
    }

    /// Bias-corrected Adam step for ascent along `direction`.
    fn step(&mut self, direction: &Gradients) -> Gradients {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        let mut out = direction.clone();
        for ((m, v), (g, o)) in self
            .m
            .tensors_mut()
            .iter_mut()
            .zip(self.v.tensors_mut())
            .zip(direction.tensors().iter().zip(out.tensors_mut()))
        {
            ndarray::Zip::from(m).and(v).and(g).and(o).for_each(|m, v, &g, o| {
                *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
                *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
                *o = (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
            });
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub update: usize,
    pub mean_val_reward: f64,
    pub mean_train_reward: f64,
    pub wallclock_s: f64,
}

pub fn render_history(history: &[HistoryRecord]) -> String {
    let mut out = String::from("update\tmean_val_reward\twallclock_s\n");
    for r in history {
        out.push_str(&format!("{}\t{:.6}\t{:.3}\n", r.update, r.mean_val_reward, r.wallclock_s));
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_params: PolicyParams,
    pub best_params: PolicyParams,
    pub best_val_reward: f64,
    pub history: Vec<HistoryRecord>,
}

/// Training stopped because parameters or gradients became non-finite.
#[derive(Debug)]
pub struct NumericFailure {
    pub update: usize,
    pub reason: String,
    pub last_good: PolicyParams,
    pub best_params: PolicyParams,
    pub history: Vec<HistoryRecord>,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainFailure {
    #[error(transparent)]
    Setup(#[from] TrainingError),
    #[error("numeric failure at update {}: {}", .0.update, .0.reason)]
    Numeric(Box<NumericFailure>),
}

pub struct TrainingData<'a> {
    pub train: &'a [PreparedDocument],
    pub val: &'a [PreparedDocument],
    /// Oracle selections by document id, for warm-start episodes.
    pub labels: Option<&'a HashMap<String, Vec<usize>>>,
}

/// Mean reward of greedy thresholded extraction over `documents`.
pub fn mean_extraction_reward(
    documents: &[PreparedDocument],
    params: &PolicyParams,
    config: &ExtractionConfig,
    variant: RougeLVariant,
) -> Result<f64, TrainingError> {
    let rewards: Vec<f64> = documents
        .par_iter()
        .filter(|d| d.document.gold.is_some())
        .map(|d| {
            let picked = extraction::extract(d, params, config)?;
            Ok(extraction::score_reward(d, &picked, variant).unwrap_or(0.0))
        })
        .collect::<Result<_, TrainingError>>()?;
    Ok(if rewards.is_empty() { 0.0 } else { rewards.iter().sum::<f64>() / rewards.len() as f64 })
}

/// Where `train` saves the best-on-validation parameters as they improve.
pub struct BestCheckpoint<'a> {
    pub path: &'a Path,
    pub vocab: &'a Vocab,
}

/// Run `total_updates` updates of `episodes_per_update` best-of-K episodes each.
pub fn train(
    data: &TrainingData<'_>,
    policy_config: &PolicyConfig,
    config: &TrainerConfig,
    best_checkpoint: Option<&BestCheckpoint<'_>>,
) -> Result<TrainOutcome, TrainFailure> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init_seed = rng.gen::<u64>();
    let mut params = PolicyParams::init(policy_config, init_seed).map_err(TrainingError::from)?;
    let train_docs: Vec<&PreparedDocument> =
        data.train.iter().filter(|d| d.document.gold.is_some() && !d.is_empty()).collect();
    if train_docs.is_empty() && config.total_updates > 0 {
        return Err(TrainingError::NoTrainingDocuments.into());
    }

    let started = Instant::now();
    let validate = |params: &PolicyParams| -> Result<f64, TrainingError> {
        mean_extraction_reward(data.val, params, &config.extraction, config.reward_variant)
    };
    let mut history = Vec::new();
    let mut best_params = params.clone();
    let mut best_val = validate(&params)?;
    history.push(HistoryRecord { update: 0, mean_val_reward: best_val, mean_train_reward: 0.0, wallclock_s: 0.0 });
    if let Some(target) = best_checkpoint {
        save_checkpoint(&best_params, target.vocab, target.path).map_err(TrainingError::from)?;
    }

    let mut adam = (config.optimizer == Optimizer::Adam).then(|| Adam::new(&params));
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut train_reward_sum = 0.0;
    let mut train_reward_count = 0usize;

    for update in 1..=config.total_updates {
        let batch_docs: Vec<&PreparedDocument> = (0..config.episodes_per_update)
            .map(|_| {
                if cursor == order.len() {
                    order = (0..train_docs.len()).collect();
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                cursor += 1;
                train_docs[order[cursor - 1]]
            })
            .collect();
        let seeds: Vec<u64> = batch_docs.iter().map(|_| rng.gen()).collect();
        let warm = update <= config.warm_start_updates;

        let results: Vec<Result<(Episode, Gradients), TrainingError>> = batch_docs
            .par_iter()
            .zip(&seeds)
            .map(|(doc, &seed)| {
                let label = warm.then(|| data.labels.and_then(|l| l.get(&doc.document.id))).flatten();
                match label {
                    Some(indices) => teacher_episode(doc, &params, indices, config),
                    None => {
                        let mut doc_rng = ChaCha8Rng::seed_from_u64(seed);
                        best_episode_with_gradient(
                            doc,
                            &params,
                            &mut doc_rng,
                            config.samples_per_document,
                            config.max_steps,
                            config.reward_variant,
                        )
                    }
                }
            })
            .collect();

        let numeric = |reason: String, params: &PolicyParams, best: &PolicyParams, history: &[HistoryRecord]| {
            TrainFailure::Numeric(Box::new(NumericFailure {
                update,
                reason,
                last_good: params.clone(),
                best_params: best.clone(),
                history: history.to_vec(),
            }))
        };
        let mut batch = Vec::with_capacity(results.len());
        for result in results {
            match result {
                Ok(item) => batch.push(item),
                Err(TrainingError::NonFiniteGradient(name)) => {
                    return Err(numeric(format!("non-finite gradient in {name}"), &params, &best_params, &history))
                }
                Err(e) => return Err(e.into()),
            }
        }
        for (episode, _) in &batch {
            train_reward_sum += episode.reward;
            train_reward_count += 1;
        }

        let direction = batch_direction(&params, &batch);
        let step = match adam.as_mut() {
            Some(adam) => adam.step(&direction),
            None => direction,
        };
        let mut next = params.clone();
        next.add_scaled(&step, config.learning_rate).map_err(TrainingError::from)?;
        if !next.is_finite() {
            let name = next
                .specs()
                .iter()
                .zip(next.tensors())
                .find(|(_, t)| t.iter().any(|v| !v.is_finite()))
                .map(|(s, _)| s.name.clone())
                .unwrap_or_default();
            return Err(numeric(format!("parameter tensor {name} became non-finite"), &params, &best_params, &history));
        }
        params = next;

        let due = config.eval_interval > 0 && update % config.eval_interval == 0;
        if due || update == config.total_updates {
            let val = validate(&params)?;
            history.push(HistoryRecord {
                update,
                mean_val_reward: val,
                mean_train_reward: train_reward_sum / train_reward_count.max(1) as f64,
                wallclock_s: started.elapsed().as_secs_f64(),
            });
            train_reward_sum = 0.0;
            train_reward_count = 0;
            if val > best_val {
                best_val = val;
                best_params = params.clone();
                if let Some(target) = best_checkpoint {
                    save_checkpoint(&best_params, target.vocab, target.path).map_err(TrainingError::from)?;
                }
            }
        }
    }
    Ok(TrainOutcome { final_params: params, best_params, best_val_reward: best_val, history })
}

/// Episode that selects the oracle sentences in document order, then stops.
fn teacher_episode(
    document: &PreparedDocument,
    params: &PolicyParams,
    indices: &[usize],
    config: &TrainerConfig,
) -> Result<(Episode, Gradients), TrainingError> {
    check_document(document)?;
    let mut sorted: Vec<usize> = indices.iter().copied().filter(|&i| i < document.len()).collect();
    sorted.sort_unstable();
    sorted.truncate(config.max_steps);
    let mut actions: Vec<Action> = sorted.into_iter().map(Action::Select).collect();
    if actions.len() < document.len().min(config.max_steps) {
        actions.push(Action::Stop);
    }
    let mut session = PolicySession::new(params, &document.input);
    let (episode, log_probs) = replay_on_tape(&mut session, document, &actions, config.reward_variant)?;
    let gradient = differentiate(&mut session.forward, &log_probs)?;
    Ok((episode, gradient))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteDiffReport {
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
    pub coordinates: usize,
    /// Coordinates whose analytic gradient is exactly zero.
    pub zero_coordinates: usize,
    /// Largest central-difference estimate among those zero coordinates.
    pub max_numeric_at_zero: f64,
}

/// Denominator floor for relative errors. With epsilon = 1e-5 the central
/// difference carries roundoff near 1e-10, so below this magnitude the check
/// is effectively an absolute bound of `1e-4 * floor`.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-5;

/// Compare `grad_log_prob` against central differences at `sample_count`
/// coordinates: a tensor is chosen uniformly, then an entry within it.
pub fn finite_diff_check(
    params: &PolicyParams,
    document: &PreparedDocument,
    episode: &Episode,
    epsilon: f64,
    sample_count: usize,
    seed: u64,
) -> Result<FiniteDiffReport, TrainingError> {
    let analytic = grad_log_prob(params, document, episode)?;
    let actions = episode.actions();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = params.clone();
    let mut report = FiniteDiffReport {
        max_relative_error: 0.0,
        max_absolute_error: 0.0,
        coordinates: sample_count,
        zero_coordinates: 0,
        max_numeric_at_zero: 0.0,
    };
    for _ in 0..sample_count {
        let tensor = rng.gen_range(0..params.tensors().len());
        let (rows, cols) = params.tensors()[tensor].dim();
        let at = [rng.gen_range(0..rows), rng.gen_range(0..cols)];
        let original = probe.tensors()[tensor][at];
        probe.tensors_mut()[tensor][at] = original + epsilon;
        let plus = episode_log_prob(&probe, document, &actions)?;
        probe.tensors_mut()[tensor][at] = original - epsilon;
        let minus = episode_log_prob(&probe, document, &actions)?;
        probe.tensors_mut()[tensor][at] = original;

        let numeric = (plus - minus) / (2.0 * epsilon);
        let exact = analytic.tensors()[tensor][at];
        let abs = (numeric - exact).abs();
        let rel = abs / exact.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
        report.max_absolute_error = report.max_absolute_error.max(abs);
        report.max_relative_error = report.max_relative_error.max(rel);
        if exact == 0.0 {
            report.zero_coordinates += 1;
            report.max_numeric_at_zero = report.max_numeric_at_zero.max(numeric.abs());
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests;
