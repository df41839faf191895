use super::*;
use crate::corpus::{Document, Vocab};
use crate::policy::{action_distribution, init_params};
use crate::synthetic::{marker_corpus, MarkerCorpusConfig};

fn toy_config(vocab_size: usize) -> PolicyConfig {
    PolicyConfig {
        vocab_size,
        embed_dim: 8,
        hidden_dim: 8,
        heads: 2,
        history_layers: 2,
        max_sentences: 40,
        max_tokens_per_sentence: 12,
    }
}

/// Six sentences over a 48-word vocabulary (50 ids with PAD and UNK).
fn toy_document() -> (PreparedDocument, PolicyConfig) {
    let words: Vec<String> = (0..48).map(|i| format!("t{i}")).collect();
    let vocab = Vocab::from_tokens(words.clone());
    let sentences: Vec<String> = (0..6)
        .map(|s| (0..4 + s % 3).map(|k| words[(7 * s + 3 * k) % 40].clone()).collect::<Vec<_>>().join(" "))
        .collect();
    let gold = vec![sentences[1].clone(), sentences[4].clone()];
    let config = toy_config(50);
    let doc = Document::from_sentences("toy", &sentences, Some(&gold));
    (PreparedDocument::new(doc, &vocab, &config), config)
}

fn marker_documents(count: usize) -> (Vec<PreparedDocument>, PolicyConfig) {
    let corpus = marker_corpus(&MarkerCorpusConfig { documents: count, ..Default::default() }, 5);
    let vocab = Vocab::build(&corpus, 1);
    let config = PolicyConfig { max_sentences: 20, ..toy_config(vocab.len()) };
    let docs = corpus.documents.into_iter().map(|d| PreparedDocument::new(d, &vocab, &config)).collect();
    (docs, config)
}

#[test]
fn config_validation() {
    assert!(TrainerConfig::default().validate().is_ok());
    for bad in [
        TrainerConfig { learning_rate: 0.0, ..Default::default() },
        TrainerConfig { samples_per_document: 0, ..Default::default() },
        TrainerConfig { episodes_per_update: 0, ..Default::default() },
        TrainerConfig { max_steps: 0, ..Default::default() },
    ] {
        assert!(matches!(bad.validate(), Err(TrainingError::InvalidConfig(_))));
    }
}

#[test]
fn rollouts_are_seeded_and_well_formed() {
    let (doc, config) = toy_document();
    let params = init_params(&config, 1).unwrap();
    for seed in 0..40 {
        let a = rollout_episode(&doc, &params, &mut ChaCha8Rng::seed_from_u64(seed), 50, RougeLVariant::Flattened).unwrap();
        let b = rollout_episode(&doc, &params, &mut ChaCha8Rng::seed_from_u64(seed), 50, RougeLVariant::Flattened).unwrap();
        assert_eq!(a, b);
        let selected = a.selected();
        let mut unique = selected.clone();
        unique.sort_unstable();
        unique.dedup();
        assert_eq!(unique.len(), selected.len());
        let last_is_stop = matches!(a.steps.last().unwrap().action, Action::Stop);
        assert!(last_is_stop || a.selections() == doc.len());
        assert!((0.0..=1.0).contains(&a.reward));
        assert!(a.steps.iter().all(|s| s.log_prob <= 0.0));
    }
}

#[test]
fn max_steps_forces_termination() {
    let (doc, config) = toy_document();
    let params = init_params(&config, 1).unwrap();
    let mut saw_forced = false;
    for seed in 0..30 {
        let e = rollout_episode(&doc, &params, &mut ChaCha8Rng::seed_from_u64(seed), 1, RougeLVariant::Flattened).unwrap();
        assert_eq!(e.steps.len(), 1);
        if e.selections() == 1 {
            saw_forced = true;
        }
    }
    assert!(saw_forced);
}

#[test]
fn immediate_stop_scores_zero() {
    let (doc, config) = toy_document();
    let params = init_params(&config, 1).unwrap();
    let e = replay_episode(&doc, &params, &[Action::Stop], RougeLVariant::Flattened).unwrap();
    assert_eq!(e.reward, 0.0);
    assert_eq!(e.selections(), 0);
    assert!(matches!(
        replay_episode(&doc, &params, &[Action::Stop, Action::Select(0)], RougeLVariant::Flattened),
        Err(TrainingError::InvalidEpisode(_))
    ));
}

#[test]
fn best_of_k_is_the_first_maximum_of_the_same_draws() {
    let (doc, config) = toy_document();
    let params = init_params(&config, 2).unwrap();
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let chosen = select_training_episode(&doc, &params, &mut rng, 6, 50, RougeLVariant::Flattened).unwrap();
        let mut replay = ChaCha8Rng::seed_from_u64(seed);
        let singles: Vec<Episode> = (0..6)
            .map(|_| rollout_episode(&doc, &params, &mut replay, 50, RougeLVariant::Flattened).unwrap())
            .collect();
        let best = singles.iter().fold(&singles[0], |b, e| if e.reward > b.reward { e } else { b });
        assert_eq!(&chosen, best);
        assert!(singles.iter().all(|e| chosen.reward >= e.reward));
        // Both generators consumed the same draws.
        assert_eq!(rng.gen::<u64>(), replay.gen::<u64>());
    }
    let k1 = select_training_episode(&doc, &params, &mut ChaCha8Rng::seed_from_u64(3), 1, 50, RougeLVariant::Flattened).unwrap();
    let plain = rollout_episode(&doc, &params, &mut ChaCha8Rng::seed_from_u64(3), 50, RougeLVariant::Flattened).unwrap();
    assert_eq!(k1, plain);
}

#[test]
fn best_of_sixteen_beats_single_rollouts_on_average() {
    let (docs, config) = marker_documents(1);
    let params = init_params(&config, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut best, mut single) = (0.0, 0.0);
    for _ in 0..100 {
        best += select_training_episode(&docs[0], &params, &mut rng, 16, 20, RougeLVariant::Flattened).unwrap().reward;
        single += rollout_episode(&docs[0], &params, &mut rng, 20, RougeLVariant::Flattened).unwrap().reward;
    }
    assert!(best >= single, "{best} < {single}");
}

#[test]
fn shared_tape_gradient_matches_replay() {
    let (doc, config) = toy_document();
    let params = init_params(&config, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (episode, shared) =
        best_episode_with_gradient(&doc, &params, &mut rng, 4, 50, RougeLVariant::Flattened).unwrap();
    let replayed = grad_log_prob(&params, &doc, &episode).unwrap();
    for (a, b) in shared.tensors().iter().zip(replayed.tensors()) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
    }
}

#[test]
fn unused_vocabulary_rows_have_zero_gradient() {
    let (doc, config) = toy_document();
    let params = init_params(&config, 3).unwrap();
    let episode = replay_episode(&doc, &params, &[Action::Select(1), Action::Select(4), Action::Stop], RougeLVariant::Flattened).unwrap();
    let g = grad_log_prob(&params, &doc, &episode).unwrap();
    let embedding = g.tensor("embedding").unwrap();
    let used: std::collections::HashSet<usize> = doc.input.token_ids.iter().flatten().copied().collect();
    for row in 0..config.vocab_size {
        let zero = embedding.row(row).iter().all(|&v| v == 0.0);
        assert_eq!(zero, !used.contains(&row), "row {row}");
    }

    // The matching central difference is zero to rounding.
    let unused = (0..config.vocab_size).find(|r| !used.contains(r)).unwrap();
    let mut probe = params.clone();
    let id = probe.specs().iter().position(|s| s.name == "embedding").unwrap();
    probe.tensors_mut()[id][[unused, 0]] += 1e-5;
    let plus = episode_log_prob(&probe, &doc, &episode.actions()).unwrap();
    probe.tensors_mut()[id][[unused, 0]] -= 2e-5;
    let minus = episode_log_prob(&probe, &doc, &episode.actions()).unwrap();
    assert!(((plus - minus) / 2e-5).abs() < 1e-8);
}

#[test]
fn finite_differences_agree_on_toy_config() {
    let (doc, config) = toy_document();
    let params = init_params(&config, 7).unwrap();
    let actions = [Action::Select(2), Action::Select(0), Action::Select(5), Action::Stop];
    let episode = replay_episode(&doc, &params, &actions, RougeLVariant::Flattened).unwrap();
    assert_eq!(episode.selections(), 3);
    let coarse = finite_diff_check(&params, &doc, &episode, 1e-5, 200, 11).unwrap();
    assert!(coarse.max_relative_error < 1e-4, "{coarse:?}");
    let fine = finite_diff_check(&params, &doc, &episode, 1e-6, 200, 11).unwrap();
    eprintln!("{coarse:?}\n{fine:?}");
    assert!(fine.max_relative_error <= 10.0 * coarse.max_relative_error.max(1e-6), "{coarse:?} {fine:?}");
}

#[test]
fn gradient_is_additive_over_steps() {
    let (doc, config) = toy_document();
    let params = init_params(&config, 8).unwrap();
    let actions = [Action::Select(3), Action::Stop];
    let episode = replay_episode(&doc, &params, &actions, RougeLVariant::Flattened).unwrap();
    let joint = grad_log_prob(&params, &doc, &episode).unwrap();

    let step_gradient = |step: usize| {
        let mut session = PolicySession::new(&params, &doc.input);
        let mut state = ExtractionState::new(doc.len());
        if step == 1 {
            state.select(3).unwrap();
        }
        let (outputs, d) = session.step(&state).unwrap();
        let choice = if step == 0 { d.position(3) } else { None };
        let v = session.forward.log_prob(&outputs, choice);
        differentiate(&mut session.forward, &[v]).unwrap()
    };
    let mut sum = step_gradient(0);
    sum.add_scaled(&step_gradient(1), 1.0);
    for (a, b) in joint.tensors().iter().zip(sum.tensors()) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
    }
}

#[test]
fn zero_rate_or_reward_leaves_parameters_identical() {
    let (doc, config) = toy_document();
    let params = init_params(&config, 5).unwrap();
    let episode = replay_episode(&doc, &params, &[Action::Select(1), Action::Stop], RougeLVariant::Flattened).unwrap();
    let g = grad_log_prob(&params, &doc, &episode).unwrap();

    let mut zero_alpha = params.clone();
    reinforce_update(&mut zero_alpha, &episode, &g, 0.0).unwrap();
    assert_eq!(zero_alpha, params);

    let silent = Episode { reward: 0.0, ..episode.clone() };
    let mut zero_reward = params.clone();
    reinforce_update(&mut zero_reward, &silent, &g, 0.5).unwrap();
    assert_eq!(zero_reward, params);

    let bad = Gradients::zeros_like(&init_params(&PolicyConfig { hidden_dim: 4, ..config }, 0).unwrap());
    let mut target = params.clone();
    assert!(matches!(reinforce_update(&mut target, &episode, &bad, 0.1), Err(TrainingError::Policy(PolicyError::ShapeMismatch(_)))));
}

#[test]
fn stop_bias_update_matches_closed_form() {
    // The stop logit is a mean over rows of `h . w + b_stop`, so its derivative
    // in `b_stop` is 1 and log pi changes by (1 - p) for a stop, -p otherwise.
    let (doc, config) = toy_document();
    let params = init_params(&config, 6).unwrap();
    let actions = [Action::Select(4), Action::Select(1), Action::Stop];
    let episode = replay_episode(&doc, &params, &actions, RougeLVariant::Flattened).unwrap();
    assert!(episode.reward > 0.0);

    let mut state = ExtractionState::new(doc.len());
    let mut expected = 0.0;
    for action in actions {
        let p = action_distribution(&doc.input, &state, &params).unwrap().stop_prob;
        match action {
            Action::Stop => expected += 1.0 - p,
            Action::Select(j) => {
                expected -= p;
                state.select(j).unwrap();
            }
        }
    }
    let g = grad_log_prob(&params, &doc, &episode).unwrap();
    let id = params.specs().iter().position(|s| s.name == "extractor.b_out").unwrap();
    assert!((g.tensors()[id][[0, 1]] - expected).abs() < 1e-12);

    let alpha = 0.3;
    let mut updated = params.clone();
    reinforce_update(&mut updated, &episode, &g, alpha).unwrap();
    let before = params.tensors()[id][[0, 1]];
    let delta = updated.tensors()[id][[0, 1]] - before;
    let hand = alpha * episode.reward / 3.0 * expected;
    assert!((delta - hand).abs() <= f32::EPSILON as f64 * (before + hand).abs().max(1e-30), "{delta} vs {hand}");
}

#[test]
fn batch_direction_is_mean_of_scaled_gradients() {
    let (doc, config) = toy_document();
    let params = init_params(&config, 6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let batch: Vec<(Episode, Gradients)> = (0..3)
        .map(|_| best_episode_with_gradient(&doc, &params, &mut rng, 2, 50, RougeLVariant::Flattened).unwrap())
        .collect();
    let direction = batch_direction(&params, &batch);
    for (t, d) in direction.tensors().iter().enumerate() {
        for (idx, &v) in d.indexed_iter() {
            let mean = batch.iter().map(|(e, g)| e.update_scale() * g.tensors()[t][idx]).sum::<f64>() / 3.0;
            assert!((v - mean).abs() <= 1e-12 * (1.0 + mean.abs()));
        }
    }
}

fn quick_config(updates: usize) -> TrainerConfig {
    TrainerConfig {
        learning_rate: 0.05,
        episodes_per_update: 2,
        samples_per_document: 2,
        max_steps: 20,
        total_updates: updates,
        eval_interval: 2,
        seed: 3,
        ..Default::default()
    }
}

#[test]
fn zero_updates_return_initial_parameters() {
    let (docs, config) = marker_documents(4);
    let data = TrainingData { train: &docs[..3], val: &docs[3..], labels: None };
    let outcome = train(&data, &config, &quick_config(0), None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let expected = init_params(&config, rng.gen()).unwrap();
    assert_eq!(outcome.final_params, expected);
    assert_eq!(outcome.history.len(), 1);
}

#[test]
fn seeded_training_is_reproducible() {
    let (docs, config) = marker_documents(6);
    let data = TrainingData { train: &docs[..4], val: &docs[4..], labels: None };
    let a = train(&data, &config, &quick_config(4), None).unwrap();
    let b = train(&data, &config, &quick_config(4), None).unwrap();
    assert_eq!(a.final_params, b.final_params);
    assert_eq!(a.best_params, b.best_params);
    let strip = |h: &[HistoryRecord]| h.iter().map(|r| (r.update, r.mean_val_reward, r.mean_train_reward)).collect::<Vec<_>>();
    assert_eq!(strip(&a.history), strip(&b.history));
    assert_eq!(a.history.iter().map(|r| r.update).collect::<Vec<_>>(), vec![0, 2, 4]);
    assert_ne!(a.final_params, train(&data, &config, &quick_config(0), None).unwrap().final_params);
}

#[test]
fn runaway_updates_abort_with_last_good_parameters() {
    let (docs, config) = marker_documents(4);
    let data = TrainingData { train: &docs[..3], val: &docs[3..], labels: None };
    let huge = TrainerConfig { learning_rate: 1e300, ..quick_config(5) };
    match train(&data, &config, &huge, None) {
        Err(TrainFailure::Numeric(failure)) => {
            assert!(failure.last_good.is_finite());
            assert_eq!(failure.update, 1);
        }
        other => panic!("expected numeric failure, got {:?}", other.map(|o| o.history)),
    }
}

#[test]
fn warm_start_uses_oracle_episodes() {
    let (docs, config) = marker_documents(4);
    let labels: HashMap<String, Vec<usize>> = docs
        .iter()
        .map(|d| (d.document.id.clone(), crate::oracle::greedy_oracle(&d.document, Default::default()).unwrap().indices))
        .collect();
    let params = init_params(&config, 0).unwrap();
    let (episode, _) = teacher_episode(&docs[0], &params, &labels[&docs[0].document.id], &quick_config(1)).unwrap();
    assert!((episode.reward - 1.0).abs() < 1e-12);
    assert_eq!(episode.selections(), 4);

    let data = TrainingData { train: &docs[..3], val: &docs[3..], labels: Some(&labels) };
    let warm = TrainerConfig { warm_start_updates: 2, ..quick_config(2) };
    assert!(train(&data, &config, &warm, None).is_ok());
}

#[test]
fn adam_option_trains() {
    let (docs, config) = marker_documents(4);
    let data = TrainingData { train: &docs[..3], val: &docs[3..], labels: None };
    let adam = TrainerConfig { optimizer: Optimizer::Adam, learning_rate: 1e-3, ..quick_config(2) };
    let outcome = train(&data, &config, &adam, None).unwrap();
    assert!(outcome.final_params.is_finite());
    assert_eq!("adam".parse::<Optimizer>().unwrap(), Optimizer::Adam);
}

