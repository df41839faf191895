use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_config() -> PolicyConfig {
    PolicyConfig {
        vocab_size: 20,
        embed_dim: 4,
        hidden_dim: 8,
        heads: 2,
        history_layers: 2,
        max_sentences: 12,
        max_tokens_per_sentence: 6,
    }
}

fn random_input(rng: &mut ChaCha8Rng, sentences: usize, vocab: usize) -> DocumentInput {
    let token_ids = (0..sentences)
        .map(|_| {
            let len = rng.gen_range(1..=5);
            (0..len).map(|_| rng.gen_range(0..vocab)).collect()
        })
        .collect();
    DocumentInput { token_ids }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[test]
fn init_is_seed_deterministic() {
    let config = tiny_config();
    let a = init_params(&config, 7).unwrap();
    let b = init_params(&config, 7).unwrap();
    let c = init_params(&config, 8).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn init_sets_forget_bias_and_bounds() {
    let config = tiny_config();
    let params = init_params(&config, 1).unwrap();
    let half = config.hidden_dim / 2;
    for name in ["local.lstm.fwd.bias", "global.lstm.bwd.bias"] {
        let bias = params.tensor(name).unwrap();
        for c in 0..4 * half {
            let expected = if (half..2 * half).contains(&c) { 1.0 } else { 0.0 };
            assert_eq!(bias[[0, c]], expected, "{name}[{c}]");
        }
    }
    let w = params.tensor("extractor.w_hidden").unwrap();
    let bound = 1.0 / ((3 * config.hidden_dim) as f64).sqrt();
    assert!(w.iter().all(|v| v.abs() < bound));
    assert!(params.tensor("extractor.b_hidden").unwrap().iter().all(|&v| v == 0.0));
    assert!(params.tensors().iter().flat_map(|t| t.iter()).all(|&v| v as f32 as f64 == v));
}

#[test]
fn config_validation() {
    assert!(PolicyConfig::default().validate().is_ok());
    let mut c = tiny_config();
    c.heads = 3;
    assert!(matches!(c.validate(), Err(PolicyError::InvalidConfig(_))));
    let mut c = tiny_config();
    c.hidden_dim = 0;
    assert!(c.validate().is_err());
    let mut c = tiny_config();
    c.hidden_dim = 6;
    c.heads = 3;
    assert!(c.validate().is_ok());
    c.hidden_dim = 9;
    c.heads = 3;
    assert!(c.validate().is_err(), "odd hidden size cannot split into two directions");
}

#[test]
fn document_input_truncates_and_pads() {
    let mut config = tiny_config();
    config.max_sentences = 2;
    config.max_tokens_per_sentence = 2;
    let doc = Document::from_sentences("d", &["a b c", "d", "e f"], None);
    let vocab = Vocab::from_tokens(["a", "b", "c"].map(String::from));
    let input = DocumentInput::new(&doc, &vocab, &config);
    assert_eq!(input.token_ids, vec![vec![2, 3], vec![UNK_ID]]);

    let mut small = config.clone();
    small.vocab_size = 3;
    let input = DocumentInput::new(&doc, &vocab, &small);
    assert_eq!(input.token_ids[0], vec![2, UNK_ID]);
}

#[test]
fn uniform_scores_give_uniform_probs() {
    let d = ActionDistribution::from_logits(vec![0, 3, 5], &[0.3, 0.3, 0.3], 0.0);
    for p in &d.sentence_probs {
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn select_fixture_is_point_four() {
    let d = ActionDistribution::from_logits(vec![0, 1], &[0.0, 0.0], logit(0.2));
    assert!((d.stop_prob - 0.2).abs() < 1e-15);
    let lp = log_prob(&d, Action::Select(0)).unwrap();
    assert!((lp - 0.4f64.ln()).abs() < 1e-12, "{lp}");
}

#[test]
fn stop_fixture_is_quarter() {
    let d = ActionDistribution::from_logits(vec![2, 4], &[1.0, -3.0], 0.0);
    let lp = log_prob(&d, Action::Stop).unwrap();
    assert!((lp - 0.25f64.ln()).abs() < 1e-12);
}

#[test]
fn infeasible_and_zero_probability_actions_error() {
    let d = ActionDistribution::from_logits(vec![2, 4], &[1.0, -3.0], 0.0);
    assert!(matches!(log_prob(&d, Action::Select(3)), Err(PolicyError::InfeasibleAction(3))));
    let d = ActionDistribution { stop_prob: 1.0, remaining: vec![0], sentence_probs: vec![1.0] };
    assert!(matches!(log_prob(&d, Action::Select(0)), Err(PolicyError::ZeroProbability)));
}

#[test]
fn extreme_scores_stay_normalized() {
    let d = ActionDistribution::from_logits(vec![0, 1, 2], &[-900.0, -1000.0, -1200.0], 800.0);
    let total: f64 = d.sentence_probs.iter().sum();
    assert!((total - 1.0).abs() < 1e-12);
    assert!(d.sentence_probs[0] > 0.99);
    assert_eq!(d.stop_prob, 1.0);
}

#[test]
fn normalization_over_random_states() {
    let config = tiny_config();
    let params = init_params(&config, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut states = 0;
    while states < 1000 {
        let n = rng.gen_range(1..=8);
        let input = random_input(&mut rng, n, config.vocab_size);
        let mut session = PolicySession::new(&params, &input);
        let mut state = ExtractionState::new(n);
        let steps = rng.gen_range(0..n);
        for _ in 0..=steps {
            let d = session.distribution(&state).unwrap();
            let stop_mass = d.stop_prob * d.remaining.len() as f64 / d.remaining.len() as f64;
            let joint = stop_mass + (1.0 - d.stop_prob) * d.sentence_probs.iter().sum::<f64>();
            assert!((joint - 1.0).abs() < 1e-6);
            assert!((d.sentence_probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(d.sentence_probs.iter().all(|p| (0.0..=1.0).contains(p)));
            assert!((0.0..=1.0).contains(&d.stop_prob));
            states += 1;
            let pick = d.remaining[rng.gen_range(0..d.remaining.len())];
            state.select(pick).unwrap();
            if state.remaining.is_empty() {
                break;
            }
        }
    }
}

#[test]
fn empty_remaining_set_is_an_error() {
    let config = tiny_config();
    let params = init_params(&config, 3).unwrap();
    let input = DocumentInput { token_ids: vec![vec![2]] };
    let mut state = ExtractionState::new(1);
    state.select(0).unwrap();
    assert!(matches!(action_distribution(&input, &state, &params), Err(PolicyError::NoRemainingSentences)));
    assert!(matches!(state.select(0), Err(PolicyError::InfeasibleAction(0))));
}

#[test]
fn tape_log_prob_matches_distribution() {
    let config = tiny_config();
    let params = init_params(&config, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let input = random_input(&mut rng, 5, config.vocab_size);
    let mut state = ExtractionState::new(5);
    state.select(3).unwrap();
    let d = action_distribution(&input, &state, &params).unwrap();

    let mut f = Forward::new(&params);
    let enc = f.encode(&input);
    let out = f.step(&enc, &state.extracted, &state.remaining);
    for (k, &j) in state.remaining.iter().enumerate() {
        let v = f.log_prob(&out, Some(k));
        assert!((f.tape.scalar(v) - log_prob(&d, Action::Select(j)).unwrap()).abs() < 1e-12);
    }
    let v = f.log_prob(&out, None);
    assert!((f.tape.scalar(v) - log_prob(&d, Action::Stop).unwrap()).abs() < 1e-12);
}

#[test]
fn local_encoding_is_per_sentence() {
    let config = tiny_config();
    let params = init_params(&config, 9).unwrap();
    let a = DocumentInput { token_ids: vec![vec![2, 3], vec![4, 5, 6], vec![7]] };
    let b = DocumentInput { token_ids: vec![vec![9], vec![4, 5, 6]] };
    let la = encode_local(&a, &params);
    let lb = encode_local(&b, &params);
    assert_eq!(la.row(1), lb.row(1));
}

#[test]
fn local_encoding_is_permutation_equivariant() {
    let config = tiny_config();
    let params = init_params(&config, 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let input = random_input(&mut rng, 6, config.vocab_size);
    let perm = [4, 0, 5, 2, 1, 3];
    let permuted = DocumentInput { token_ids: perm.iter().map(|&i| input.token_ids[i].clone()).collect() };
    let base = encode_local(&input, &params);
    let moved = encode_local(&permuted, &params);
    for (row, &src) in perm.iter().enumerate() {
        assert_eq!(moved.row(row), base.row(src));
    }
}

#[test]
fn adversarial_inputs_stay_finite() {
    let config = tiny_config();
    let params = init_params(&config, 9).unwrap();
    let pads = DocumentInput { token_ids: vec![vec![PAD_ID]; 3] };
    let unk = DocumentInput { token_ids: vec![vec![UNK_ID; config.max_tokens_per_sentence]] };
    let full = DocumentInput {
        token_ids: (0..config.max_sentences).map(|i| vec![i % config.vocab_size; config.max_tokens_per_sentence]).collect(),
    };
    for input in [pads, unk, full] {
        let n = input.len();
        let d = action_distribution(&input, &ExtractionState::new(n), &params).unwrap();
        assert!(d.stop_prob.is_finite() && d.sentence_probs.iter().all(|p| p.is_finite()));
        assert!(encode_local(&input, &params).iter().all(|v| v.is_finite()));
    }
}

#[test]
fn global_encoding_sees_both_directions() {
    let config = tiny_config();
    let params = init_params(&config, 13).unwrap();
    let single = encode_global(&Matrix::from_elem((1, 8), 0.3), &params);
    assert_eq!(single.dim(), (1, 8));
    assert!(single.iter().all(|v| v.is_finite()));

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let local = Matrix::from_shape_simple_fn((4, 8), || rng.gen_range(-1.0..1.0));
    let base = encode_global(&local, &params);
    let mut tweaked = local.clone();
    tweaked[[3, 0]] += 0.5;
    let changed = encode_global(&tweaked, &params);
    assert_ne!(base.row(0), changed.row(0));

    let zeros = Matrix::zeros((3, 8));
    assert_eq!(encode_global(&zeros, &params), encode_global(&zeros, &params));
}

#[test]
fn history_with_nothing_extracted_uses_null_context() {
    let config = PolicyConfig { history_layers: 1, ..tiny_config() };
    let mut params = init_params(&config, 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let local = Matrix::from_shape_simple_fn((3, 8), || rng.gen_range(-1.0..1.0));
    let before = encode_history(&local, &[], &params);

    // LN(x + null) with unit gain and zero bias.
    let null = params.tensor("history.0.null_context").unwrap().clone();
    for r in 0..3 {
        let x: Vec<f64> = (0..8).map(|c| local[[r, c]] + null[[0, c]]).collect();
        let mean = x.iter().sum::<f64>() / 8.0;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
        for c in 0..8 {
            let expected = (x[c] - mean) / (var + 1e-5).sqrt();
            assert!((before[[r, c]] - expected).abs() < 1e-12);
        }
    }

    // Attention projections are unused until something is extracted.
    let names: Vec<String> = params.specs().iter().map(|s| s.name.clone()).collect();
    for (name, t) in names.iter().zip(params.tensors_mut()) {
        if name.contains("w_query") || name.contains("w_key") {
            t.mapv_inplace(|v| v * 3.0 + 0.25);
        }
    }
    assert_eq!(encode_history(&local, &[], &params), before);
    let after = encode_history(&local, &[1], &params);
    assert_ne!(after.row(0), before.row(0));
    assert_ne!(after.row(2), before.row(2));
}

#[test]
fn sampling_edge_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let always = ActionDistribution { stop_prob: 1.0, remaining: vec![0, 1], sentence_probs: vec![0.5, 0.5] };
    let never = ActionDistribution { stop_prob: 0.0, remaining: vec![7], sentence_probs: vec![1.0] };
    for _ in 0..1000 {
        assert_eq!(sample_action(&always, &mut rng), Action::Stop);
        assert_eq!(sample_action(&never, &mut rng), Action::Select(7));
    }
}

#[test]
fn sampling_frequencies_within_three_sigma() {
    let d = ActionDistribution::from_logits(vec![0, 2, 5], &[1.0, -0.5, 0.2], logit(0.3));
    let actions = [Action::Stop, Action::Select(0), Action::Select(2), Action::Select(5)];
    let probs: Vec<f64> = actions.iter().map(|&a| d.prob(a).unwrap()).collect();
    let draws = 100_000;
    let mut counts = [0usize; 4];
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..draws {
        let a = sample_action(&d, &mut rng);
        counts[actions.iter().position(|&x| x == a).unwrap()] += 1;
    }
    // Stop mass is p itself here: a stop carries no sentence choice.
    let stop_prob = d.stop_prob;
    let expected = [stop_prob, probs[1], probs[2], probs[3]];
    for (c, p) in counts.iter().zip(expected) {
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        assert!((*c as f64 - draws as f64 * p).abs() <= 3.0 * sigma, "count {c} vs p {p}");
    }
}

#[test]
fn sampling_is_rng_deterministic() {
    let d = ActionDistribution::from_logits(vec![0, 1, 2], &[0.1, 0.2, 0.3], 0.0);
    let mut a = ChaCha8Rng::seed_from_u64(5);
    let mut b = ChaCha8Rng::seed_from_u64(5);
    let xs: Vec<Action> = (0..50).map(|_| sample_action(&d, &mut a)).collect();
    let ys: Vec<Action> = (0..50).map(|_| sample_action(&d, &mut b)).collect();
    assert_eq!(xs, ys);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let config = tiny_config();
    let params = init_params(&config, 31).unwrap();
    let vocab = Vocab::from_tokens((0..18).map(|i| format!("t{i}")));
    let mut buf = Vec::new();
    write_checkpoint(&params, &vocab, &mut buf).unwrap();
    assert_eq!(&buf[..7], MAGIC);
    let loaded = read_checkpoint(buf.as_slice()).unwrap();
    assert_eq!(loaded.params, params);
    assert_eq!(loaded.vocab, vocab);

    let input = DocumentInput { token_ids: vec![vec![2, 3], vec![5]] };
    let state = ExtractionState::new(2);
    assert_eq!(
        action_distribution(&input, &state, &params).unwrap(),
        action_distribution(&input, &state, &loaded.params).unwrap()
    );
}

#[test]
fn checkpoint_errors_are_distinct() {
    let config = tiny_config();
    let params = init_params(&config, 31).unwrap();
    let vocab = Vocab::from_tokens((0..18).map(|i| format!("t{i}")));
    let mut buf = Vec::new();
    write_checkpoint(&params, &vocab, &mut buf).unwrap();

    let truncated = &buf[..buf.len() - 10];
    assert!(matches!(read_checkpoint(truncated), Err(CheckpointError::TruncatedPayload { .. })));

    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(matches!(read_checkpoint(bad.as_slice()), Err(CheckpointError::BadMagic)));

    let mut future = buf.clone();
    let at = future.windows(11).position(|w| w == b"\"version\":1").unwrap();
    future[at + 10] = b'9';
    assert!(matches!(read_checkpoint(future.as_slice()), Err(CheckpointError::UnsupportedVersion(9))));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&params, &vocab, &path).unwrap();
    let mut other = init_params(&PolicyConfig { hidden_dim: 4, ..config.clone() }, 0).unwrap();
    assert!(matches!(load_checkpoint_into(&path, &mut other), Err(CheckpointError::ShapeMismatch(_))));
    let mut same = init_params(&config, 0).unwrap();
    load_checkpoint_into(&path, &mut same).unwrap();
    assert_eq!(same, params);
}

proptest! {
    #[test]
    fn raising_one_score_shifts_mass_to_it(
        scores in prop::collection::vec(-4.0f64..4.0, 2..8),
        pick in 0usize..8,
        bump in 0.01f64..3.0,
    ) {
        let k = pick % scores.len();
        let remaining: Vec<usize> = (0..scores.len()).collect();
        let base = ActionDistribution::from_logits(remaining.clone(), &scores, 0.0);
        let mut raised = scores.clone();
        raised[k] += bump;
        let next = ActionDistribution::from_logits(remaining, &raised, 0.0);
        prop_assert!(next.sentence_probs[k] > base.sentence_probs[k]);
        for j in (0..scores.len()).filter(|&j| j != k) {
            prop_assert!(next.sentence_probs[j] < base.sentence_probs[j]);
        }
    }

    #[test]
    fn scaling_all_u_keeps_probs(
        us in prop::collection::vec(0.01f64..0.5, 1..8),
        factor in 0.1f64..1.9,
    ) {
        let remaining: Vec<usize> = (0..us.len()).collect();
        let scores: Vec<f64> = us.iter().map(|&u| logit(u)).collect();
        let scaled: Vec<f64> = us.iter().map(|&u| logit(u * factor)).collect();
        let a = ActionDistribution::from_logits(remaining.clone(), &scores, 0.0);
        let b = ActionDistribution::from_logits(remaining, &scaled, 0.0);
        for (x, y) in a.sentence_probs.iter().zip(&b.sentence_probs) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        prop_assert_eq!(a.argmax_sentence(), b.argmax_sentence());
    }
}
