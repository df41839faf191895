use std::collections::HashMap;

use lexsum::corpus::{read_corpus, write_corpus, Vocab};
use lexsum::extraction::{evaluate, extract, ExtractionConfig, LeadN, OracleExtractor, PolicyExtractor};
use lexsum::oracle::{label_documents, OracleObjective};
use lexsum::policy::{load_checkpoint, save_checkpoint, PolicyConfig, PreparedDocument};
use lexsum::synthetic::{marker_corpus, MarkerCorpusConfig};
use lexsum::training::{train, BestCheckpoint, TrainerConfig, TrainingData};

#[test]
fn raw_text_corpus_round_trips_through_canonical_form() {
    let text = concat!(
        "{\"id\":\"a\",\"text\":\"Mr. Smith appealed. The court agreed! Was it right?\",\"summary\":\"The court agreed.\"}\n",
        "{\"id\":\"b\",\"sentences\":[\"One.\",\"Two words.\"]}\n",
    );
    let corpus = read_corpus(text.as_bytes()).unwrap();
    assert_eq!(corpus.documents[0].len(), 3);
    let mut canonical = Vec::new();
    write_corpus(&corpus, &mut canonical).unwrap();
    assert_eq!(read_corpus(canonical.as_slice()).unwrap(), corpus);
}

#[test]
fn label_train_checkpoint_extract_evaluate() {
    let config = MarkerCorpusConfig { documents: 24, sentences_per_document: 8, markers_per_document: 2, ..Default::default() };
    let corpus = marker_corpus(&config, 3);
    let labels = label_documents(&corpus, 2, OracleObjective::R12).unwrap();
    assert_eq!(labels.labels.len(), 24);
    assert!(labels.skipped.is_empty());
    assert!((labels.mean_objective - 1.0).abs() < 1e-12);

    let vocab = Vocab::build(&corpus, 1);
    let policy = PolicyConfig { vocab_size: vocab.len(), embed_dim: 8, hidden_dim: 8, heads: 2, history_layers: 1, ..PolicyConfig::default() };
    let docs: Vec<PreparedDocument> = corpus.documents.into_iter().map(|d| PreparedDocument::new(d, &vocab, &policy)).collect();
    let (train_docs, val_docs) = docs.split_at(18);
    let by_id: HashMap<String, Vec<usize>> = labels.labels.iter().map(|l| (l.doc_id.clone(), l.indices.clone())).collect();
    let trainer = TrainerConfig { total_updates: 20, eval_interval: 5, warm_start_updates: 5, ..TrainerConfig::default() };

    let dir = tempfile::tempdir().unwrap();
    let best_path = dir.path().join("best.ckpt");
    let data = TrainingData { train: train_docs, val: val_docs, labels: Some(&by_id) };
    let outcome = train(&data, &policy, &trainer, Some(&BestCheckpoint { path: &best_path, vocab: &vocab })).unwrap();
    assert_eq!(outcome.history.iter().map(|h| h.update).collect::<Vec<_>>(), vec![0, 5, 10, 15, 20]);
    let best = outcome.history.iter().map(|h| h.mean_val_reward).fold(f64::MIN, f64::max);
    assert_eq!(best, outcome.best_val_reward);

    let loaded = load_checkpoint(&best_path).unwrap();
    assert_eq!(loaded.vocab, vocab);
    let final_path = dir.path().join("final.ckpt");
    save_checkpoint(&outcome.final_params, &vocab, &final_path).unwrap();
    let reloaded = load_checkpoint(&final_path).unwrap();
    let extraction = ExtractionConfig::default();
    for doc in val_docs {
        assert_eq!(
            extract(doc, &outcome.final_params, &extraction).unwrap(),
            extract(doc, &reloaded.params, &extraction).unwrap()
        );
    }

    let lead = LeadN::new(2);
    let learned = PolicyExtractor { name: "policy".into(), params: &loaded.params, config: extraction };
    let oracle = OracleExtractor::new("oracle", &labels.labels);
    let report = evaluate(val_docs, &[&lead, &learned, &oracle]).unwrap();
    assert_eq!(report.documents, 6);
    assert_eq!(report.rows[2].r2, 100.0);
    assert!(report.rows[0].r2 < 100.0);
}
