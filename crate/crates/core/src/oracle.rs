//! Extractive label generation: the greedy oracle used for labeling corpora
//! and an exhaustive oracle for checking it on small documents.
//!
//! The objective treats a selection as a set: selected sentences are scored
//! in document order, whatever order they were picked in.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, GoldSummary};
use crate::metrics::{self, RougeLVariant, RougeScore};

/// Largest document the exhaustive oracle accepts.
pub const EXACT_ORACLE_MAX_SENTENCES: usize = 20;

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("document {0:?} has no gold summary")]
    MissingGold(String),
    #[error("document {id:?} has {sentences} sentences; the exhaustive oracle is limited to {max}, use the greedy oracle")]
    TooLarge { id: String, sentences: usize, max: usize },
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("labels line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("cannot start worker pool: {0}")]
    Pool(String),
}

/// What the oracle maximizes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleObjective {
    /// Mean of ROUGE-1 and ROUGE-2 F1.
    #[default]
    R12,
    /// The training reward (mean of ROUGE-1, ROUGE-2 and flattened ROUGE-L F1).
    Reward,
}

impl FromStr for OracleObjective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "r12" => Ok(OracleObjective::R12),
            "reward" => Ok(OracleObjective::Reward),
            other => Err(format!("unknown oracle objective {other:?} (r12|reward)")),
        }
    }
}

impl OracleObjective {
    /// Score sentences of `document` (any order given; scored in document order).
    pub fn score(self, document: &Document, indices: &[usize], gold: &GoldSummary) -> f64 {
        let mut sorted = indices.to_vec();
        sorted.sort_unstable();
        let candidate = document.selection(&sorted);
        let reference = gold.token_lists();
        match self {
            OracleObjective::R12 => metrics::oracle_objective(&candidate, &reference),
            OracleObjective::Reward => metrics::reward(&candidate, &reference, RougeLVariant::Flattened),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleLabel {
    #[serde(rename = "id")]
    pub doc_id: String,
    /// Sentence indices in selection order.
    pub indices: Vec<usize>,
    pub objective: f64,
}

impl OracleLabel {
    pub fn sorted_indices(&self) -> Vec<usize> {
        let mut v = self.indices.clone();
        v.sort_unstable();
        v
    }
}

/// Greedy run with the objective value after every selection.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyTrace {
    pub label: OracleLabel,
    pub objectives: Vec<f64>,
}

/// Token ids local to one document/gold pair.
struct Interned {
    sentences: Vec<Vec<u32>>,
    gold: Vec<u32>,
}

impl Interned {
    fn new<'a>(document: &'a Document, gold: &'a GoldSummary) -> Self {
        let mut ids: HashMap<&'a str, u32> = HashMap::new();
        let mut intern = |tokens: &'a [String]| -> Vec<u32> {
            tokens
                .iter()
                .map(|t| {
                    let next = ids.len() as u32;
                    *ids.entry(t.as_str()).or_insert(next)
                })
                .collect()
        };
        let gold = gold.sentences.iter().flat_map(|s| intern(&s.tokens)).collect();
        let sentences = document.sentences.iter().map(|s| intern(&s.tokens)).collect();
        Interned { sentences, gold }
    }

    fn flattened(&self, sorted: &[usize]) -> Vec<u32> {
        sorted.iter().flat_map(|&i| self.sentences[i].iter().copied()).collect()
    }

    fn score(&self, objective: OracleObjective, sorted: &[usize]) -> f64 {
        let cand = self.flattened(sorted);
        match objective {
            OracleObjective::R12 => metrics::objective_from_f1(
                metrics::rouge_n(&cand, &self.gold, 1).f1,
                metrics::rouge_n(&cand, &self.gold, 2).f1,
            ),
            OracleObjective::Reward => metrics::reward_from_f1(
                metrics::rouge_n(&cand, &self.gold, 1).f1,
                metrics::rouge_n(&cand, &self.gold, 2).f1,
                metrics::rouge_l(&cand, &self.gold).f1,
            ),
        }
    }
}

/// Running unigram/bigram aggregates of the selected sentences in document
/// order, so each greedy step only scores the change a sentence brings.
struct Aggregates<'a> {
    doc: &'a Interned,
    selected: BTreeSet<usize>,
    len: usize,
    unigrams: HashMap<u32, usize>,
    bigrams: HashMap<(u32, u32), usize>,
    uni_overlap: usize,
    bi_overlap: usize,
    ref_unigrams: HashMap<u32, usize>,
    ref_bigrams: HashMap<(u32, u32), usize>,
}

impl<'a> Aggregates<'a> {
    fn new(doc: &'a Interned) -> Self {
        let mut ref_unigrams = HashMap::new();
        for &t in &doc.gold {
            *ref_unigrams.entry(t).or_default() += 1;
        }
        let mut ref_bigrams = HashMap::new();
        for w in doc.gold.windows(2) {
            *ref_bigrams.entry((w[0], w[1])).or_default() += 1;
        }
        Aggregates {
            doc,
            selected: BTreeSet::new(),
            len: 0,
            unigrams: HashMap::new(),
            bigrams: HashMap::new(),
            uni_overlap: 0,
            bi_overlap: 0,
            ref_unigrams,
            ref_bigrams,
        }
    }

    fn objective_from(&self, uni_overlap: usize, bi_overlap: usize, len: usize) -> f64 {
        let r1 = RougeScore::from_counts(uni_overlap, len, self.doc.gold.len());
        let r2 = RougeScore::from_counts(
            bi_overlap,
            metrics::ngram_total(len, 2),
            metrics::ngram_total(self.doc.gold.len(), 2),
        );
        metrics::objective_from_f1(r1.f1, r2.f1)
    }

    fn objective(&self) -> f64 {
        self.objective_from(self.uni_overlap, self.bi_overlap, self.len)
    }

    /// Bigram count changes caused by inserting sentence `k`.
    fn bigram_delta(&self, k: usize) -> HashMap<(u32, u32), i64> {
        let tokens = &self.doc.sentences[k];
        let mut delta = HashMap::new();
        for w in tokens.windows(2) {
            *delta.entry((w[0], w[1])).or_insert(0) += 1;
        }
        let pred = self.selected.range(..k).next_back().map(|&p| *self.doc.sentences[p].last().unwrap());
        let succ = self.selected.range(k + 1..).next().map(|&s| self.doc.sentences[s][0]);
        let (first, last) = (tokens[0], *tokens.last().unwrap());
        if let Some(p) = pred {
            *delta.entry((p, first)).or_insert(0) += 1;
        }
        if let Some(s) = succ {
            *delta.entry((last, s)).or_insert(0) += 1;
        }
        if let (Some(p), Some(s)) = (pred, succ) {
            *delta.entry((p, s)).or_insert(0) -= 1;
        }
        delta
    }

    fn unigram_delta(&self, k: usize) -> HashMap<u32, i64> {
        let mut delta = HashMap::new();
        for &t in &self.doc.sentences[k] {
            *delta.entry(t).or_insert(0) += 1;
        }
        delta
    }

    fn overlap_change<K: Eq + std::hash::Hash>(
        counts: &HashMap<K, usize>,
        reference: &HashMap<K, usize>,
        delta: &HashMap<K, i64>,
    ) -> i64 {
        delta
            .iter()
            .map(|(g, &d)| {
                let c = counts.get(g).copied().unwrap_or(0) as i64;
                let r = reference.get(g).copied().unwrap_or(0) as i64;
                (c + d).min(r) - c.min(r)
            })
            .sum()
    }

    /// Objective after inserting sentence `k` (which must be non-empty).
    fn objective_with(&self, k: usize) -> f64 {
        let uni = Self::overlap_change(&self.unigrams, &self.ref_unigrams, &self.unigram_delta(k));
        let bi = Self::overlap_change(&self.bigrams, &self.ref_bigrams, &self.bigram_delta(k));
        self.objective_from(
            (self.uni_overlap as i64 + uni) as usize,
            (self.bi_overlap as i64 + bi) as usize,
            self.len + self.doc.sentences[k].len(),
        )
    }

    fn insert(&mut self, k: usize) {
        let uni_delta = self.unigram_delta(k);
        let bi_delta = self.bigram_delta(k);
        self.uni_overlap = (self.uni_overlap as i64
            + Self::overlap_change(&self.unigrams, &self.ref_unigrams, &uni_delta)) as usize;
        self.bi_overlap = (self.bi_overlap as i64
            + Self::overlap_change(&self.bigrams, &self.ref_bigrams, &bi_delta)) as usize;
        apply(&mut self.unigrams, uni_delta);
        apply(&mut self.bigrams, bi_delta);
        self.len += self.doc.sentences[k].len();
        self.selected.insert(k);
    }
}

fn apply<K: Eq + std::hash::Hash>(counts: &mut HashMap<K, usize>, delta: HashMap<K, i64>) {
    for (g, d) in delta {
        let entry = counts.entry(g).or_insert(0);
        *entry = (*entry as i64 + d) as usize;
    }
}

fn gold_of(document: &Document) -> Result<&GoldSummary, OracleError> {
    document.gold.as_ref().ok_or_else(|| OracleError::MissingGold(document.id.clone()))
}

/// Greedy oracle against the document's own gold summary.
pub fn greedy_oracle(document: &Document, objective: OracleObjective) -> Result<OracleLabel, OracleError> {
    greedy_oracle_trace(document, gold_of(document)?, objective).map(|t| t.label)
}

/// Add, one at a time, the sentence with the largest objective gain (lowest
/// index on ties) until no remaining sentence has a positive gain.
pub fn greedy_oracle_trace(
    document: &Document,
    gold: &GoldSummary,
    objective: OracleObjective,
) -> Result<GreedyTrace, OracleError> {
    if gold.word_count() == 0 {
        return Err(OracleError::MissingGold(document.id.clone()));
    }
    let interned = Interned::new(document, gold);
    let mut aggregates = Aggregates::new(&interned);
    let mut indices = Vec::new();
    let mut objectives = Vec::new();
    let mut current = 0.0;

    loop {
        let mut best: Option<(usize, f64)> = None;
        for k in 0..interned.sentences.len() {
            if aggregates.selected.contains(&k) || interned.sentences[k].is_empty() {
                continue;
            }
            let value = match objective {
                OracleObjective::R12 => aggregates.objective_with(k),
                OracleObjective::Reward => {
                    let mut sorted: Vec<usize> = aggregates.selected.iter().copied().collect();
                    let at = sorted.partition_point(|&i| i < k);
                    sorted.insert(at, k);
                    interned.score(objective, &sorted)
                }
            };
            if best.is_none_or(|(_, b)| value - current > b - current) {
                best = Some((k, value));
            }
        }
        match best {
            Some((k, value)) if value - current > 0.0 => {
                aggregates.insert(k);
                indices.push(k);
                objectives.push(value);
                current = value;
            }
            _ => break,
        }
    }
    debug_assert!(objective != OracleObjective::R12 || current == aggregates.objective());

    Ok(GreedyTrace {
        label: OracleLabel { doc_id: document.id.clone(), indices, objective: current },
        objectives,
    })
}

/// Exhaustive search over every subset (up to `max_sentences` sentences).
/// Ties prefer fewer sentences, then the lexicographically smallest index set.
pub fn exact_oracle(
    document: &Document,
    gold: &GoldSummary,
    max_sentences: Option<usize>,
    objective: OracleObjective,
) -> Result<OracleLabel, OracleError> {
    let n = document.len();
    if n > EXACT_ORACLE_MAX_SENTENCES {
        return Err(OracleError::TooLarge {
            id: document.id.clone(),
            sentences: n,
            max: EXACT_ORACLE_MAX_SENTENCES,
        });
    }
    if gold.word_count() == 0 {
        return Err(OracleError::MissingGold(document.id.clone()));
    }
    let interned = Interned::new(document, gold);
    let cap = max_sentences.unwrap_or(n).min(n);
    let mut best: (Vec<usize>, f64) = (Vec::new(), 0.0);

    for size in 1..=cap {
        let mut combo: Vec<usize> = (0..size).collect();
        loop {
            let value = interned.score(objective, &combo);
            if value > best.1 {
                best = (combo.clone(), value);
            }
            // Next combination in lexicographic order.
            let Some(pos) = (0..size).rev().find(|&i| combo[i] < n - size + i) else {
                break;
            };
            combo[pos] += 1;
            for i in pos + 1..size {
                combo[i] = combo[i - 1] + 1;
            }
        }
    }
    Ok(OracleLabel { doc_id: document.id.clone(), indices: best.0, objective: best.1 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelSummary {
    pub labels: Vec<OracleLabel>,
    pub skipped: Vec<SkipRecord>,
    /// Mean objective over labeled documents (0 when none).
    pub mean_objective: f64,
}

/// Greedy-label every document on `workers` threads. Output order follows
/// input order regardless of scheduling.
pub fn label_documents(corpus: &Corpus, workers: usize, objective: OracleObjective) -> Result<LabelSummary, OracleError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| OracleError::Pool(e.to_string()))?;
    let results: Vec<Result<OracleLabel, SkipRecord>> = pool.install(|| {
        corpus
            .documents
            .par_iter()
            .map(|doc| greedy_oracle(doc, objective).map_err(|e| SkipRecord { id: doc.id.clone(), reason: e.to_string() }))
            .collect()
    });
    let mut labels = Vec::new();
    let mut skipped = Vec::new();
    for result in results {
        match result {
            Ok(label) => labels.push(label),
            Err(skip) => skipped.push(skip),
        }
    }
    let mean_objective = if labels.is_empty() {
        0.0
    } else {
        labels.iter().map(|l| l.objective).sum::<f64>() / labels.len() as f64
    };
    Ok(LabelSummary { labels, skipped, mean_objective })
}

/// [`label_documents`] plus writing the labels JSONL to `output`.
pub fn label_corpus(
    corpus: &Corpus,
    output: impl AsRef<Path>,
    workers: usize,
    objective: OracleObjective,
) -> Result<LabelSummary, OracleError> {
    let summary = label_documents(corpus, workers, objective)?;
    save_labels(&summary.labels, output)?;
    Ok(summary)
}

pub fn write_labels<W: Write>(labels: &[OracleLabel], mut writer: W) -> std::io::Result<()> {
    for label in labels {
        serde_json::to_writer(&mut writer, label)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn save_labels(labels: &[OracleLabel], path: impl AsRef<Path>) -> Result<(), OracleError> {
    let path = path.as_ref();
    let io_err = |source| OracleError::Io { path: path.into(), source };
    let file = File::create(path).map_err(io_err)?;
    write_labels(labels, BufWriter::new(file)).map_err(io_err)
}

pub fn read_labels<R: BufRead>(reader: R) -> Result<Vec<OracleLabel>, OracleError> {
    let mut labels = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| OracleError::Parse { line: idx + 1, reason: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let label = serde_json::from_str(&line).map_err(|e| OracleError::Parse { line: idx + 1, reason: e.to_string() })?;
        labels.push(label);
    }
    Ok(labels)
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<OracleLabel>, OracleError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| OracleError::Io { path: path.into(), source })?;
    read_labels(BufReader::new(file))
}
