//! Documents, corpus ingestion and corpus-level utilities.

mod segment;
mod split;
mod stats;
mod tokenize;
mod vocab;

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use segment::{segment_text, ABBREVIATIONS};
pub use split::{split_corpus, CorpusSplit, SplitRatios};
pub use stats::{compute_stats, CorpusStats, FieldStats};
pub use tokenize::tokenize;
pub use vocab::{Vocab, PAD_ID, UNK_ID};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed JSON: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: {reason}")]
    InvalidRecord { line: usize, reason: String },
    #[error("line {line}: duplicate document id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("corpus is empty")]
    Empty,
    #[error("invalid split ratios: {0}")]
    InvalidRatios(String),
    #[error("corpus of {size} documents cannot fill {parts} non-empty splits")]
    TooSmall { size: usize, parts: usize },
}

/// One sentence with its metric tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub raw: String,
    pub tokens: Vec<String>,
}

impl Sentence {
    pub fn new(raw: impl Into<String>) -> Self {
        let raw = raw.into();
        let tokens = tokenize(&raw);
        Sentence { raw, tokens }
    }
}

/// Reference summary text, segmented into sentences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldSummary {
    pub sentences: Vec<Sentence>,
}

impl GoldSummary {
    pub fn token_lists(&self) -> Vec<&[String]> {
        self.sentences.iter().map(|s| s.tokens.as_slice()).collect()
    }

    pub fn word_count(&self) -> usize {
        self.sentences.iter().map(|s| s.tokens.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub sentences: Vec<Sentence>,
    pub gold: Option<GoldSummary>,
}

impl Document {
    /// Build a document from sentence texts, dropping sentences without tokens.
    pub fn from_sentences<S: AsRef<str>>(
        id: impl Into<String>,
        sentences: &[S],
        summary: Option<&[S]>,
    ) -> Self {
        let keep = |texts: &[S]| -> Vec<Sentence> {
            texts
                .iter()
                .map(|t| Sentence::new(t.as_ref().trim()))
                .filter(|s| !s.tokens.is_empty())
                .collect()
        };
        let gold = summary
            .map(|texts| GoldSummary { sentences: keep(texts) })
            .filter(|g| !g.sentences.is_empty());
        Document { id: id.into(), sentences: keep(sentences), gold }
    }

    /// Segment raw text (and optional raw summary) into a document.
    pub fn from_text(id: impl Into<String>, text: &str, summary: Option<&str>) -> Self {
        let sentences = segment_text(text);
        let summary = summary.map(segment_text);
        Document::from_sentences(id, &sentences, summary.as_deref())
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn word_count(&self) -> usize {
        self.sentences.iter().map(|s| s.tokens.len()).sum()
    }

    pub fn token_lists(&self) -> Vec<&[String]> {
        self.sentences.iter().map(|s| s.tokens.as_slice()).collect()
    }

    /// Token lists of the given sentences, in the order given.
    pub fn selection(&self, indices: &[usize]) -> Vec<&[String]> {
        indices.iter().map(|&i| self.sentences[i].tokens.as_slice()).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub documents: Vec<Document>,
}

impl Corpus {
    pub fn new(documents: Vec<Document>) -> Self {
        Corpus { documents }
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Document> {
        self.documents.iter()
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: String,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    summary: Option<String>,
    #[serde(default)]
    sentences: Option<Vec<String>>,
    #[serde(default)]
    summary_sentences: Option<Vec<String>>,
}

#[derive(Serialize)]
struct CanonicalRecord<'a> {
    id: &'a str,
    sentences: Vec<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    summary_sentences: Option<Vec<&'a str>>,
}

fn parse_record(line_no: usize, line: &str) -> Result<Document, CorpusError> {
    let record: RawRecord =
        serde_json::from_str(line).map_err(|source| CorpusError::Json { line: line_no, source })?;
    let invalid = |reason: &str| CorpusError::InvalidRecord { line: line_no, reason: reason.into() };
    match (record.text, record.sentences) {
        (Some(text), None) => {
            if record.summary_sentences.is_some() {
                return Err(invalid("\"summary_sentences\" requires the \"sentences\" form"));
            }
            Ok(Document::from_text(record.id, &text, record.summary.as_deref()))
        }
        (None, Some(sentences)) => {
            if record.summary.is_some() {
                return Err(invalid("\"summary\" requires the \"text\" form"));
            }
            Ok(Document::from_sentences(record.id, &sentences, record.summary_sentences.as_deref()))
        }
        (Some(_), Some(_)) => Err(invalid("record has both \"text\" and \"sentences\"")),
        (None, None) => Err(invalid("record has neither \"text\" nor \"sentences\"")),
    }
}

/// Parse corpus JSONL from a reader. Blank lines are skipped; line numbers are 1-based.
pub fn read_corpus<R: BufRead>(reader: R) -> Result<Corpus, CorpusError> {
    let mut documents = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| CorpusError::InvalidRecord {
            line: line_no,
            reason: format!("unreadable line: {e}"),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let doc = parse_record(line_no, &line)?;
        if !seen.insert(doc.id.clone()) {
            return Err(CorpusError::DuplicateId { line: line_no, id: doc.id });
        }
        documents.push(doc);
    }
    Ok(Corpus { documents })
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CorpusError::Io { path: path.into(), source })?;
    read_corpus(BufReader::new(file))
}

/// Write the canonical pre-segmented JSONL form.
pub fn write_corpus<W: Write>(corpus: &Corpus, mut writer: W) -> std::io::Result<()> {
    for doc in &corpus.documents {
        let record = CanonicalRecord {
            id: &doc.id,
            sentences: doc.sentences.iter().map(|s| s.raw.as_str()).collect(),
            summary_sentences: doc
                .gold
                .as_ref()
                .map(|g| g.sentences.iter().map(|s| s.raw.as_str()).collect()),
        };
        serde_json::to_writer(&mut writer, &record)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io { path: path.into(), source };
    let file = File::create(path).map_err(io_err)?;
    write_corpus(corpus, BufWriter::new(file)).map_err(io_err)
}
