use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError};

/// Average, lower median and 90% quantile of one per-document quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldStats {
    pub average: f64,
    pub median: f64,
    pub q90: f64,
}

impl FieldStats {
    /// Median is the lower-middle element for even counts; q90 is the element
    /// at index `ceil(0.9 n) - 1` of the sorted values.
    pub fn from_counts(counts: &[usize]) -> Option<Self> {
        if counts.is_empty() {
            return None;
        }
        let mut sorted = counts.to_vec();
        sorted.sort_unstable();
        let n = sorted.len();
        let total: usize = sorted.iter().sum();
        let q90_idx = ((0.9 * n as f64).ceil() as usize).max(1) - 1;
        Some(FieldStats {
            average: total as f64 / n as f64,
            median: sorted[(n - 1) / 2] as f64,
            q90: sorted[q90_idx] as f64,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub documents: usize,
    pub words_per_opinion: FieldStats,
    pub sentences_per_opinion: FieldStats,
    /// Summary fields cover only documents that carry a gold summary.
    pub words_per_summary: Option<FieldStats>,
    pub sentences_per_summary: Option<FieldStats>,
    /// Total summary words over total opinion words, for documents with a summary.
    pub compression_ratio: Option<f64>,
}

impl std::fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "documents\t{}", self.documents)?;
        writeln!(f, "field\taverage\tmedian\tq90")?;
        let mut row = |name: &str, s: Option<FieldStats>| match s {
            Some(s) => writeln!(f, "{name}\t{:.1}\t{:.1}\t{:.1}", s.average, s.median, s.q90),
            None => writeln!(f, "{name}\t-\t-\t-"),
        };
        row("words_per_opinion", Some(self.words_per_opinion))?;
        row("sentences_per_opinion", Some(self.sentences_per_opinion))?;
        row("words_per_summary", self.words_per_summary)?;
        row("sentences_per_summary", self.sentences_per_summary)?;
        match self.compression_ratio {
            Some(r) => writeln!(f, "compression_ratio\t{:.1}%", 100.0 * r),
            None => writeln!(f, "compression_ratio\t-"),
        }
    }
}

pub fn compute_stats(corpus: &Corpus) -> Result<CorpusStats, CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::Empty);
    }
    // (words, sentences, summary words and sentences)
    type Row = (usize, usize, Option<(usize, usize)>);
    let rows: Vec<Row> = corpus
        .documents
        .par_iter()
        .map(|d| (d.word_count(), d.len(), d.gold.as_ref().map(|g| (g.word_count(), g.sentences.len()))))
        .collect();

    let words: Vec<usize> = rows.iter().map(|r| r.0).collect();
    let sentences: Vec<usize> = rows.iter().map(|r| r.1).collect();
    let summary_words: Vec<usize> = rows.iter().filter_map(|r| r.2.map(|s| s.0)).collect();
    let summary_sentences: Vec<usize> = rows.iter().filter_map(|r| r.2.map(|s| s.1)).collect();
    let opinion_words_with_summary: usize = rows.iter().filter(|r| r.2.is_some()).map(|r| r.0).sum();
    let total_summary_words: usize = summary_words.iter().sum();

    let compression_ratio = (opinion_words_with_summary > 0)
        .then(|| total_summary_words as f64 / opinion_words_with_summary as f64);

    Ok(CorpusStats {
        documents: corpus.len(),
        words_per_opinion: FieldStats::from_counts(&words).expect("non-empty corpus"),
        sentences_per_opinion: FieldStats::from_counts(&sentences).expect("non-empty corpus"),
        words_per_summary: FieldStats::from_counts(&summary_words),
        sentences_per_summary: FieldStats::from_counts(&summary_sentences),
        compression_ratio,
    })
}
