//! Deterministic inference, baselines, threshold sweeps and evaluation reports.

use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::metrics::{self, RougeLVariant};
use crate::oracle::OracleLabel;
use crate::policy::{ExtractionState, PolicyError, PolicyParams, PolicySession, PreparedDocument};

pub const DEFAULT_STOP_THRESHOLD: f64 = 0.65;
pub const DEFAULT_LEAD_N: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum ExtractionError {
    #[error("invalid extraction config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("no oracle label for document {0:?}")]
    MissingLabel(String),
    #[error("label for document {id:?} points at sentence {index} of {len}")]
    LabelOutOfRange { id: String, index: usize, len: usize },
    #[error("thresholds must be ascending and within [0, 1]")]
    InvalidThresholds,
    #[error("malformed report line {line}: {reason}")]
    ReportParse { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractionConfig {
    /// Stop as soon as the stop probability exceeds this.
    pub stop_threshold: f64,
    pub max_summary_sentences: usize,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig { stop_threshold: DEFAULT_STOP_THRESHOLD, max_summary_sentences: 50 }
    }
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<(), ExtractionError> {
        if !(0.0..=1.0).contains(&self.stop_threshold) {
            return Err(ExtractionError::InvalidConfig(format!(
                "stop_threshold {} is outside [0, 1]",
                self.stop_threshold
            )));
        }
        Ok(())
    }
}

/// The greedy trajectory with the stop probability seen before each pick.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub indices: Vec<usize>,
    /// `stop_probs[t]` is evaluated before `indices[t]` is chosen. One extra
    /// entry follows the last pick when sentences remain.
    pub stop_probs: Vec<f64>,
}

impl Trajectory {
    /// Number of sentences greedy extraction keeps at threshold `tau`.
    pub fn count_at(&self, tau: f64) -> usize {
        self.stop_probs
            .iter()
            .position(|&p| p > tau)
            .unwrap_or(self.stop_probs.len())
            .min(self.indices.len())
    }
}

/// Greedy argmax extraction ignoring the stop signal, up to `max_sentences`.
pub fn greedy_trajectory(document: &PreparedDocument, params: &PolicyParams, max_sentences: usize) -> Result<Trajectory, ExtractionError> {
    let mut trajectory = Trajectory { indices: Vec::new(), stop_probs: Vec::new() };
    if document.is_empty() {
        return Ok(trajectory);
    }
    let mut session = PolicySession::new(params, &document.input);
    let mut state = ExtractionState::new(document.len());
    while !state.remaining.is_empty() {
        let distribution = session.distribution(&state)?;
        trajectory.stop_probs.push(distribution.stop_prob);
        if state.extracted.len() >= max_sentences {
            break;
        }
        let pick = distribution.argmax_sentence();
        state.select(pick)?;
        trajectory.indices.push(pick);
    }
    Ok(trajectory)
}

/// Sentence indices in extraction order. Before every pick the stop
/// probability is compared with the threshold.
pub fn extract(document: &PreparedDocument, params: &PolicyParams, config: &ExtractionConfig) -> Result<Vec<usize>, ExtractionError> {
    config.validate()?;
    let mut picked = Vec::new();
    if document.is_empty() {
        return Ok(picked);
    }
    let mut session = PolicySession::new(params, &document.input);
    let mut state = ExtractionState::new(document.len());
    while !state.remaining.is_empty() && picked.len() < config.max_summary_sentences {
        let distribution = session.distribution(&state)?;
        if distribution.stop_prob > config.stop_threshold {
            break;
        }
        let pick = distribution.argmax_sentence();
        state.select(pick)?;
        picked.push(pick);
    }
    Ok(picked)
}

pub fn lead_n(document: &PreparedDocument, n: usize) -> Vec<usize> {
    (0..n.min(document.document.len())).collect()
}

/// Training reward of an extraction (selected sentences in the given order).
pub fn score_reward(document: &PreparedDocument, indices: &[usize], variant: RougeLVariant) -> Option<f64> {
    let gold = document.document.gold.as_ref()?;
    Some(metrics::reward(&document.document.selection(indices), &gold.token_lists(), variant))
}

pub trait Extractor: Sync {
    fn name(&self) -> &str;
    fn extract(&self, document: &PreparedDocument) -> Result<Vec<usize>, ExtractionError>;
}

pub struct LeadN {
    pub n: usize,
    name: String,
}

impl LeadN {
    pub fn new(n: usize) -> Self {
        LeadN { n, name: format!("lead-{n}") }
    }
}

impl Extractor for LeadN {
    fn name(&self) -> &str {
        &self.name
    }

    fn extract(&self, document: &PreparedDocument) -> Result<Vec<usize>, ExtractionError> {
        Ok(lead_n(document, self.n))
    }
}

pub struct PolicyExtractor<'p> {
    pub name: String,
    pub params: &'p PolicyParams,
    pub config: ExtractionConfig,
}

impl Extractor for PolicyExtractor<'_> {
    fn name(&self) -> &str {
        &self.name
    }

    fn extract(&self, document: &PreparedDocument) -> Result<Vec<usize>, ExtractionError> {
        extract(document, self.params, &self.config)
    }
}

/// Replays stored oracle labels (in document order).
pub struct OracleExtractor {
    pub name: String,
    labels: HashMap<String, Vec<usize>>,
}

impl OracleExtractor {
    pub fn new(name: impl Into<String>, labels: &[OracleLabel]) -> Self {
        OracleExtractor {
            name: name.into(),
            labels: labels.iter().map(|l| (l.doc_id.clone(), l.sorted_indices())).collect(),
        }
    }
}

impl Extractor for OracleExtractor {
    fn name(&self) -> &str {
        &self.name
    }

    fn extract(&self, document: &PreparedDocument) -> Result<Vec<usize>, ExtractionError> {
        let id = &document.document.id;
        let indices = self.labels.get(id).ok_or_else(|| ExtractionError::MissingLabel(id.clone()))?;
        let len = document.document.len();
        if let Some(&index) = indices.iter().find(|&&i| i >= len) {
            return Err(ExtractionError::LabelOutOfRange { id: id.clone(), index, len });
        }
        Ok(indices.clone())
    }
}

/// One system's corpus-average F1 scores, as percentages with one decimal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub system: String,
    pub r1: f64,
    pub r2: f64,
    pub rl: f64,
    pub rl_sum: f64,
    /// Mean extracted sentences per document, two decimals.
    pub mean_sentences: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub documents: usize,
    /// Documents without a gold summary.
    pub skipped: usize,
}

fn round_to(value: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    (value * scale).round() / scale
}

const REPORT_HEADER: &str = "system\tr1_f\tr2_f\trl_f\trl_sum_f\tmean_sentences";

impl EvalReport {
    pub fn render(&self) -> String {
        let mut out = format!("# documents={} skipped={}\n{REPORT_HEADER}\n", self.documents, self.skipped);
        for row in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{:.1}\t{:.1}\t{:.1}\t{:.1}\t{:.2}",
                row.system, row.r1, row.r2, row.rl, row.rl_sum, row.mean_sentences
            );
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, ExtractionError> {
        let fail = |line: usize, reason: &str| ExtractionError::ReportParse { line, reason: reason.to_string() };
        let mut lines = text.lines().enumerate();
        let (_, meta) = lines.next().ok_or_else(|| fail(1, "empty report"))?;
        let mut documents = None;
        let mut skipped = None;
        for field in meta.strip_prefix("# ").ok_or_else(|| fail(1, "missing summary line"))?.split_whitespace() {
            match field.split_once('=') {
                Some(("documents", v)) => documents = v.parse().ok(),
                Some(("skipped", v)) => skipped = v.parse().ok(),
                _ => return Err(fail(1, "unknown summary field")),
            }
        }
        let (documents, skipped) = documents.zip(skipped).ok_or_else(|| fail(1, "incomplete summary line"))?;
        match lines.next() {
            Some((_, header)) if header == REPORT_HEADER => {}
            _ => return Err(fail(2, "missing column header")),
        }
        let mut rows = Vec::new();
        for (idx, line) in lines {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 6 {
                return Err(fail(idx + 1, "expected 6 columns"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| fail(idx + 1, "bad number"));
            rows.push(EvalRow {
                system: fields[0].to_string(),
                r1: num(fields[1])?,
                r2: num(fields[2])?,
                rl: num(fields[3])?,
                rl_sum: num(fields[4])?,
                mean_sentences: num(fields[5])?,
            });
        }
        Ok(EvalReport { rows, documents, skipped })
    }
}

/// Extractions of every system on every document with a gold summary.
/// `result[s][d]` is system `s` on the `d`-th scored document.
#[allow(clippy::type_complexity)]
pub fn run_systems<'d>(
    documents: &'d [PreparedDocument],
    systems: &[&dyn Extractor],
) -> Result<(Vec<&'d PreparedDocument>, Vec<Vec<Vec<usize>>>), ExtractionError> {
    let scored: Vec<&PreparedDocument> = documents.iter().filter(|d| d.document.gold.is_some()).collect();
    let outputs = systems
        .iter()
        .map(|system| scored.par_iter().map(|doc| system.extract(doc)).collect::<Result<Vec<_>, _>>())
        .collect::<Result<Vec<_>, _>>()?;
    Ok((scored, outputs))
}

/// Macro-averaged ROUGE F1 per system, rows in the order given.
pub fn evaluate(documents: &[PreparedDocument], systems: &[&dyn Extractor]) -> Result<EvalReport, ExtractionError> {
    let (scored, outputs) = run_systems(documents, systems)?;
    let n = scored.len().max(1) as f64;
    let rows = systems
        .iter()
        .zip(&outputs)
        .map(|(system, extractions)| {
            let reports: Vec<metrics::RougeReport> = scored
                .par_iter()
                .zip(extractions)
                .map(|(doc, indices)| {
                    let gold = doc.document.gold.as_ref().expect("filtered on gold");
                    metrics::rouge_report(&doc.document.selection(indices), &gold.token_lists())
                })
                .collect();
            let mean = |f: fn(&metrics::RougeReport) -> f64| round_to(100.0 * reports.iter().map(f).sum::<f64>() / n, 1);
            EvalRow {
                system: system.name().to_string(),
                r1: mean(|r| r.r1.f1),
                r2: mean(|r| r.r2.f1),
                rl: mean(|r| r.rl.f1),
                rl_sum: mean(|r| r.rl_sum.f1),
                mean_sentences: round_to(extractions.iter().map(Vec::len).sum::<usize>() as f64 / n, 2),
            }
        })
        .collect();
    Ok(EvalReport { rows, documents: scored.len(), skipped: documents.len() - scored.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau: f64,
    pub mean_sentences: f64,
    pub mean_reward: f64,
    /// Corpus-average F1 of ROUGE-1, ROUGE-2 and ROUGE-L.
    pub r1: f64,
    pub r2: f64,
    pub rl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Highest mean reward; the smaller threshold on ties.
    pub recommended_tau: f64,
    /// `counts[d][k]`: sentences extracted from document `d` at threshold `k`.
    pub counts: Vec<Vec<usize>>,
}

impl SweepReport {
    pub fn render(&self) -> String {
        let mut out = String::from("tau\tmean_sentences\tmean_reward\tr1_f\tr2_f\trl_f\n");
        for row in &self.rows {
            let _ = writeln!(
                out,
                "{:.4}\t{:.4}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                row.tau, row.mean_sentences, row.mean_reward, row.r1, row.r2, row.rl
            );
        }
        let _ = writeln!(out, "# recommended_tau={:.4} (default {DEFAULT_STOP_THRESHOLD})", self.recommended_tau);
        out
    }
}

/// `start:end:step` inclusive of both ends up to rounding.
pub fn threshold_grid(start: f64, end: f64, step: f64) -> Vec<f64> {
    if step <= 0.0 || end < start {
        return vec![start];
    }
    let count = ((end - start) / step + 1e-9).floor() as usize;
    (0..=count).map(|k| round_to(start + k as f64 * step, 10)).collect()
}

/// Evaluate extraction at every threshold from one greedy trajectory per
/// document: a higher threshold only moves the first crossing later.
pub fn sweep_threshold(
    documents: &[PreparedDocument],
    params: &PolicyParams,
    thresholds: &[f64],
    max_summary_sentences: usize,
    variant: RougeLVariant,
) -> Result<SweepReport, ExtractionError> {
    let ascending = thresholds.windows(2).all(|w| w[0] <= w[1]);
    if thresholds.is_empty() || !ascending || thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(ExtractionError::InvalidThresholds);
    }
    let scored: Vec<&PreparedDocument> = documents.iter().filter(|d| d.document.gold.is_some()).collect();
    let per_doc: Vec<(Vec<usize>, Vec<metrics::RougeTriple>)> = scored
        .par_iter()
        .map(|doc| {
            let trajectory = greedy_trajectory(doc, params, max_summary_sentences)?;
            let gold = doc.document.gold.as_ref().expect("filtered on gold").token_lists();
            let counts: Vec<usize> = thresholds.iter().map(|&t| trajectory.count_at(t)).collect();
            let triples = counts
                .iter()
                .map(|&c| metrics::rouge_triple(&doc.document.selection(&trajectory.indices[..c]), &gold, variant))
                .collect();
            Ok((counts, triples))
        })
        .collect::<Result<_, ExtractionError>>()?;

    let n = scored.len().max(1) as f64;
    let rows: Vec<SweepRow> = thresholds
        .iter()
        .enumerate()
        .map(|(k, &tau)| {
            let sum = |f: &dyn Fn(&metrics::RougeTriple) -> f64| per_doc.iter().map(|(_, t)| f(&t[k])).sum::<f64>() / n;
            SweepRow {
                tau,
                mean_sentences: per_doc.iter().map(|(c, _)| c[k]).sum::<usize>() as f64 / n,
                mean_reward: sum(&|t| metrics::reward_from_f1(t.r1.f1, t.r2.f1, t.rl.f1)),
                r1: sum(&|t| t.r1.f1),
                r2: sum(&|t| t.r2.f1),
                rl: sum(&|t| t.rl.f1),
            }
        })
        .collect();
    let mut best = 0;
    for (k, row) in rows.iter().enumerate() {
        if row.mean_reward > rows[best].mean_reward {
            best = k;
        }
    }
    Ok(SweepReport {
        recommended_tau: rows[best].tau,
        rows,
        counts: per_doc.into_iter().map(|(c, _)| c).collect(),
    })
}
