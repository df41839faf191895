//! Flat `key = value` training configuration.

use std::collections::BTreeMap;
use std::path::Path;

use lexsum::policy::PolicyConfig;
use lexsum::training::TrainerConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Io { path: String, message: String },
    #[error("config line {line}: expected `key = value`, found {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown config key {key:?}{}; valid keys: {}", suggestion_text(.suggestion), KEYS.join(", "))]
    UnknownKey { key: String, suggestion: Option<String> },
    #[error("config key {key}: cannot use {value:?}: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

fn suggestion_text(suggestion: &Option<String>) -> String {
    suggestion.as_ref().map(|s| format!(" (did you mean {s:?}?)")).unwrap_or_default()
}

/// Keys accepted in config files and `--set` overrides.
pub const KEYS: &[&str] = &[
    "learning_rate",
    "episodes_per_update",
    "samples_per_document",
    "max_steps",
    "total_updates",
    "eval_interval",
    "seed",
    "reward_variant",
    "optimizer",
    "warm_start_updates",
    "stop_threshold",
    "max_summary_sentences",
    "embed_dim",
    "hidden_dim",
    "heads",
    "history_layers",
    "max_sentences",
    "max_tokens_per_sentence",
    "min_freq",
];

/// Everything `train` needs besides its input paths. `policy.vocab_size` is
/// filled in from the training vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub policy: PolicyConfig,
    pub trainer: TrainerConfig,
    pub min_freq: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings { policy: PolicyConfig::default(), trainer: TrainerConfig::default(), min_freq: 1 }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

pub fn suggest(key: &str) -> Option<String> {
    KEYS.iter()
        .map(|k| (strsim::damerau_levenshtein(key, k), *k))
        .filter(|&(d, k)| d <= 3.max(k.len() / 3))
        .min()
        .map(|(_, k)| k.to_string())
}

impl TrainSettings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let (p, t) = (&mut self.policy, &mut self.trainer);
        match key {
            "learning_rate" => t.learning_rate = parse(key, value)?,
            "episodes_per_update" => t.episodes_per_update = parse(key, value)?,
            "samples_per_document" => t.samples_per_document = parse(key, value)?,
            "max_steps" => t.max_steps = parse(key, value)?,
            "total_updates" => t.total_updates = parse(key, value)?,
            "eval_interval" => t.eval_interval = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "reward_variant" => t.reward_variant = parse(key, value)?,
            "optimizer" => t.optimizer = parse(key, value)?,
            "warm_start_updates" => t.warm_start_updates = parse(key, value)?,
            "stop_threshold" => t.extraction.stop_threshold = parse(key, value)?,
            "max_summary_sentences" => t.extraction.max_summary_sentences = parse(key, value)?,
            "embed_dim" => p.embed_dim = parse(key, value)?,
            "hidden_dim" => p.hidden_dim = parse(key, value)?,
            "heads" => p.heads = parse(key, value)?,
            "history_layers" => p.history_layers = parse(key, value)?,
            "max_sentences" => p.max_sentences = parse(key, value)?,
            "max_tokens_per_sentence" => p.max_tokens_per_sentence = parse(key, value)?,
            "min_freq" => self.min_freq = parse(key, value)?,
            _ => return Err(ConfigError::UnknownKey { key: key.to_string(), suggestion: suggest(key) }),
        }
        Ok(())
    }

    /// Every key with its resolved value, for manifests.
    pub fn entries(&self) -> BTreeMap<String, String> {
        let (p, t) = (&self.policy, &self.trainer);
        let values = [
            t.learning_rate.to_string(),
            t.episodes_per_update.to_string(),
            t.samples_per_document.to_string(),
            t.max_steps.to_string(),
            t.total_updates.to_string(),
            t.eval_interval.to_string(),
            t.seed.to_string(),
            t.reward_variant.to_string(),
            t.optimizer.to_string(),
            t.warm_start_updates.to_string(),
            t.extraction.stop_threshold.to_string(),
            t.extraction.max_summary_sentences.to_string(),
            p.embed_dim.to_string(),
            p.hidden_dim.to_string(),
            p.heads.to_string(),
            p.history_layers.to_string(),
            p.max_sentences.to_string(),
            p.max_tokens_per_sentence.to_string(),
            self.min_freq.to_string(),
        ];
        KEYS.iter().map(|k| k.to_string()).zip(values).collect()
    }
}

/// Parse `key = value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut pairs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ConfigError::Syntax { line: idx + 1, text: raw.to_string() })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(ConfigError::Syntax { line: idx + 1, text: raw.to_string() });
        }
        pairs.push((key.to_string(), value.to_string()));
    }
    Ok(pairs)
}

pub fn parse_override(text: &str) -> Result<(String, String), ConfigError> {
    match parse_pairs(text)?.as_slice() {
        [pair] => Ok(pair.clone()),
        _ => Err(ConfigError::Syntax { line: 0, text: text.to_string() }),
    }
}

/// Defaults, then the file (if any), then `overrides` in order.
pub fn load_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<TrainSettings, ConfigError> {
    let mut settings = TrainSettings::default();
    if let Some(path) = path {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
        for (key, value) in parse_pairs(&text)? {
            settings.set(&key, &value)?;
        }
    }
    for (key, value) in overrides {
        settings.set(key, value)?;
    }
    settings.trainer.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let mut probe = settings.policy.clone();
    probe.vocab_size = probe.vocab_size.max(2);
    probe.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    if settings.min_freq == 0 {
        return Err(ConfigError::Invalid("min_freq must be at least 1".into()));
    }
    Ok(settings)
}
