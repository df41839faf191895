use std::collections::HashMap;

use super::Corpus;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Token index space for the policy's embedding table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    ids: HashMap<String, usize>,
    tokens: Vec<String>,
}

impl Vocab {
    /// Tokens with corpus frequency `>= min_freq`, most frequent first, ties
    /// in lexicographic order. Only document sentences are counted.
    pub fn build(corpus: &Corpus, min_freq: usize) -> Self {
        let min_freq = min_freq.max(1);
        let mut freq: HashMap<&str, usize> = HashMap::new();
        for doc in &corpus.documents {
            for sentence in &doc.sentences {
                for token in &sentence.tokens {
                    *freq.entry(token.as_str()).or_default() += 1;
                }
            }
        }
        let mut kept: Vec<(&str, usize)> = freq.into_iter().filter(|&(_, c)| c >= min_freq).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Vocab::from_tokens(kept.into_iter().map(|(t, _)| t.to_string()))
    }

    /// Rebuild from the non-special tokens in id order (ids start at 2).
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Self {
        let mut vocab = Vocab {
            ids: HashMap::new(),
            tokens: vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()],
        };
        for token in tokens {
            if !vocab.ids.contains_key(&token) {
                vocab.ids.insert(token.clone(), vocab.tokens.len());
                vocab.tokens.push(token);
            }
        }
        vocab
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Non-special tokens in id order.
    pub fn entries(&self) -> &[String] {
        &self.tokens[2..]
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }
}
