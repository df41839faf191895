//! Seeded synthetic corpora for tests and the learnability experiment.

use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Document};

/// Documents where a few "marker" sentences, written with their own
/// vocabulary, form the gold summary.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerCorpusConfig {
    pub documents: usize,
    pub sentences_per_document: usize,
    pub markers_per_document: usize,
    pub filler_vocab: usize,
    pub marker_vocab: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub id_prefix: String,
}

impl Default for MarkerCorpusConfig {
    fn default() -> Self {
        MarkerCorpusConfig {
            documents: 200,
            sentences_per_document: 20,
            markers_per_document: 4,
            filler_vocab: 200,
            marker_vocab: 40,
            min_tokens: 5,
            max_tokens: 10,
            id_prefix: "doc".into(),
        }
    }
}

fn sentence(rng: &mut ChaCha8Rng, prefix: &str, vocab: usize, min: usize, max: usize) -> String {
    let len = rng.gen_range(min..=max);
    let words: Vec<String> = (0..len).map(|_| format!("{prefix}{}", rng.gen_range(0..vocab))).collect();
    let mut text = words.join(" ");
    text.push('.');
    text
}

/// Markers sit at random positions; the gold lists them in document order.
pub fn marker_corpus(config: &MarkerCorpusConfig, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = config.sentences_per_document;
    let markers = config.markers_per_document.min(n);
    let documents = (0..config.documents)
        .map(|d| {
            let mut positions = sample(&mut rng, n, markers).into_vec();
            positions.sort_unstable();
            let sentences: Vec<String> = (0..n)
                .map(|i| {
                    let (prefix, vocab) =
                        if positions.contains(&i) { ("m", config.marker_vocab) } else { ("f", config.filler_vocab) };
                    sentence(&mut rng, prefix, vocab, config.min_tokens, config.max_tokens)
                })
                .collect();
            let gold: Vec<String> = positions.iter().map(|&i| sentences[i].clone()).collect();
            Document::from_sentences(format!("{}{d:04}", config.id_prefix), &sentences, Some(&gold))
        })
        .collect();
    Corpus::new(documents)
}

/// A short random document over tokens `w0..w{vocab}`. With `verbatim` the
/// gold is a random non-empty subset of the document's own sentences;
/// otherwise it is freshly sampled text.
pub fn random_document<R: Rng + ?Sized>(rng: &mut R, id: &str, max_sentences: usize, vocab: usize, verbatim: bool) -> Document {
    let n = rng.gen_range(1..=max_sentences.max(1));
    let make = |rng: &mut R| -> String {
        let len = rng.gen_range(1..=8);
        (0..len).map(|_| format!("w{}", rng.gen_range(0..vocab))).collect::<Vec<_>>().join(" ")
    };
    let sentences: Vec<String> = (0..n).map(|_| make(rng)).collect();
    let gold: Vec<String> = if verbatim {
        let k = rng.gen_range(1..=n);
        let mut picked = sample(rng, n, k).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| sentences[i].clone()).collect()
    } else {
        (0..rng.gen_range(1..=3)).map(|_| make(rng)).collect()
    };
    Document::from_sentences(id, &sentences, Some(&gold))
}
