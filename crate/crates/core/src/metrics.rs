//! ROUGE-N, ROUGE-L and summary-level ROUGE-L, plus the two scalar
//! objectives built from them: the training reward and the oracle objective.
//!
//! Summaries are lists of tokenized sentences. ROUGE-N and ROUGE-L of a
//! summary flatten its sentences into one token sequence in the order given,
//! so n-grams may span a sentence boundary. ROUGE-Lsum keeps the sentence
//! structure.

use std::collections::HashMap;
use std::hash::Hash;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    /// Precision and recall from a hit count; empty denominators give zero.
    pub fn from_counts(hits: usize, candidate_total: usize, reference_total: usize) -> Self {
        let ratio = |den: usize| if den == 0 { 0.0 } else { hits as f64 / den as f64 };
        let precision = ratio(candidate_total);
        let recall = ratio(reference_total);
        RougeScore { precision, recall, f1: f1(precision, recall) }
    }
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Which ROUGE-L feeds the reward.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RougeLVariant {
    /// LCS of the flattened candidate and reference token sequences.
    #[default]
    Flattened,
    /// Union-LCS per reference sentence (ROUGE-Lsum).
    SummaryLevel,
}

impl FromStr for RougeLVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "flattened" | "rougeL" => Ok(RougeLVariant::Flattened),
            "summary_level" | "rougeLsum" => Ok(RougeLVariant::SummaryLevel),
            other => Err(format!("unknown ROUGE-L variant {other:?} (flattened|summary_level)")),
        }
    }
}

impl std::fmt::Display for RougeLVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RougeLVariant::Flattened => "flattened",
            RougeLVariant::SummaryLevel => "summary_level",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeTriple {
    pub r1: RougeScore,
    pub r2: RougeScore,
    pub rl: RougeScore,
}

/// Every variant reported in an evaluation row.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeReport {
    pub r1: RougeScore,
    pub r2: RougeScore,
    pub rl: RougeScore,
    pub rl_sum: RougeScore,
}

impl RougeReport {
    pub fn triple(&self, variant: RougeLVariant) -> RougeTriple {
        let rl = match variant {
            RougeLVariant::Flattened => self.rl,
            RougeLVariant::SummaryLevel => self.rl_sum,
        };
        RougeTriple { r1: self.r1, r2: self.r2, rl }
    }
}

pub fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    assert!(n >= 1, "n-gram order must be at least 1");
    let mut counts = HashMap::new();
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Clipped overlap `sum_g min(count_a(g), count_b(g))`.
pub fn clipped_overlap<K: Eq + Hash>(a: &HashMap<K, usize>, b: &HashMap<K, usize>) -> usize {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    small.iter().map(|(g, &c)| c.min(large.get(g).copied().unwrap_or(0))).sum()
}

pub fn ngram_total(len: usize, n: usize) -> usize {
    (len + 1).saturating_sub(n)
}

pub fn rouge_n<T: Eq + Hash>(candidate: &[T], reference: &[T], n: usize) -> RougeScore {
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    RougeScore::from_counts(
        clipped_overlap(&cand, &refs),
        ngram_total(candidate.len(), n),
        ngram_total(reference.len(), n),
    )
}

/// ROUGE-N between two summaries given as sentence lists.
pub fn rouge_n_summary<T: Eq + Hash>(candidate: &[&[T]], reference: &[&[T]], n: usize) -> RougeScore {
    rouge_n(&flatten(candidate), &flatten(reference), n)
}

fn lcs_table<T: Eq>(a: &[T], b: &[T]) -> Vec<Vec<u32>> {
    let mut table = vec![vec![0u32; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            table[i][j] = if a[i - 1] == b[j - 1] {
                table[i - 1][j - 1] + 1
            } else {
                table[i - 1][j].max(table[i][j - 1])
            };
        }
    }
    table
}

pub fn lcs_length<T: Eq>(a: &[T], b: &[T]) -> usize {
    // Two rolling rows keep memory linear in the shorter side.
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    let mut prev = vec![0usize; short.len() + 1];
    let mut cur = vec![0usize; short.len() + 1];
    for x in long {
        for (j, y) in short.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[short.len()]
}

pub fn rouge_l<T: Eq>(candidate: &[T], reference: &[T]) -> RougeScore {
    RougeScore::from_counts(lcs_length(candidate, reference), candidate.len(), reference.len())
}

/// Positions in `reference` covered by one LCS with `candidate`, using the
/// usual backtrack (prefer moving along the candidate on ties).
fn lcs_positions<T: Eq>(reference: &[T], candidate: &[T]) -> Vec<usize> {
    let table = lcs_table(reference, candidate);
    let (mut i, mut j) = (reference.len(), candidate.len());
    let mut positions = Vec::new();
    while i > 0 && j > 0 {
        if reference[i - 1] == candidate[j - 1] {
            positions.push(i - 1);
            i -= 1;
            j -= 1;
        } else if table[i][j - 1] > table[i - 1][j] {
            j -= 1;
        } else {
            i -= 1;
        }
    }
    positions.reverse();
    positions
}

/// Summary-level ROUGE-L: for each reference sentence, take the union of its
/// LCS positions against every candidate sentence, then count hits with each
/// token occurrence usable once on each side.
pub fn rouge_l_sum<T: Eq + Hash>(candidate: &[&[T]], reference: &[&[T]]) -> RougeScore {
    let cand_total: usize = candidate.iter().map(|s| s.len()).sum();
    let ref_total: usize = reference.iter().map(|s| s.len()).sum();
    if cand_total == 0 || ref_total == 0 {
        return RougeScore::default();
    }
    let mut cand_left: HashMap<&T, usize> = HashMap::new();
    for token in candidate.iter().flat_map(|s| s.iter()) {
        *cand_left.entry(token).or_default() += 1;
    }
    let mut ref_left: HashMap<&T, usize> = HashMap::new();
    for token in reference.iter().flat_map(|s| s.iter()) {
        *ref_left.entry(token).or_default() += 1;
    }

    let mut hits = 0usize;
    for ref_sentence in reference {
        let mut union: Vec<usize> = candidate
            .iter()
            .flat_map(|c| lcs_positions(ref_sentence, c))
            .collect();
        union.sort_unstable();
        union.dedup();
        for pos in union {
            let token = &ref_sentence[pos];
            let (Some(c), Some(r)) = (cand_left.get_mut(token), ref_left.get_mut(token)) else {
                continue;
            };
            if *c > 0 && *r > 0 {
                *c -= 1;
                *r -= 1;
                hits += 1;
            }
        }
    }
    RougeScore::from_counts(hits, cand_total, ref_total)
}

fn flatten<'a, T>(sentences: &[&'a [T]]) -> Vec<&'a T> {
    sentences.iter().flat_map(|s| s.iter()).collect()
}

pub fn rouge_report<T: Eq + Hash>(candidate: &[&[T]], reference: &[&[T]]) -> RougeReport {
    RougeReport {
        r1: rouge_n_summary(candidate, reference, 1),
        r2: rouge_n_summary(candidate, reference, 2),
        rl: rouge_l(&flatten(candidate), &flatten(reference)),
        rl_sum: rouge_l_sum(candidate, reference),
    }
}

pub fn rouge_triple<T: Eq + Hash>(candidate: &[&[T]], reference: &[&[T]], variant: RougeLVariant) -> RougeTriple {
    let rl = match variant {
        RougeLVariant::Flattened => rouge_l(&flatten(candidate), &flatten(reference)),
        RougeLVariant::SummaryLevel => rouge_l_sum(candidate, reference),
    };
    RougeTriple {
        r1: rouge_n_summary(candidate, reference, 1),
        r2: rouge_n_summary(candidate, reference, 2),
        rl,
    }
}

/// Mean of the three F1 scores.
pub fn reward_from_f1(r1: f64, r2: f64, rl: f64) -> f64 {
    (r1 + r2 + rl) / 3.0
}

/// Terminal episode reward: mean of ROUGE-1, ROUGE-2 and ROUGE-L F1.
pub fn reward<T: Eq + Hash>(candidate: &[&[T]], reference: &[&[T]], variant: RougeLVariant) -> f64 {
    let t = rouge_triple(candidate, reference, variant);
    reward_from_f1(t.r1.f1, t.r2.f1, t.rl.f1)
}

pub fn objective_from_f1(r1: f64, r2: f64) -> f64 {
    (r1 + r2) / 2.0
}

/// Label-generation objective: mean of ROUGE-1 and ROUGE-2 F1.
pub fn oracle_objective<T: Eq + Hash>(candidate: &[&[T]], reference: &[&[T]]) -> f64 {
    objective_from_f1(
        rouge_n_summary(candidate, reference, 1).f1,
        rouge_n_summary(candidate, reference, 2).f1,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn ngram_count_fixtures() {
        let t = toks("a b a");
        let uni = ngram_counts(&t, 1);
        assert_eq!(uni[&["a"][..]], 2);
        assert_eq!(uni[&["b"][..]], 1);
        let bi = ngram_counts(&t, 2);
        assert_eq!(bi.len(), 2);
        assert_eq!(bi[&["a", "b"][..]], 1);
        assert_eq!(bi[&["b", "a"][..]], 1);
        assert!(ngram_counts(&t, 4).is_empty());
    }

    #[test]
    fn rouge_n_fixtures() {
        let same = rouge_n(&toks("the cat sat"), &toks("the cat sat"), 2);
        assert_eq!((same.precision, same.recall, same.f1), (1.0, 1.0, 1.0));
        let partial = rouge_n(&toks("the cat ran"), &toks("the cat sat"), 1);
        for v in [partial.precision, partial.recall, partial.f1] {
            assert!((v - 2.0 / 3.0).abs() < 1e-12);
        }
        assert_eq!(rouge_n(&toks("a b"), &toks("c d"), 1), RougeScore::default());
        assert_eq!(rouge_n::<&str>(&[], &toks("c d"), 1), RougeScore::default());
    }

    #[test]
    fn lcs_fixtures() {
        assert_eq!(lcs_length(&toks("a b c d"), &toks("a c b d")), 3);
        assert_eq!(lcs_length(&toks("x y z"), &toks("x y z")), 3);
        assert_eq!(lcs_length(&toks("x y z"), &[]), 0);
        let l = rouge_l(&toks("a b c d"), &toks("a c b d"));
        assert!((l.f1 - 0.75).abs() < 1e-12 && (l.precision - 0.75).abs() < 1e-12);
        assert_eq!(rouge_l(&[], &toks("a")), RougeScore::default());
    }

    #[test]
    fn summary_level_fixtures() {
        let c = toks("a b c d");
        let r = toks("a c b d");
        assert_eq!(rouge_l_sum(&[&c[..]], &[&r[..]]), rouge_l(&c, &r));

        let s1 = toks("the court held");
        let s2 = toks("the statute was void");
        let s3 = toks("appeal denied");
        let summary = [&s1[..], &s2[..], &s3[..]];
        assert_eq!(rouge_l_sum(&summary, &summary).f1, 1.0);
        // Candidate sentences each matching a distinct reference sentence, reordered.
        let reordered = [&s3[..], &s1[..], &s2[..]];
        assert_eq!(rouge_l_sum(&reordered, &summary).f1, 1.0);
        // The flattened variant is order sensitive.
        assert!(rouge_l(&flatten(&reordered), &flatten(&summary)).f1 < 1.0);
    }

    #[test]
    fn reward_and_objective_fixtures() {
        assert!((reward_from_f1(0.6, 0.3, 0.6) - 0.5).abs() < 1e-12);
        assert!((objective_from_f1(0.8, 0.2) - 0.5).abs() < 1e-12);
        let s = toks("the cat sat on the mat");
        let d = toks("dogs bark");
        assert_eq!(reward(&[&s[..]], &[&s[..]], RougeLVariant::Flattened), 1.0);
        assert_eq!(oracle_objective(&[&s[..]], &[&s[..]]), 1.0);
        assert_eq!(reward(&[&d[..]], &[&s[..]], RougeLVariant::SummaryLevel), 0.0);
        assert_eq!(oracle_objective(&[&d[..]], &[&s[..]]), 0.0);
        assert_eq!(oracle_objective::<&str>(&[], &[&s[..]]), 0.0);
    }

    #[test]
    fn bigrams_span_sentence_boundaries_in_the_given_order() {
        let a = toks("a b");
        let b = toks("c d");
        let gold = toks("a b c d");
        assert_eq!(rouge_n_summary(&[&a[..], &b[..]], &[&gold[..]], 2).f1, 1.0);
        assert!(rouge_n_summary(&[&b[..], &a[..]], &[&gold[..]], 2).f1 < 1.0);
        assert_eq!(
            rouge_n_summary(&[&a[..], &b[..]], &[&gold[..]], 1),
            rouge_n_summary(&[&b[..], &a[..]], &[&gold[..]], 1)
        );
    }

    fn token_list(max: usize) -> impl Strategy<Value = Vec<u8>> {
        prop::collection::vec(0u8..6, 0..max)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn precision_recall_swap_and_bounds(a in token_list(12), b in token_list(12), n in 1usize..3) {
            let ab = rouge_n(&a, &b, n);
            let ba = rouge_n(&b, &a, n);
            prop_assert_eq!(ab.precision, ba.recall);
            prop_assert_eq!(ab.recall, ba.precision);
            for v in [ab.precision, ab.recall, ab.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            let l = rouge_l(&a, &b);
            prop_assert!((0.0..=1.0).contains(&l.f1));
            prop_assert!(lcs_length(&a, &b) <= a.len().min(b.len()));
        }

        #[test]
        fn unigram_score_ignores_token_order(a in token_list(10), b in token_list(10), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut shuffled = a.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(rouge_n(&a, &b, 1), rouge_n(&shuffled, &b, 1));
        }

        #[test]
        fn disjoint_token_lowers_precision(a in prop::collection::vec(0u8..6, 2..10), b in token_list(10), n in 1usize..3) {
            let mut b = b;
            b.extend_from_slice(&a[..n]);
            let before = rouge_n(&a, &b, n);
            prop_assert!(before.precision > 0.0);
            let mut longer = a.clone();
            longer.push(99);
            prop_assert!(rouge_n(&longer, &b, n).precision < before.precision);
        }

        #[test]
        fn single_sentence_summary_level_matches_rouge_l(a in token_list(10), b in token_list(10)) {
            prop_assert_eq!(rouge_l_sum(&[&a[..]], &[&b[..]]), rouge_l(&a, &b));
        }

        #[test]
        fn scoring_is_deterministic(a in token_list(10), b in token_list(10)) {
            let x = rouge_report(&[&a[..]], &[&b[..]]);
            let y = rouge_report(&[&a[..]], &[&b[..]]);
            prop_assert_eq!(x.r1.f1.to_bits(), y.r1.f1.to_bits());
            prop_assert_eq!(x.rl_sum.f1.to_bits(), y.rl_sum.f1.to_bits());
        }
    }
}
