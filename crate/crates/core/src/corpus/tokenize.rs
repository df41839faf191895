/// The single tokenizer shared by scoring, labeling and the policy.
///
/// Lowercases and keeps maximal runs of alphanumeric characters. No stemming,
/// no stopword removal.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|piece| !piece.is_empty())
        .map(str::to_string)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fixtures() {
        assert_eq!(tokenize("The Cat, sat."), vec!["the", "cat", "sat"]);
        assert_eq!(tokenize("§ 1253"), vec!["1253"]);
        assert_eq!(tokenize("stare decisis"), vec!["stare", "decisis"]);
        assert!(tokenize("?!... --").is_empty());
    }

    proptest! {
        #[test]
        fn idempotent_on_joined_output(text in "\\PC{0,80}") {
            let once = tokenize(&text);
            let twice = tokenize(&once.join(" "));
            prop_assert_eq!(once, twice);
        }
    }
}
