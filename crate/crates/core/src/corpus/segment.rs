//! Rule-based sentence splitter for legal prose.
//!
//! A sentence ends at `.`, `?` or `!` (plus any closing quotes or brackets)
//! when the next non-whitespace character is an uppercase letter. A period
//! never ends a sentence when the word it closes is a known abbreviation or a
//! single-letter initial such as `J.`.

/// Abbreviations that never terminate a sentence. Matched case-sensitively
/// against the whitespace-delimited word that carries the period.
pub const ABBREVIATIONS: &[&str] = &[
    "v.", "vs.", "U.S.", "U.S.C.", "U.S.C.A.", "Inc.", "No.", "Nos.", "Co.", "Corp.", "Ltd.",
    "L.L.C.", "Mr.", "Mrs.", "Ms.", "Dr.", "St.", "Jr.", "Sr.", "Cir.", "Ct.", "Sup.", "Dist.",
    "App.", "Supp.", "Stat.", "Art.", "Sec.", "Ch.", "Cl.", "Pub.", "Rev.", "Ann.", "Gen.",
    "Assn.", "Ass'n.", "Dept.", "Gov't.", "Comm'n.", "e.g.", "i.e.", "cf.", "etc.", "al.",
    "Jan.", "Feb.", "Mar.", "Apr.", "Aug.", "Sept.", "Oct.", "Nov.", "Dec.", "pp.", "p.",
    "para.", "Cal.", "Tex.", "Fla.", "Ill.", "Mass.", "Pa.", "N.Y.", "D.C.", "Va.", "Wash.",
];

const CLOSERS: &[char] = &['"', '\'', '\u{201d}', '\u{2019}', ')', ']'];
const OPENERS: &[char] = &['"', '\'', '\u{201c}', '\u{2018}', '(', '['];

/// Split raw text into trimmed sentence strings.
///
/// Concatenating the output with the original inter-sentence whitespace
/// reproduces `raw`. Empty or whitespace-only input yields no sentences.
pub fn segment_text(raw: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = raw.char_indices().collect();
    let mut sentences = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;

    while i < chars.len() {
        let (pos, c) = chars[i];
        if !matches!(c, '.' | '?' | '!') {
            i += 1;
            continue;
        }
        let mut end = i + 1;
        while end < chars.len() && CLOSERS.contains(&chars[end].1) {
            end += 1;
        }
        if end >= chars.len() || !chars[end].1.is_whitespace() {
            i = end;
            continue;
        }
        let mut next = end;
        while next < chars.len() && chars[next].1.is_whitespace() {
            next += 1;
        }
        let starts_sentence = next < chars.len() && {
            let mut k = next;
            while k < chars.len() && OPENERS.contains(&chars[k].1) {
                k += 1;
            }
            k < chars.len() && chars[k].1.is_uppercase()
        };
        if starts_sentence && !(c == '.' && is_abbreviation(raw, pos)) {
            let end_byte = chars[end].0;
            push_trimmed(&mut sentences, &raw[start..end_byte]);
            start = end_byte;
        }
        i = end;
    }
    push_trimmed(&mut sentences, &raw[start..]);
    sentences
}

fn push_trimmed(out: &mut Vec<String>, piece: &str) {
    let piece = piece.trim();
    if !piece.is_empty() {
        out.push(piece.to_string());
    }
}

/// Whether the period at byte offset `dot` closes an abbreviation.
fn is_abbreviation(raw: &str, dot: usize) -> bool {
    let before = &raw[..=dot];
    let word_start = before
        .char_indices()
        .rev()
        .find(|(_, ch)| ch.is_whitespace())
        .map_or(0, |(idx, ch)| idx + ch.len_utf8());
    let word = before[word_start..].trim_start_matches(OPENERS);
    if ABBREVIATIONS.contains(&word) {
        return true;
    }
    let mut letters = word.chars();
    matches!(
        (letters.next(), letters.next(), letters.next()),
        (Some(initial), Some('.'), None) if initial.is_uppercase()
    )
}
