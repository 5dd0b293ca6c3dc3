//! Moses-style rule-based tokenization and sentence segmentation.
//!
//! The word tokenizer reproduces the English rules of the Moses
//! `tokenizer.perl` script (as ported by `sacremoses`) with XML escaping
//! disabled and aggressive dash splitting off, so hyphenated compounds stay
//! whole and clitics are split off (`don't` becomes `don` + `'t`).
//!
//! Sentences are cut after terminal punctuation tokens (`.`, `!`, `?`).
//! Abbreviations never end a sentence because the tokenizer only detaches a
//! trailing period when the word is not a known nonbreaking prefix, so
//! `Dr.` or `e.g.` survive as single tokens.

use std::collections::HashSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

const NONBREAKING_PREFIXES_EN: &str = include_str!("nonbreaking_prefix.en");
const NUMERIC_ONLY_MARKER: &str = " #NUMERIC_ONLY#";

/// A text split into sentences of Moses tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedDocument {
    pub raw_text: String,
    pub sentences: Vec<Vec<String>>,
    pub token_count: usize,
    pub sentence_count: usize,
}

impl TokenizedDocument {
    /// Builds a document from already tokenized sentences. Empty sentences
    /// are dropped and the raw text is reconstructed with [`detokenize`].
    pub fn from_sentences(sentences: Vec<Vec<String>>) -> Self {
        let sentences: Vec<Vec<String>> = sentences.into_iter().filter(|s| !s.is_empty()).collect();
        let flat: Vec<&str> = sentences.iter().flatten().map(String::as_str).collect();
        let raw_text = detokenize(&flat);
        Self::assemble(raw_text, sentences)
    }

    fn assemble(raw_text: String, sentences: Vec<Vec<String>>) -> Self {
        let token_count = sentences.iter().map(Vec::len).sum();
        let sentence_count = sentences.len();
        Self {
            raw_text,
            sentences,
            token_count,
            sentence_count,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.token_count == 0
    }

    /// All tokens in reading order.
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.sentences.iter().flatten().map(String::as_str)
    }
}

struct Rules {
    deduplicate_space: Regex,
    ascii_junk: Regex,
    pad_not_isalnum: Regex,
    multidot_run: Regex,
    multidot_marker: Regex,
    comma_separate: [Regex; 3],
    english_apostrophe: [(Regex, &'static str); 5],
    token_ends_with_period: Regex,
    leading_digits: Regex,
    trailing_dot_apostrophe: Regex,
    nonbreaking: HashSet<&'static str>,
    numeric_only: HashSet<&'static str>,
}

// Character classes approximating the Perl Unicode properties used by Moses:
// IsAlnum = Alphabetic + decimal digits, IsAlpha = Alphabetic, IsN = numbers.
const ALNUM: &str = r"\p{Alphabetic}\p{Nd}";
const ALPHA: &str = r"\p{Alphabetic}";
const NUM: &str = r"\p{N}";

fn rules() -> &'static Rules {
    static RULES: OnceLock<Rules> = OnceLock::new();
    RULES.get_or_init(|| {
        let re = |pattern: String| Regex::new(&pattern).expect("valid tokenizer pattern");
        let nonbreaking: HashSet<&'static str> = NONBREAKING_PREFIXES_EN
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect();
        let numeric_only = nonbreaking
            .iter()
            .filter_map(|p| p.strip_suffix(NUMERIC_ONLY_MARKER))
            .collect();
        Rules {
            // Python's `\s` also covers the information separators 0x1c-0x1f.
            deduplicate_space: re(r"[\s\x1c-\x1f]+".to_string()),
            ascii_junk: re(r"[\x00-\x1f]".to_string()),
            pad_not_isalnum: re(format!(r"([^{ALNUM}\s\.'`,\-])")),
            multidot_run: re(r"\.{2,}".to_string()),
            multidot_marker: re(r"(?:DOT)+MULTI".to_string()),
            comma_separate: [
                re(format!(r"([^{NUM}]),")),
                re(format!(r",([^{NUM}])")),
                re(format!(r"([{NUM}]),$")),
            ],
            english_apostrophe: [
                (re(format!(r"([^{ALPHA}])'([^{ALPHA}])")), "$1 ' $2"),
                (re(format!(r"([^{ALPHA}{NUM}])'([{ALPHA}])")), "$1 ' $2"),
                (re(format!(r"([{ALPHA}])'([^{ALPHA}])")), "$1 ' $2"),
                (re(format!(r"([{ALPHA}])'([{ALPHA}])")), "$1 '$2"),
                (re(format!(r"([{NUM}])'([s])")), "$1 '$2"),
            ],
            token_ends_with_period: re(r"^(\S+)\.$".to_string()),
            leading_digits: re(r"^[0-9]+".to_string()),
            trailing_dot_apostrophe: re(r"\.' ?$".to_string()),
            nonbreaking,
            numeric_only,
        }
    })
}

/// Moses word tokenization of a single text, without sentence grouping.
pub fn moses_tokenize(text: &str) -> Vec<String> {
    let r = rules();
    let text = r.deduplicate_space.replace_all(text, " ");
    let text = r.ascii_junk.replace_all(&text, "");
    let text = text.trim();
    let text = r.pad_not_isalnum.replace_all(text, " $1 ");
    let text = replace_multidots(&r.multidot_run, &text);
    let mut text = text;
    for (i, rule) in r.comma_separate.iter().enumerate() {
        let replacement = match i {
            0 => "$1 , ",
            1 => " , $1",
            _ => "$1 , ",
        };
        text = rule.replace_all(&text, replacement).into_owned();
    }
    for (rule, replacement) in &r.english_apostrophe {
        text = rule.replace_all(&text, *replacement).into_owned();
    }
    let text = handle_nonbreaking_prefixes(r, &text);
    let text = r.deduplicate_space.replace_all(&text, " ");
    let text = text.trim();
    let text = r.trailing_dot_apostrophe.replace_all(text, " . ' ");
    let text = r
        .multidot_marker
        .replace_all(&text, |caps: &regex::Captures<'_>| {
            let len = caps[0].len();
            ".".repeat((len - 5) / 3)
        });
    text.split_whitespace().map(str::to_owned).collect()
}

fn replace_multidots(run: &Regex, text: &str) -> String {
    let len = text.len();
    run.replace_all(text, |caps: &regex::Captures<'_>| {
        let m = caps.get(0).expect("whole match");
        let mut marker = format!(" {}MULTI", "DOT".repeat(m.len()));
        if m.end() < len {
            marker.push(' ');
        }
        marker
    })
    .into_owned()
}

fn handle_nonbreaking_prefixes(r: &Rules, text: &str) -> String {
    let mut tokens: Vec<String> = text.split_whitespace().map(str::to_owned).collect();
    let n = tokens.len();
    for i in 0..n {
        let Some(caps) = r.token_ends_with_period.captures(&tokens[i]) else {
            continue;
        };
        let prefix = caps[1].to_owned();
        let keep = (prefix.contains('.') && prefix.chars().any(char::is_alphabetic))
            || (r.nonbreaking.contains(prefix.as_str()) && !r.numeric_only.contains(prefix.as_str()))
            || (i + 1 != n
                && tokens[i + 1]
                    .chars()
                    .next()
                    .is_some_and(char::is_lowercase));
        let numeric_ok = r.numeric_only.contains(prefix.as_str())
            && i + 1 < n
            && r.leading_digits.is_match(&tokens[i + 1]);
        if !keep && !numeric_ok {
            tokens[i] = format!("{prefix} .");
        }
    }
    tokens.join(" ")
}

fn is_terminal(token: &str) -> bool {
    matches!(token, "." | "!" | "?")
}

fn is_closer(token: &str) -> bool {
    matches!(
        token,
        "\"" | "'" | "''" | ")" | "]" | "}" | "»" | "’" | "”"
    )
}

/// Groups a token stream into sentences, cutting after terminal punctuation
/// and any closing quotes or brackets that follow it.
pub fn split_sentences(tokens: Vec<String>) -> Vec<Vec<String>> {
    let mut sentences = Vec::new();
    let mut current: Vec<String> = Vec::new();
    let mut closing = false;
    for token in tokens {
        if closing && !(is_terminal(&token) || is_closer(&token)) {
            sentences.push(std::mem::take(&mut current));
            closing = false;
        }
        if is_terminal(&token) {
            closing = true;
        }
        current.push(token);
    }
    if !current.is_empty() {
        sentences.push(current);
    }
    sentences
}

/// Tokenizes `text` into sentences of Moses tokens.
///
/// Empty or whitespace-only input yields a document with no sentences.
pub fn tokenize(text: &str) -> TokenizedDocument {
    let sentences = split_sentences(moses_tokenize(text));
    TokenizedDocument::assemble(text.to_owned(), sentences)
}

/// Whether a token carries at least one letter or digit.
pub fn is_word_token(token: &str) -> bool {
    token.chars().any(char::is_alphanumeric)
}

/// Word tokens of a document: punctuation-only tokens removed.
pub fn word_tokens(doc: &TokenizedDocument) -> Vec<&str> {
    doc.tokens().filter(|t| is_word_token(t)).collect()
}

fn attaches_left(token: &str) -> bool {
    matches!(
        token,
        "," | "." | "!" | "?" | ";" | ":" | "%" | ")" | "]" | "}" | "..."
    ) || (token.starts_with('\'')
        && token.len() > 1
        && token[1..].starts_with(|c: char| c.is_alphabetic()))
}

fn attaches_right(token: &str) -> bool {
    matches!(token, "(" | "[" | "{" | "$" | "#")
}

/// Joins tokens back into running text, undoing the spacing the tokenizer
/// introduced around punctuation, clitics and straight double quotes.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    let mut glue_next = true;
    let mut open_quote = false;
    for token in tokens {
        let token = token.as_ref();
        let mut glue = glue_next;
        glue_next = false;
        if token == "\"" {
            if open_quote {
                glue = true;
            } else {
                glue_next = true;
            }
            open_quote = !open_quote;
        } else if attaches_left(token) {
            glue = true;
        } else if attaches_right(token) {
            glue_next = true;
        }
        if !glue && !out.is_empty() {
            out.push(' ');
        }
        out.push_str(token);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(text: &str) -> Vec<String> {
        moses_tokenize(text)
    }

    #[test]
    fn contraction_splits_into_stem_and_clitic() {
        assert_eq!(toks("don't"), vec!["don", "'t"]);
        assert_eq!(toks("I'm here"), vec!["I", "'m", "here"]);
    }

    #[test]
    fn hyphenated_compound_stays_whole() {
        assert_eq!(toks("state-of-the-art"), vec!["state-of-the-art"]);
    }

    #[test]
    fn empty_input_has_no_sentences() {
        let doc = tokenize("");
        assert_eq!(doc.sentence_count, 0);
        assert_eq!(doc.token_count, 0);
        let doc = tokenize("   \n\t ");
        assert_eq!(doc.sentence_count, 0);
    }

    #[test]
    fn numbers_keep_commas_and_decimals() {
        assert_eq!(toks("5,300 people paid 3.14 each."), vec!["5,300", "people", "paid", "3.14", "each", "."]);
    }

    #[test]
    fn abbreviations_do_not_end_sentences() {
        let doc = tokenize("Dr. Smith arrived. He left, e.g. at noon. Then?");
        let sents: Vec<Vec<&str>> = doc
            .sentences
            .iter()
            .map(|s| s.iter().map(String::as_str).collect())
            .collect();
        assert_eq!(
            sents,
            vec![
                vec!["Dr.", "Smith", "arrived", "."],
                vec!["He", "left", ",", "e.g.", "at", "noon", "."],
                vec!["Then", "?"],
            ]
        );
    }

    #[test]
    fn closing_quote_stays_with_its_sentence() {
        let doc = tokenize("He said \"stop!\" Then he left.");
        assert_eq!(doc.sentence_count, 2);
        assert_eq!(doc.sentences[0].last().unwrap(), "\"");
    }

    #[test]
    fn numeric_only_prefix_needs_a_number() {
        assert_eq!(toks("See No. 5 here"), vec!["See", "No.", "5", "here"]);
        assert_eq!(toks("He said No. Then"), vec!["He", "said", "No", ".", "Then"]);
    }

    #[test]
    fn multidots_survive() {
        assert_eq!(toks("wait... what"), vec!["wait", "...", "what"]);
        assert_eq!(toks("end.."), vec!["end", ".."]);
    }

    #[test]
    fn word_tokens_drop_punctuation() {
        let doc = TokenizedDocument::from_sentences(vec![vec!["Hello".into(), ",".into(), "world".into(), ".".into()]]);
        assert_eq!(word_tokens(&doc), vec!["Hello", "world"]);
        let doc = TokenizedDocument::from_sentences(vec![vec!["n't".into()]]);
        assert_eq!(word_tokens(&doc), vec!["n't"]);
    }

    #[test]
    fn word_tokens_on_ten_token_sentence() {
        // 10 tokens, two of which are punctuation.
        let doc = tokenize("The new method , tested twice , works well today");
        assert_eq!(doc.token_count, 10);
        assert_eq!(word_tokens(&doc).len(), 8);
    }

    #[test]
    fn token_count_matches_sentences() {
        let doc = tokenize("One two. Three four five! Six?");
        assert_eq!(doc.token_count, doc.sentences.iter().map(Vec::len).sum::<usize>());
        assert!(doc.sentences.iter().all(|s| !s.is_empty()));
    }

    #[test]
    fn detokenize_round_trip() {
        let text = "He said: \"hello, world!\" (twice) and didn't stop.";
        let tokens = toks(text);
        assert_eq!(detokenize(&tokens), text);
        assert_eq!(toks(&detokenize(&tokens)), tokens);
    }
}
