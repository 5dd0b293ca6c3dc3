//! Automated Readability Index and Flesch-Kincaid grade level.
//!
//! ARI:  `4.71 * chars/words + 0.5 * words/sentences - 21.43`
//! F-K:  `0.39 * words/sentences + 11.8 * syllables/words - 15.59`
//!
//! Words are word tokens (see [`crate::tokenizer::word_tokens`]); characters
//! are the letters and digits of those tokens.

use crate::error::{Error, Result};
use crate::tokenizer::{word_tokens, TokenizedDocument};

/// Letters and digits in a token.
pub fn letter_count(token: &str) -> usize {
    token.chars().filter(|c| c.is_alphanumeric()).count()
}

struct Counts {
    words: f64,
    sentences: f64,
}

fn counts(doc: &TokenizedDocument) -> Result<(Counts, Vec<&str>)> {
    let words = word_tokens(doc);
    if doc.sentence_count == 0 || words.is_empty() {
        return Err(Error::Unmeasurable("no words or no sentences"));
    }
    Ok((
        Counts {
            words: words.len() as f64,
            sentences: doc.sentence_count as f64,
        },
        words,
    ))
}

pub fn ari(doc: &TokenizedDocument) -> Result<f64> {
    let (c, words) = counts(doc)?;
    let chars: usize = words.iter().map(|w| letter_count(w)).sum();
    Ok(4.71 * (chars as f64 / c.words) + 0.5 * (c.words / c.sentences) - 21.43)
}

pub fn flesch_kincaid(doc: &TokenizedDocument) -> Result<f64> {
    let (c, words) = counts(doc)?;
    let syllables: usize = words.iter().map(|w| count_syllables(w)).sum();
    Ok(0.39 * (c.words / c.sentences) + 11.8 * (syllables as f64 / c.words) - 15.59)
}

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y')
}

/// Vowel-group syllable estimate.
///
/// Counts maximal runs of `a e i o u y`, drops a silent final `e` unless the
/// word ends in consonant + `le`, and never returns less than one.
pub fn count_syllables(word: &str) -> usize {
    let letters: Vec<char> = word
        .chars()
        .filter(|c| c.is_alphabetic())
        .flat_map(char::to_lowercase)
        .collect();
    let mut groups = 0usize;
    let mut in_group = false;
    for &c in &letters {
        let v = is_vowel(c);
        if v && !in_group {
            groups += 1;
        }
        in_group = v;
    }
    let n = letters.len();
    if n >= 1 && letters[n - 1] == 'e' {
        let consonant_le = n >= 3 && letters[n - 2] == 'l' && !is_vowel(letters[n - 3]);
        if !consonant_le {
            groups = groups.saturating_sub(1);
        }
    }
    groups.max(1)
}
