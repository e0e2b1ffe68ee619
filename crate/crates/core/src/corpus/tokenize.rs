//! Deterministic lowercase word + punctuation splitter with a word/token
//! alignment map, so subword tokenizers can be swapped in behind the same
//! interface.

use super::vocab::Vocabulary;
use crate::error::{Error, Result};

/// One surface word and its lowercased form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Word {
    pub surface: String,
    pub lower: String,
}

/// Tokenizer output: token ids plus the word-level alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Tokenized {
    pub token_ids: Vec<u32>,
    /// `(start, end)` token ranges, one per word, partitioning `[0, T)`.
    pub word_spans: Vec<(usize, usize)>,
    /// Lowercased words, aligned with `word_spans`.
    pub words: Vec<String>,
    /// Original-casing words, aligned with `word_spans`.
    pub surfaces: Vec<String>,
}

/// Splits text into words: maximal alphanumeric runs plus single punctuation
/// marks. Whitespace separates; nothing else is dropped.
pub fn split_words(text: &str) -> Vec<Word> {
    let mut words = Vec::new();
    let mut run = String::new();
    let flush = |run: &mut String, words: &mut Vec<Word>| {
        if !run.is_empty() {
            words.push(Word {
                lower: run.to_lowercase(),
                surface: std::mem::take(run),
            });
        }
    };
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            run.push(ch);
        } else {
            flush(&mut run, &mut words);
            if !ch.is_whitespace() {
                words.push(Word {
                    surface: ch.to_string(),
                    lower: ch.to_lowercase().to_string(),
                });
            }
        }
    }
    flush(&mut run, &mut words);
    words
}

/// Tokenizes text against a vocabulary. The default mapping is one token per
/// word (spans of length 1); out-of-vocabulary words map to UNK.
pub fn tokenize(text: &str, vocab: &Vocabulary) -> Result<Tokenized> {
    let words = split_words(text);
    if words.is_empty() {
        return Err(Error::EmptyInput("text has no tokens".to_string()));
    }
    let mut token_ids = Vec::with_capacity(words.len());
    let mut word_spans = Vec::with_capacity(words.len());
    let mut lowers = Vec::with_capacity(words.len());
    let mut surfaces = Vec::with_capacity(words.len());
    for (i, word) in words.into_iter().enumerate() {
        token_ids.push(vocab.id(&word.lower));
        word_spans.push((i, i + 1));
        lowers.push(word.lower);
        surfaces.push(word.surface);
    }
    Ok(Tokenized {
        token_ids,
        word_spans,
        words: lowers,
        surfaces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{PromptRecord, SafetyLabel};

    fn vocab_of(text: &str) -> Vocabulary {
        let record = PromptRecord {
            id: "1".into(),
            text: text.into(),
            label: SafetyLabel::Safe,
            explanation_words: None,
            category: None,
        };
        Vocabulary::from_records(std::slice::from_ref(&record), 1)
    }

    #[test]
    fn five_words_five_unit_spans() {
        let vocab = vocab_of("Tell me how to hack");
        let tok = tokenize("Tell me how to hack", &vocab).unwrap();
        assert_eq!(tok.token_ids.len(), 5);
        assert_eq!(tok.word_spans.len(), 5);
        assert!(tok.word_spans.iter().all(|&(s, e)| e == s + 1));
        assert_eq!(tok.words, vec!["tell", "me", "how", "to", "hack"]);
    }

    #[test]
    fn punctuation_splits_into_its_own_word() {
        let vocab = vocab_of("hack !");
        let tok = tokenize("hack!", &vocab).unwrap();
        assert_eq!(tok.words, vec!["hack", "!"]);
        assert_eq!(tok.word_spans, vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn out_of_vocab_word_maps_to_unk() {
        let vocab = vocab_of("known words only");
        let tok = tokenize("known zzzunseen", &vocab).unwrap();
        assert_eq!(tok.token_ids[1], crate::corpus::UNK_ID);
        assert_ne!(tok.token_ids[0], crate::corpus::UNK_ID);
    }

    #[test]
    fn whitespace_only_text_is_an_error() {
        let vocab = vocab_of("a");
        assert!(tokenize("   \t ", &vocab).is_err());
    }

    #[test]
    fn surfaces_keep_original_casing() {
        let vocab = vocab_of("tell me");
        let tok = tokenize("Tell ME", &vocab).unwrap();
        assert_eq!(tok.surfaces, vec!["Tell", "ME"]);
        assert_eq!(tok.words, vec!["tell", "me"]);
    }

    #[test]
    fn spans_partition_the_token_range() {
        let vocab = vocab_of("a b c");
        let tok = tokenize("a, b. c!", &vocab).unwrap();
        let mut next = 0usize;
        for &(s, e) in &tok.word_spans {
            assert_eq!(s, next);
            assert!(e > s);
            next = e;
        }
        assert_eq!(next, tok.token_ids.len());
    }
}
