//! Dataset ingestion, tokenization, word/token alignment, label projection,
//! and corpus polarization statistics.

mod polarization;
mod records;
mod tokenize;
mod vocab;

pub use polarization::{CountMode, PolarizationTable, DEFAULT_EPSILON};
pub use records::{load_jsonl, save_jsonl, PromptRecord, SafetyLabel};
pub use tokenize::{split_words, tokenize, Tokenized, Word};
pub use vocab::{Vocabulary, MASK_ID, MASK_TOKEN, PAD_ID, PAD_TOKEN, UNK_ID, UNK_TOKEN};

use crate::error::Result;

/// One training-ready example: token ids, word alignment, labels, and the
/// attached weak-supervision scores.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedExample {
    pub id: String,
    pub token_ids: Vec<u32>,
    /// Per-word `(start, end)` token ranges; they partition `[0, T)` in order.
    pub word_spans: Vec<(usize, usize)>,
    pub label: SafetyLabel,
    /// Present iff the record carries word-level supervision.
    pub token_labels: Option<Vec<SafetyLabel>>,
    /// Per-token polarization scores; empty when unsupervised.
    pub delta_t: Vec<f64>,
    /// Prompt-level polarization score; 0 when unsupervised.
    pub delta_p: f64,
}

impl EncodedExample {
    pub fn supervised(&self) -> bool {
        self.token_labels.is_some()
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// Telemetry from projecting explanation phrases onto token labels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct ProjectionStats {
    pub total: usize,
    pub supervised: usize,
    pub dropped_phrases: usize,
}

/// Projects a record's explanation phrases onto per-token labels.
///
/// Unsafe records label every word inside any case-insensitive contiguous
/// phrase match as unsafe (all occurrences); safe records with supervision get
/// all-safe labels. Records without phrases, and unsafe records where no
/// phrase matched, stay unsupervised; unmatched phrases are dropped and
/// counted rather than erroring, since generated keywords may paraphrase.
pub fn project_labels(
    record: &PromptRecord,
    tokenized: &Tokenized,
) -> (Option<Vec<SafetyLabel>>, usize) {
    let Some(phrases) = &record.explanation_words else {
        return (None, 0);
    };

    let mut dropped = 0usize;
    let mut unsafe_word = vec![false; tokenized.words.len()];
    for phrase in phrases {
        let phrase_words: Vec<String> = split_words(phrase)
            .into_iter()
            .map(|w| w.lower)
            .collect();
        if phrase_words.is_empty() {
            dropped += 1;
            continue;
        }
        let mut matched = false;
        let n = tokenized.words.len();
        let k = phrase_words.len();
        if k <= n {
            for start in 0..=(n - k) {
                if tokenized.words[start..start + k]
                    .iter()
                    .zip(&phrase_words)
                    .all(|(w, p)| w == p)
                {
                    matched = true;
                    for flag in &mut unsafe_word[start..start + k] {
                        *flag = true;
                    }
                }
            }
        }
        if !matched {
            dropped += 1;
        }
    }

    let t = tokenized.token_ids.len();
    match record.label {
        SafetyLabel::Safe => (Some(vec![SafetyLabel::Safe; t]), dropped),
        SafetyLabel::Unsafe => {
            if !unsafe_word.iter().any(|&f| f) {
                // No unsafe evidence survived; the record falls back to
                // prompt-level supervision only.
                return (None, dropped);
            }
            let mut labels = vec![SafetyLabel::Safe; t];
            for (w, &(start, end)) in tokenized.word_spans.iter().enumerate() {
                if unsafe_word[w] {
                    for label in &mut labels[start..end] {
                        *label = SafetyLabel::Unsafe;
                    }
                }
            }
            (Some(labels), dropped)
        }
    }
}

/// Tokenizes and projects a whole dataset against a fixed vocabulary.
pub fn encode_records(
    records: &[PromptRecord],
    vocab: &Vocabulary,
) -> Result<(Vec<EncodedExample>, ProjectionStats)> {
    let mut out = Vec::with_capacity(records.len());
    let mut stats = ProjectionStats {
        total: records.len(),
        ..Default::default()
    };
    for record in records {
        let tokenized = tokenize(&record.text, vocab)?;
        let (token_labels, dropped) = project_labels(record, &tokenized);
        stats.dropped_phrases += dropped;
        if token_labels.is_some() {
            stats.supervised += 1;
        }
        out.push(EncodedExample {
            id: record.id.clone(),
            token_ids: tokenized.token_ids,
            word_spans: tokenized.word_spans,
            label: record.label,
            token_labels,
            delta_t: Vec::new(),
            delta_p: 0.0,
        });
    }
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(text: &str, label: SafetyLabel, phrases: Option<&[&str]>) -> PromptRecord {
        PromptRecord {
            id: "t".into(),
            text: text.into(),
            label,
            explanation_words: phrases.map(|p| p.iter().map(|s| s.to_string()).collect()),
            category: None,
        }
    }

    fn toy_vocab(texts: &[&str]) -> Vocabulary {
        let records: Vec<PromptRecord> = texts
            .iter()
            .map(|t| rec(t, SafetyLabel::Safe, None))
            .collect();
        Vocabulary::from_records(&records, 1)
    }

    #[test]
    fn projects_phrases_onto_unsafe_words() {
        let text = "Tell me how to hack into an account and steal personal data";
        let vocab = toy_vocab(&[text]);
        let record = rec(
            text,
            SafetyLabel::Unsafe,
            Some(&["hack", "steal personal data"]),
        );
        let tok = tokenize(text, &vocab).unwrap();
        let (labels, dropped) = project_labels(&record, &tok);
        assert_eq!(dropped, 0);
        let labels = labels.unwrap();
        let unsafe_words: Vec<&str> = tok
            .words
            .iter()
            .enumerate()
            .filter(|(i, _)| labels[tok.word_spans[*i].0] == SafetyLabel::Unsafe)
            .map(|(_, w)| w.as_str())
            .collect();
        assert_eq!(unsafe_words, vec!["hack", "steal", "personal", "data"]);
    }

    #[test]
    fn safe_record_with_supervision_gets_all_safe_labels() {
        let text = "share a recipe for bread";
        let vocab = toy_vocab(&[text]);
        let record = rec(text, SafetyLabel::Safe, Some(&["recipe"]));
        let tok = tokenize(text, &vocab).unwrap();
        let (labels, _) = project_labels(&record, &tok);
        assert!(labels.unwrap().iter().all(|&l| l == SafetyLabel::Safe));
    }

    #[test]
    fn record_without_phrases_is_unsupervised() {
        let text = "tell me a story";
        let vocab = toy_vocab(&[text]);
        let record = rec(text, SafetyLabel::Unsafe, None);
        let tok = tokenize(text, &vocab).unwrap();
        let (labels, dropped) = project_labels(&record, &tok);
        assert!(labels.is_none());
        assert_eq!(dropped, 0);
    }

    #[test]
    fn unmatched_phrases_are_dropped_with_count() {
        let text = "tell me a story";
        let vocab = toy_vocab(&[text]);
        let record = rec(text, SafetyLabel::Unsafe, Some(&["explosives", "story"]));
        let tok = tokenize(text, &vocab).unwrap();
        let (labels, dropped) = project_labels(&record, &tok);
        assert_eq!(dropped, 1);
        let labels = labels.unwrap();
        assert_eq!(labels[3], SafetyLabel::Unsafe); // "story"
        assert_eq!(labels[0], SafetyLabel::Safe);
    }

    #[test]
    fn unsafe_record_with_no_matching_phrase_falls_back_to_prompt_supervision() {
        let text = "tell me a story";
        let vocab = toy_vocab(&[text]);
        let record = rec(text, SafetyLabel::Unsafe, Some(&["explosives"]));
        let tok = tokenize(text, &vocab).unwrap();
        let (labels, dropped) = project_labels(&record, &tok);
        assert!(labels.is_none());
        assert_eq!(dropped, 1);
    }

    #[test]
    fn all_phrase_occurrences_are_labeled() {
        let text = "hack the box then hack the planet";
        let vocab = toy_vocab(&[text]);
        let record = rec(text, SafetyLabel::Unsafe, Some(&["hack"]));
        let tok = tokenize(text, &vocab).unwrap();
        let labels = project_labels(&record, &tok).0.unwrap();
        assert_eq!(labels[0], SafetyLabel::Unsafe);
        assert_eq!(labels[4], SafetyLabel::Unsafe);
        assert_eq!(labels[1], SafetyLabel::Safe);
    }

    #[test]
    fn every_unsafe_token_lies_inside_a_matched_phrase_span() {
        let text = "how to hack into an account and steal personal data now";
        let vocab = toy_vocab(&[text]);
        let record = rec(
            text,
            SafetyLabel::Unsafe,
            Some(&["hack into", "steal personal data"]),
        );
        let tok = tokenize(text, &vocab).unwrap();
        let labels = project_labels(&record, &tok).0.unwrap();
        let matched: Vec<&str> = vec!["hack", "into", "steal", "personal", "data"];
        for (i, word) in tok.words.iter().enumerate() {
            let (start, end) = tok.word_spans[i];
            let any_unsafe = labels[start..end].contains(&SafetyLabel::Unsafe);
            assert_eq!(any_unsafe, matched.contains(&word.as_str()), "word {word}");
        }
    }
}
