//! Deterministic offline query client backed by an unsafe-phrase lexicon.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BiasQueryResponse, QueryClient};
use crate::corpus::{split_words, SafetyLabel};
use crate::error::{Error, Result};
use crate::util::fnv1a64;

/// Mock client with a tunable capitulation rate.
///
/// The truthful path calls a prompt unsafe iff it contains a lexicon phrase
/// as a contiguous word sequence, returning the matched phrases as unsafe
/// keywords. With probability `bias_rate` a response instead capitulates to
/// the bias embedded in its query and fabricates keywords from the first
/// words of the prompt. The capitulation draw is a pure function of
/// `(text, bias_term, seed)`, so repeated runs produce byte-identical
/// responses. The client is stateless and shareable across threads.
#[derive(Debug, Clone)]
pub struct MockClient {
    phrases: Vec<Vec<String>>,
    raw_phrases: Vec<String>,
    bias_rate: f64,
    seed: u64,
}

impl MockClient {
    pub fn new(phrases: Vec<String>, bias_rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&bias_rate) {
            return Err(Error::InvalidArg(format!(
                "bias_rate must be in [0, 1], got {bias_rate}"
            )));
        }
        let tokenized = phrases
            .iter()
            .map(|p| split_words(p).into_iter().map(|w| w.lower).collect())
            .collect();
        Ok(MockClient {
            phrases: tokenized,
            raw_phrases: phrases,
            bias_rate,
            seed,
        })
    }

    /// Loads a lexicon file: one phrase per line, `#` comments and blank
    /// lines ignored.
    pub fn from_file(path: impl AsRef<Path>, bias_rate: f64, seed: u64) -> Result<Self> {
        let content = std::fs::read_to_string(path.as_ref())?;
        let phrases: Vec<String> = content
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| l.to_string())
            .collect();
        if phrases.is_empty() {
            return Err(Error::Config("lexicon file has no phrases".to_string()));
        }
        Self::new(phrases, bias_rate, seed)
    }

    pub fn lexicon(&self) -> &[String] {
        &self.raw_phrases
    }

    /// Lexicon phrases present in the text, ordered by first occurrence.
    fn matches_in(&self, words: &[String]) -> Vec<String> {
        let mut found: Vec<(usize, String)> = Vec::new();
        for (phrase_words, raw) in self.phrases.iter().zip(&self.raw_phrases) {
            if phrase_words.is_empty() || phrase_words.len() > words.len() {
                continue;
            }
            for start in 0..=(words.len() - phrase_words.len()) {
                if words[start..start + phrase_words.len()] == phrase_words[..] {
                    found.push((start, raw.to_lowercase()));
                    break;
                }
            }
        }
        found.sort_by_key(|(pos, _)| *pos);
        found.into_iter().map(|(_, p)| p).collect()
    }
}

fn leading_words(words: &[String], n: usize) -> Vec<String> {
    words
        .iter()
        .filter(|w| w.chars().any(|c| c.is_alphanumeric()))
        .take(n)
        .cloned()
        .collect()
}

impl QueryClient for MockClient {
    fn ask(&self, prompt_text: &str, bias_term: SafetyLabel) -> Result<BiasQueryResponse> {
        let key = format!("{}|{}|{}", self.seed, bias_term, prompt_text);
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64(key.as_bytes()));
        let capitulate = rng.gen::<f64>() < self.bias_rate;

        let words: Vec<String> = split_words(prompt_text).into_iter().map(|w| w.lower).collect();

        if capitulate {
            let fabricated = leading_words(&words, 3);
            return Ok(match bias_term {
                SafetyLabel::Unsafe => BiasQueryResponse {
                    unsafe_flag: true,
                    safe_flag: false,
                    unsafe_keywords: fabricated,
                    safe_keywords: Vec::new(),
                    justification: "Echoing the framing of the question.".to_string(),
                    parse_ok: true,
                },
                SafetyLabel::Safe => BiasQueryResponse {
                    unsafe_flag: false,
                    safe_flag: true,
                    unsafe_keywords: Vec::new(),
                    safe_keywords: fabricated,
                    justification: "Echoing the framing of the question.".to_string(),
                    parse_ok: true,
                },
            });
        }

        let matched = self.matches_in(&words);
        Ok(if matched.is_empty() {
            BiasQueryResponse {
                unsafe_flag: false,
                safe_flag: true,
                unsafe_keywords: Vec::new(),
                safe_keywords: leading_words(&words, 3),
                justification: "No flagged phrasing found.".to_string(),
                parse_ok: true,
            }
        } else {
            BiasQueryResponse {
                unsafe_flag: true,
                safe_flag: false,
                unsafe_keywords: matched,
                safe_keywords: Vec::new(),
                justification: "Contains flagged phrasing.".to_string(),
                parse_ok: true,
            }
        })
    }
}
