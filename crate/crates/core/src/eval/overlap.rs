//! Max-Jaccard lexical overlap between a test set and a training set,
//! binned into ten similarity intervals.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{split_words, PromptRecord};
use crate::error::{Error, Result};

/// Fixed 150-word English stopword list used by the unigram analysis.
pub const STOPWORDS: [&str; 150] = [
    "a", "about", "above", "after", "again", "against", "all", "am", "an", "and", "any", "are",
    "as", "at", "be", "because", "been", "before", "being", "below", "between", "both", "but",
    "by", "can", "cannot", "could", "did", "do", "does", "doing", "down", "during", "each",
    "few", "for", "from", "further", "had", "has", "have", "having", "he", "her", "here",
    "hers", "herself", "him", "himself", "his", "how", "i", "if", "in", "into", "is", "it",
    "its", "itself", "just", "me", "more", "most", "my", "myself", "no", "nor", "not", "now",
    "of", "off", "on", "once", "only", "or", "other", "ought", "our", "ours", "ourselves",
    "out", "over", "own", "same", "shall", "she", "should", "so", "some", "such", "than",
    "that", "the", "their", "theirs", "them", "themselves", "then", "there", "these", "they",
    "this", "those", "through", "to", "too", "under", "until", "up", "very", "was", "we",
    "were", "what", "when", "where", "which", "while", "who", "whom", "why", "will", "with",
    "would", "you", "your", "yours", "yourself", "yourselves", "also", "although", "always",
    "among", "anything", "around", "away", "every", "everything", "get", "got", "however",
    "many", "might", "much", "must", "never", "often", "perhaps", "please", "since",
];

pub fn default_stopwords() -> HashSet<String> {
    STOPWORDS.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NGram {
    Unigram,
    Bigram,
}

/// Percentage of test prompts per max-Jaccard interval
/// `[0,0.1), [0.1,0.2), ..., [0.9,1.0]`.
#[derive(Debug, Clone, Serialize)]
pub struct OverlapHistogram {
    pub n_gram: NGram,
    pub stopword_filtered: bool,
    pub bucket_pct: [f64; 10],
    pub n_test: usize,
}

impl OverlapHistogram {
    pub fn bucket_labels() -> [&'static str; 10] {
        [
            "[0.0-0.1)",
            "[0.1-0.2)",
            "[0.2-0.3)",
            "[0.3-0.4)",
            "[0.4-0.5)",
            "[0.5-0.6)",
            "[0.6-0.7)",
            "[0.7-0.8)",
            "[0.8-0.9)",
            "[0.9-1.0]",
        ]
    }
}

fn feature_set(text: &str, n_gram: NGram, stopwords: &HashSet<String>) -> HashSet<String> {
    let words: Vec<String> = split_words(text).into_iter().map(|w| w.lower).collect();
    match n_gram {
        NGram::Unigram => words
            .into_iter()
            .filter(|w| !stopwords.contains(w))
            .collect(),
        NGram::Bigram => words
            .windows(2)
            .map(|pair| format!("{}\u{1f}{}", pair[0], pair[1]))
            .collect(),
    }
}

/// Jaccard set similarity; the empty-vs-empty case is 0 by convention.
pub fn jaccard(a: &HashSet<String>, b: &HashSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Highest Jaccard similarity of one test feature set against every train
/// feature set.
pub fn max_jaccard(test: &HashSet<String>, train: &[HashSet<String>]) -> f64 {
    train
        .iter()
        .map(|t| jaccard(test, t))
        .fold(0.0, f64::max)
}

/// Bins per-test-prompt max-Jaccard similarity into ten intervals.
/// Unigram features are stopword-filtered with the built-in list; bigram
/// features are unfiltered.
pub fn lexical_overlap(
    train_set: &[PromptRecord],
    test_set: &[PromptRecord],
    n_gram: NGram,
) -> Result<OverlapHistogram> {
    let stopwords = match n_gram {
        NGram::Unigram => default_stopwords(),
        NGram::Bigram => HashSet::new(),
    };
    lexical_overlap_with(train_set, test_set, n_gram, &stopwords)
}

/// [`lexical_overlap`] with an explicit stopword list.
pub fn lexical_overlap_with(
    train_set: &[PromptRecord],
    test_set: &[PromptRecord],
    n_gram: NGram,
    stopwords: &HashSet<String>,
) -> Result<OverlapHistogram> {
    if train_set.is_empty() || test_set.is_empty() {
        return Err(Error::EmptyInput("overlap requires non-empty sets".to_string()));
    }
    let train_features: Vec<HashSet<String>> = train_set
        .iter()
        .map(|r| feature_set(&r.text, n_gram, stopwords))
        .collect();
    let mut buckets = [0usize; 10];
    for record in test_set {
        let features = feature_set(&record.text, n_gram, stopwords);
        let s = max_jaccard(&features, &train_features);
        let idx = ((s * 10.0).floor() as usize).min(9);
        buckets[idx] += 1;
    }
    let n = test_set.len();
    let mut bucket_pct = [0.0; 10];
    for (pct, &count) in bucket_pct.iter_mut().zip(&buckets) {
        *pct = count as f64 / n as f64 * 100.0;
    }
    Ok(OverlapHistogram {
        n_gram,
        stopword_filtered: !stopwords.is_empty(),
        bucket_pct,
        n_test: n,
    })
}
