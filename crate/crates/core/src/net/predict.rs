//! Structured verdicts for single prompts.

use serde::Serialize;

use super::forward::forward;
use super::model::GuardrailModel;
use crate::corpus::{tokenize, SafetyLabel, Vocabulary};
use crate::error::{Error, Result};

/// Per-word unsafe confidence, exposed under the verbose flag.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WordScore {
    pub word: String,
    pub score: f64,
}

/// The structured moderation output. Default serialization carries exactly
/// `safety_label` and `explanation`; `scores` and `prompt_score` appear only
/// when populated (verbose mode).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub safety_label: SafetyLabel,
    /// Surface words justifying an unsafe call, in text order; empty for
    /// safe verdicts.
    pub explanation: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<WordScore>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt_score: Option<f64>,
}

impl Verdict {
    /// Strips the verbose fields, leaving the stable two-key contract.
    pub fn concise(&self) -> Verdict {
        Verdict {
            safety_label: self.safety_label,
            explanation: self.explanation.clone(),
            scores: None,
            prompt_score: None,
        }
    }
}

/// A verdict plus the word-level internals the presentation layer may want.
#[derive(Debug, Clone)]
pub struct PredictionDetail {
    pub verdict: Verdict,
    /// Surface words in text order.
    pub words: Vec<String>,
    /// Per-word unsafe decision at the fixed word threshold of 0.5.
    pub word_unsafe: Vec<bool>,
    /// Per-word unsafe confidence: max over the word's tokens.
    pub word_scores: Vec<f64>,
}

/// Convenience: the prompt-level unsafe probability for a text.
pub fn unsafe_prob(model: &GuardrailModel, text: &str, vocab: &Vocabulary) -> Result<f64> {
    let tok = tokenize(text, vocab)?;
    let out = forward(model, &tok.token_ids, None)?;
    Ok(out.prompt_probs[1])
}

/// Classifies a prompt and extracts its explanation words.
///
/// The safety label is unsafe iff the prompt unsafe-probability reaches
/// `threshold`. A word counts as unsafe when the max unsafe-probability over
/// its tokens reaches 0.5; explanation words are emitted only for unsafe
/// verdicts, in text order, as surface words of the input.
pub fn predict_with_details(
    model: &GuardrailModel,
    text: &str,
    vocab: &Vocabulary,
    threshold: f64,
) -> Result<PredictionDetail> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArg(format!(
            "threshold must lie in (0, 1), got {threshold}"
        )));
    }
    if text.trim().is_empty() {
        return Err(Error::EmptyInput("text".to_string()));
    }
    let tok = tokenize(text, vocab)?;
    let out = forward(model, &tok.token_ids, None)?;

    let word_scores: Vec<f64> = tok
        .word_spans
        .iter()
        .map(|&(start, end)| {
            (start..end)
                .map(|i| out.token_probs[[i, 1]])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let word_unsafe: Vec<bool> = word_scores.iter().map(|&s| s >= 0.5).collect();

    let prompt_score = out.prompt_probs[1];
    let label = if prompt_score >= threshold {
        SafetyLabel::Unsafe
    } else {
        SafetyLabel::Safe
    };
    let explanation = if label.is_unsafe() {
        tok.surfaces
            .iter()
            .zip(&word_unsafe)
            .filter(|(_, &u)| u)
            .map(|(w, _)| w.clone())
            .collect()
    } else {
        Vec::new()
    };

    let scores = tok
        .surfaces
        .iter()
        .zip(&word_scores)
        .map(|(word, &score)| WordScore {
            word: word.clone(),
            score,
        })
        .collect();

    Ok(PredictionDetail {
        verdict: Verdict {
            safety_label: label,
            explanation,
            scores: Some(scores),
            prompt_score: Some(prompt_score),
        },
        words: tok.surfaces,
        word_unsafe,
        word_scores,
    })
}

/// See [`predict_with_details`]; this returns just the verdict.
pub fn predict(
    model: &GuardrailModel,
    text: &str,
    vocab: &Vocabulary,
    threshold: f64,
) -> Result<Verdict> {
    Ok(predict_with_details(model, text, vocab, threshold)?.verdict)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::PromptRecord;
    use crate::net::model::EncoderConfig;

    fn fixture() -> (GuardrailModel, Vocabulary) {
        let records: Vec<PromptRecord> = ["how to hack the account", "share a recipe"]
            .iter()
            .map(|t| PromptRecord {
                id: "x".into(),
                text: t.to_string(),
                label: SafetyLabel::Safe,
                explanation_words: None,
                category: None,
            })
            .collect();
        let vocab = Vocabulary::from_records(&records, 1);
        let config = EncoderConfig {
            vocab_size: vocab.size(),
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 12,
            max_len: 16,
            dropout: 0.0,
        };
        (GuardrailModel::new(config, 17).unwrap(), vocab)
    }

    #[test]
    fn threshold_outside_open_interval_is_an_error() {
        let (model, vocab) = fixture();
        for t in [0.0, 1.0, -0.3, 1.5] {
            assert!(predict(&model, "hack the account", &vocab, t).is_err());
        }
    }

    #[test]
    fn empty_text_is_an_error() {
        let (model, vocab) = fixture();
        assert!(predict(&model, "   ", &vocab, 0.5).is_err());
    }

    #[test]
    fn safe_verdicts_carry_no_explanation() {
        let (mut model, vocab) = fixture();
        // Force the prompt head to always vote safe.
        model.w_prompt.fill(0.0);
        model.b_prompt[0] = 10.0;
        model.b_prompt[1] = -10.0;
        let v = predict(&model, "how to hack the account", &vocab, 0.5).unwrap();
        assert_eq!(v.safety_label, SafetyLabel::Safe);
        assert!(v.explanation.is_empty());
        assert!(v.scores.is_some()); // detail still available pre-redaction
    }

    #[test]
    fn unsafe_verdict_lists_confident_words_in_text_order() {
        let (mut model, vocab) = fixture();
        model.w_prompt.fill(0.0);
        model.b_prompt[0] = -10.0;
        model.b_prompt[1] = 10.0;
        // Token head: flag only the token "hack".
        model.w_token.fill(0.0);
        model.b_token[0] = 5.0;
        model.b_token[1] = -5.0;
        let hack = vocab.id("hack") as usize;
        // Route through the embedding: 0-layer would be simpler, but here we
        // pin the head bias per-token via the embedding dot product being
        // irrelevant; instead flag everything and check ordering.
        let _ = hack;
        model.b_token[0] = -5.0;
        model.b_token[1] = 5.0;
        let detail =
            predict_with_details(&model, "How to hack the account", &vocab, 0.5).unwrap();
        assert_eq!(detail.verdict.safety_label, SafetyLabel::Unsafe);
        assert_eq!(detail.verdict.explanation, detail.words);
        assert_eq!(detail.words[2], "hack");
    }

    #[test]
    fn concise_serialization_has_exactly_the_stable_keys() {
        let (model, vocab) = fixture();
        let v = predict(&model, "share a recipe", &vocab, 0.5).unwrap();
        let concise = serde_json::to_string(&v.concise()).unwrap();
        assert!(concise.starts_with(r#"{"safety_label":"#), "{concise}");
        assert!(concise.contains(r#""explanation":"#));
        assert!(!concise.contains("scores"));
        assert!(!concise.contains("prompt_score"));
        let verbose = serde_json::to_string(&v).unwrap();
        for key in ["safety_label", "explanation", "scores", "prompt_score"] {
            assert!(verbose.contains(&format!("\"{key}\":")), "{verbose}");
        }
    }

    #[test]
    fn word_confidence_is_max_over_its_tokens() {
        let (model, vocab) = fixture();
        let detail = predict_with_details(&model, "share a recipe", &vocab, 0.5).unwrap();
        // Default tokenizer is 1:1, so word scores equal token scores.
        let tok = tokenize("share a recipe", &vocab).unwrap();
        let out = forward(&model, &tok.token_ids, None).unwrap();
        for (i, &score) in detail.word_scores.iter().enumerate() {
            assert!((score - out.token_probs[[i, 1]]).abs() < 1e-12);
        }
    }
}
