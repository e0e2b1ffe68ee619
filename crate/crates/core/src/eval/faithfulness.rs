//! Word-masking faithfulness test: if the highlighted words really drive the
//! prompt decision, hiding them should hurt prompt classification.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{EncodedExample, SafetyLabel, MASK_ID};
use crate::error::{Error, Result};
use crate::eval::metrics::{unsafe_f1, ConfusionCounts};
use crate::net::{forward, GuardrailModel};

/// How masked words disappear from the input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MaskMode {
    /// Replace every token of a masked word with the MASK id (keeps
    /// positions stable).
    #[default]
    ReplaceWithMask,
    /// Delete the word's tokens outright.
    Remove,
}

/// Unsafe-F1 on the full input and after masking the top-k predicted words.
#[derive(Debug, Clone, Serialize)]
pub struct FaithfulnessCurve {
    pub f1_full: f64,
    pub f1_at_k: BTreeMap<usize, f64>,
    pub mask_mode: MaskMode,
    pub threshold: f64,
    pub n_records: usize,
}

/// For each record: predict word labels, rank the words predicted unsafe by
/// confidence, mask the top-k, and re-score prompt classification. Records
/// with fewer than k unsafe-predicted words mask all they have.
pub fn faithfulness(
    model: &GuardrailModel,
    examples: &[EncodedExample],
    k_values: &[usize],
    mask_mode: MaskMode,
    threshold: f64,
) -> Result<FaithfulnessCurve> {
    if k_values.is_empty() {
        return Err(Error::InvalidArg("k_values is empty".to_string()));
    }
    if examples.is_empty() {
        return Err(Error::EmptyInput("faithfulness dataset".to_string()));
    }

    let golds: Vec<SafetyLabel> = examples.iter().map(|e| e.label).collect();

    // One pass for full-input predictions and the per-word ranking.
    let mut full_preds = Vec::with_capacity(examples.len());
    let mut rankings: Vec<Vec<usize>> = Vec::with_capacity(examples.len());
    for example in examples {
        let out = forward(model, &example.token_ids, None)?;
        full_preds.push(decide(out.prompt_probs[1], threshold));
        let mut unsafe_words: Vec<(usize, f64)> = example
            .word_spans
            .iter()
            .enumerate()
            .filter_map(|(w, &(start, end))| {
                let conf = (start..end)
                    .map(|i| out.token_probs[[i, 1]])
                    .fold(f64::NEG_INFINITY, f64::max);
                (conf >= 0.5).then_some((w, conf))
            })
            .collect();
        // Confidence descending; ties resolve to the earlier word so the
        // ranking (and the masked set at every k) is deterministic.
        unsafe_words.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        rankings.push(unsafe_words.into_iter().map(|(w, _)| w).collect());
    }
    let (f1_full, _) = unsafe_f1(&full_preds, &golds)?;

    let mut f1_at_k = BTreeMap::new();
    for &k in k_values {
        let mut preds = Vec::with_capacity(examples.len());
        for (example, ranking) in examples.iter().zip(&rankings) {
            let masked: Vec<usize> = ranking.iter().take(k).copied().collect();
            let ids = mask_words(example, &masked, mask_mode);
            let pred = if ids.is_empty() {
                // Removal mode can erase the whole prompt; score it as safe
                // (no content left to flag).
                SafetyLabel::Safe
            } else {
                decide(forward(model, &ids, None)?.prompt_probs[1], threshold)
            };
            preds.push(pred);
        }
        let (f1, _counts): (f64, ConfusionCounts) = unsafe_f1(&preds, &golds)?;
        f1_at_k.insert(k, f1);
    }

    Ok(FaithfulnessCurve {
        f1_full,
        f1_at_k,
        mask_mode,
        threshold,
        n_records: examples.len(),
    })
}

fn decide(unsafe_prob: f64, threshold: f64) -> SafetyLabel {
    if unsafe_prob >= threshold {
        SafetyLabel::Unsafe
    } else {
        SafetyLabel::Safe
    }
}

/// Applies the mask to all tokens of the listed words.
pub fn mask_words(example: &EncodedExample, words: &[usize], mode: MaskMode) -> Vec<u32> {
    let mut drop = vec![false; example.token_ids.len()];
    for &w in words {
        let (start, end) = example.word_spans[w];
        for flag in &mut drop[start..end] {
            *flag = true;
        }
    }
    match mode {
        MaskMode::ReplaceWithMask => example
            .token_ids
            .iter()
            .zip(&drop)
            .map(|(&id, &d)| if d { MASK_ID } else { id })
            .collect(),
        MaskMode::Remove => example
            .token_ids
            .iter()
            .zip(&drop)
            .filter(|(_, &d)| !d)
            .map(|(&id, _)| id)
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{PromptRecord, Vocabulary};
    use crate::net::EncoderConfig;

    fn example(ids: &[u32], label: SafetyLabel) -> EncodedExample {
        EncodedExample {
            id: "e".into(),
            token_ids: ids.to_vec(),
            word_spans: (0..ids.len()).map(|i| (i, i + 1)).collect(),
            label,
            token_labels: None,
            delta_t: Vec::new(),
            delta_p: 0.0,
        }
    }

    fn model() -> GuardrailModel {
        let records: Vec<PromptRecord> = ["a b c d e f g h"]
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
        GuardrailModel::new(
            EncoderConfig {
                vocab_size: vocab.size(),
                d_model: 8,
                n_layers: 1,
                n_heads: 2,
                d_ff: 12,
                max_len: 12,
                dropout: 0.0,
            },
            23,
        )
        .unwrap()
    }

    #[test]
    fn mask_replace_preserves_positions_and_remove_deletes() {
        let ex = example(&[4, 5, 6, 7], SafetyLabel::Unsafe);
        let replaced = mask_words(&ex, &[1, 2], MaskMode::ReplaceWithMask);
        assert_eq!(replaced, vec![4, MASK_ID, MASK_ID, 7]);
        let removed = mask_words(&ex, &[1, 2], MaskMode::Remove);
        assert_eq!(removed, vec![4, 7]);
    }

    #[test]
    fn all_safe_token_head_masks_nothing() {
        let mut m = model();
        // Token head votes safe everywhere: no word reaches the 0.5 bar.
        m.w_token.fill(0.0);
        m.b_token[0] = 8.0;
        m.b_token[1] = -8.0;
        let examples = vec![
            example(&[3, 4, 5], SafetyLabel::Unsafe),
            example(&[5, 6, 7], SafetyLabel::Safe),
        ];
        let curve = faithfulness(&m, &examples, &[1, 2, 3], MaskMode::ReplaceWithMask, 0.5)
            .unwrap();
        for (&_k, &f1) in &curve.f1_at_k {
            assert_eq!(f1, curve.f1_full);
        }
    }

    #[test]
    fn masked_sets_are_ranking_prefixes() {
        let m = model();
        let ex = example(&[3, 4, 5, 6, 7], SafetyLabel::Unsafe);
        let out = forward(&m, &ex.token_ids, None).unwrap();
        let mut ranked: Vec<(usize, f64)> = (0..5)
            .filter(|&i| out.token_probs[[i, 1]] >= 0.5)
            .map(|i| (i, out.token_probs[[i, 1]]))
            .collect();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let ranking: Vec<usize> = ranked.into_iter().map(|(i, _)| i).collect();
        for k in 1..=3usize {
            let prefix: Vec<usize> = ranking.iter().take(k).copied().collect();
            let shorter: Vec<usize> = ranking.iter().take(k - 1).copied().collect();
            assert!(shorter.iter().all(|w| prefix.contains(w)));
        }
    }

    #[test]
    fn empty_k_values_is_an_error() {
        let m = model();
        let examples = vec![example(&[3, 4], SafetyLabel::Safe)];
        assert!(faithfulness(&m, &examples, &[], MaskMode::Remove, 0.5).is_err());
    }
}
