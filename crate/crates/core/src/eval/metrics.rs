//! Unsafe-class F1, threshold search, and inter-annotator agreement.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::corpus::{encode_records, EncodedExample, PromptRecord, SafetyLabel, Vocabulary};
use crate::error::{Error, Result};
use crate::net::{forward, GuardrailModel};

/// Confusion counts for the unsafe (positive) class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    #[serde(rename = "tp")]
    pub true_pos: usize,
    #[serde(rename = "fp")]
    pub false_pos: usize,
    #[serde(rename = "fn")]
    pub false_neg: usize,
    #[serde(rename = "tn")]
    pub true_neg: usize,
}

impl ConfusionCounts {
    pub fn observe(&mut self, predicted: SafetyLabel, gold: SafetyLabel) {
        match (predicted.is_unsafe(), gold.is_unsafe()) {
            (true, true) => self.true_pos += 1,
            (true, false) => self.false_pos += 1,
            (false, true) => self.false_neg += 1,
            (false, false) => self.true_neg += 1,
        }
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.true_pos += other.true_pos;
        self.false_pos += other.false_pos;
        self.false_neg += other.false_neg;
        self.true_neg += other.true_neg;
    }

    pub fn population(&self) -> usize {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }

    pub fn precision(&self) -> f64 {
        ratio(self.true_pos, self.true_pos + self.false_pos)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.true_pos, self.true_pos + self.false_neg)
    }

    /// Harmonic mean of precision and recall; 0 on any zero denominator.
    pub fn f1(&self) -> f64 {
        let p = self.precision();
        let r = self.recall();
        if p + r == 0.0 {
            if self.true_pos + self.false_pos + self.false_neg == 0 {
                log::warn!("F1 undefined (no unsafe gold or predictions); reporting 0");
            }
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// F1 with unsafe as the positive class over aligned label sequences.
pub fn unsafe_f1(
    predictions: &[SafetyLabel],
    golds: &[SafetyLabel],
) -> Result<(f64, ConfusionCounts)> {
    if predictions.len() != golds.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: golds.len(),
        });
    }
    let mut counts = ConfusionCounts::default();
    for (&p, &g) in predictions.iter().zip(golds) {
        counts.observe(p, g);
    }
    Ok((counts.f1(), counts))
}

/// Prompt-level unsafe probabilities for a set of encoded examples.
pub fn prompt_scores(model: &GuardrailModel, examples: &[EncodedExample]) -> Result<Vec<f64>> {
    examples
        .iter()
        .map(|ex| Ok(forward(model, &ex.token_ids, None)?.prompt_probs[1]))
        .collect()
}

/// Prompt unsafe-F1 of a model on encoded examples at a decision threshold.
pub fn prompt_f1_encoded(
    model: &GuardrailModel,
    examples: &[EncodedExample],
    threshold: f64,
) -> Result<(f64, ConfusionCounts)> {
    let scores = prompt_scores(model, examples)?;
    let preds: Vec<SafetyLabel> = scores
        .iter()
        .map(|&s| {
            if s >= threshold {
                SafetyLabel::Unsafe
            } else {
                SafetyLabel::Safe
            }
        })
        .collect();
    let golds: Vec<SafetyLabel> = examples.iter().map(|e| e.label).collect();
    unsafe_f1(&preds, &golds)
}

/// Gold word label: unsafe iff any token in the word's span is labeled
/// unsafe. Predicted word label: max token unsafe-probability >= 0.5.
pub fn word_confusion(
    model: &GuardrailModel,
    example: &EncodedExample,
) -> Result<Option<ConfusionCounts>> {
    let Some(token_labels) = &example.token_labels else {
        return Ok(None);
    };
    let out = forward(model, &example.token_ids, None)?;
    let mut counts = ConfusionCounts::default();
    for &(start, end) in &example.word_spans {
        let gold = if token_labels[start..end].contains(&SafetyLabel::Unsafe) {
            SafetyLabel::Unsafe
        } else {
            SafetyLabel::Safe
        };
        let conf = (start..end)
            .map(|i| out.token_probs[[i, 1]])
            .fold(f64::NEG_INFINITY, f64::max);
        let pred = if conf >= 0.5 {
            SafetyLabel::Unsafe
        } else {
            SafetyLabel::Safe
        };
        counts.observe(pred, gold);
    }
    Ok(Some(counts))
}

/// Micro-averaged word-level unsafe-F1 over supervised examples; records
/// without word labels are skipped and leave the counts unchanged.
pub fn word_f1_encoded(
    model: &GuardrailModel,
    examples: &[EncodedExample],
) -> Result<(f64, ConfusionCounts)> {
    let mut counts = ConfusionCounts::default();
    for example in examples {
        if let Some(c) = word_confusion(model, example)? {
            counts.merge(&c);
        }
    }
    Ok((counts.f1(), counts))
}

/// Word-level unsafe-F1 straight from records (encodes internally).
pub fn word_f1(
    model: &GuardrailModel,
    records: &[PromptRecord],
    vocab: &Vocabulary,
) -> Result<(f64, ConfusionCounts)> {
    let (encoded, _) = encode_records(records, vocab)?;
    word_f1_encoded(model, &encoded)
}

/// Sweeps a threshold grid and returns `(threshold, f1)` maximizing F1 of
/// `score >= threshold` against the golds; ties go to the smallest
/// threshold. Warns and returns the smallest grid point when the golds
/// contain no positives.
pub fn best_threshold(scored: &[(f64, bool)], grid: &[f64]) -> Result<(f64, f64)> {
    if grid.is_empty() {
        return Err(Error::InvalidArg("threshold grid is empty".to_string()));
    }
    for &t in grid {
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::InvalidArg(format!(
                "grid thresholds must lie in (0, 1), got {t}"
            )));
        }
    }
    let mut grid = grid.to_vec();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if !scored.iter().any(|&(_, gold)| gold) {
        log::warn!("no positive golds; F1 is 0 for every threshold, returning the smallest");
        return Ok((grid[0], 0.0));
    }
    let mut best = (grid[0], -1.0);
    for &t in &grid {
        let mut counts = ConfusionCounts::default();
        for &(score, gold) in scored {
            let pred = if score >= t {
                SafetyLabel::Unsafe
            } else {
                SafetyLabel::Safe
            };
            let gold = if gold {
                SafetyLabel::Unsafe
            } else {
                SafetyLabel::Safe
            };
            counts.observe(pred, gold);
        }
        let f1 = counts.f1();
        if f1 > best.1 {
            best = (t, f1);
        }
    }
    Ok(best)
}

/// The default tuning grid: 0.05 to 0.95 in steps of 0.05.
pub fn default_threshold_grid() -> Vec<f64> {
    (1..=19).map(|i| i as f64 * 0.05).collect()
}

/// Cohen's kappa over aligned binary sequences, with empirical marginals.
/// Chance agreement of exactly 1 (both raters constant and identical) is
/// defined as kappa = 1.
pub fn cohens_kappa(labels_a: &[bool], labels_b: &[bool]) -> Result<f64> {
    if labels_a.len() != labels_b.len() {
        return Err(Error::LengthMismatch {
            left: labels_a.len(),
            right: labels_b.len(),
        });
    }
    if labels_a.is_empty() {
        return Err(Error::EmptyInput("kappa label sequences".to_string()));
    }
    let n = labels_a.len() as f64;
    let agree = labels_a
        .iter()
        .zip(labels_b)
        .filter(|(a, b)| a == b)
        .count() as f64;
    let p_o = agree / n;
    let pa = labels_a.iter().filter(|&&v| v).count() as f64 / n;
    let pb = labels_b.iter().filter(|&&v| v).count() as f64 / n;
    let p_e = pa * pb + (1.0 - pa) * (1.0 - pb);
    if p_e >= 1.0 - 1e-12 {
        return Ok(1.0);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Per-group scores from [`grouped_f1`].
#[derive(Debug, Clone, Serialize)]
pub struct GroupScores {
    pub n: usize,
    pub prompt_f1: f64,
    pub prompt_counts: ConfusionCounts,
    /// Present when the group contains supervised records.
    pub word_f1: Option<f64>,
}

/// Prompt and word unsafe-F1 per record group. Records without the group
/// field fall into `"others"`. Held-out-topic protocols are supported by
/// filtering the training data upstream; evaluation here is group-local.
pub fn grouped_f1(
    model: &GuardrailModel,
    records: &[PromptRecord],
    vocab: &Vocabulary,
    threshold: f64,
) -> Result<BTreeMap<String, GroupScores>> {
    let (encoded, _) = encode_records(records, vocab)?;
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, record) in records.iter().enumerate() {
        let group = record
            .category
            .clone()
            .unwrap_or_else(|| "others".to_string());
        groups.entry(group).or_default().push(i);
    }
    let mut out = BTreeMap::new();
    for (group, indices) in groups {
        let members: Vec<EncodedExample> =
            indices.iter().map(|&i| encoded[i].clone()).collect();
        let (prompt_f1, prompt_counts) = prompt_f1_encoded(model, &members, threshold)?;
        let mut word_counts = ConfusionCounts::default();
        let mut any_supervised = false;
        for member in &members {
            if let Some(c) = word_confusion(model, member)? {
                word_counts.merge(&c);
                any_supervised = true;
            }
        }
        out.insert(
            group,
            GroupScores {
                n: members.len(),
                prompt_f1,
                prompt_counts,
                word_f1: any_supervised.then(|| word_counts.f1()),
            },
        );
    }
    Ok(out)
}
