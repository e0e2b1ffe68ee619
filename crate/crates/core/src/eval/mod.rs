//! Measurement procedures: unsafe-F1 at prompt and word level, word-masking
//! faithfulness, lexical-overlap binning, post-hoc explanation baselines,
//! inter-annotator agreement, grouped scores, and the latency harness.
//!
//! Everything here is read-only on the model.

mod faithfulness;
mod latency;
mod lime;
mod metrics;
mod overlap;
mod shapley;

pub use faithfulness::{faithfulness, mask_words, FaithfulnessCurve, MaskMode};
pub use latency::{latency_harness, LatencyReport};
pub use lime::{lime_explain, LimeConfig};
pub use metrics::{
    best_threshold, cohens_kappa, default_threshold_grid, grouped_f1, prompt_f1_encoded,
    prompt_scores, unsafe_f1, word_confusion, word_f1, word_f1_encoded, ConfusionCounts,
    GroupScores,
};
pub use overlap::{
    default_stopwords, jaccard, lexical_overlap, lexical_overlap_with, max_jaccard, NGram,
    OverlapHistogram, STOPWORDS,
};
pub use shapley::{model_subset_value, shapley_explain, ShapleyMode, EXACT_LIMIT};

use crate::error::Result;

/// Word-level threshold tuning for post-hoc explainers: flattens per-record
/// word weights and gold flags, then sweeps the grid. Same contract as the
/// prompt-threshold tuner, over word-level F1.
pub fn lime_threshold(
    weights_per_record: &[Vec<f64>],
    golds_per_record: &[Vec<bool>],
    grid: &[f64],
) -> Result<(f64, f64)> {
    let mut scored = Vec::new();
    for (weights, golds) in weights_per_record.iter().zip(golds_per_record) {
        for (&w, &g) in weights.iter().zip(golds) {
            scored.push((w, g));
        }
    }
    best_threshold(&scored, grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lime_threshold_singleton_grid() {
        let weights = vec![vec![0.9, 0.1]];
        let golds = vec![vec![true, false]];
        let (t, f1) = lime_threshold(&weights, &golds, &[0.5]).unwrap();
        assert_eq!(t, 0.5);
        assert_eq!(f1, 1.0);
    }

    #[test]
    fn lime_threshold_separable_weights_take_smallest_tie() {
        let weights = vec![vec![0.8, 0.9], vec![0.05, 0.1]];
        let golds = vec![vec![true, true], vec![false, false]];
        let grid: Vec<f64> = vec![0.2, 0.4, 0.6];
        let (t, f1) = lime_threshold(&weights, &golds, &grid).unwrap();
        assert_eq!(f1, 1.0);
        assert_eq!(t, 0.2);
    }

    #[test]
    fn lime_threshold_without_unsafe_gold_warns_and_returns_smallest() {
        let weights = vec![vec![0.8]];
        let golds = vec![vec![false]];
        let (t, f1) = lime_threshold(&weights, &golds, &[0.3, 0.5]).unwrap();
        assert_eq!((t, f1), (0.3, 0.0));
    }
}
