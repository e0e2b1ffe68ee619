//! Sequential single-input inference timing, without batching.

use std::time::Instant;

use serde::Serialize;

use crate::corpus::EncodedExample;
use crate::error::{Error, Result};
use crate::net::{forward, GuardrailModel};
use crate::util::peak_rss_kb;

#[derive(Debug, Clone, Serialize)]
pub struct LatencyReport {
    pub mean_ms: f64,
    pub total_ms: f64,
    pub n_timed: usize,
    pub n_warmup: usize,
    /// Resident-set high-water mark where the platform exposes it.
    pub peak_rss_kb: Option<u64>,
}

const WARMUP_INPUTS: usize = 10;

/// Times one forward pass per input over the whole set, strictly
/// sequentially. The first ten inputs (cycled from the start of the set) are
/// warm-up and excluded from the mean.
pub fn latency_harness(
    model: &GuardrailModel,
    examples: &[EncodedExample],
) -> Result<LatencyReport> {
    if examples.is_empty() {
        return Err(Error::EmptyInput("latency dataset".to_string()));
    }
    for i in 0..WARMUP_INPUTS {
        let example = &examples[i % examples.len()];
        forward(model, &example.token_ids, None)?;
    }
    let start = Instant::now();
    for example in examples {
        forward(model, &example.token_ids, None)?;
    }
    let total_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(LatencyReport {
        mean_ms: total_ms / examples.len() as f64,
        total_ms,
        n_timed: examples.len(),
        n_warmup: WARMUP_INPUTS,
        peak_rss_kb: peak_rss_kb(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SafetyLabel;
    use crate::net::EncoderConfig;

    fn fixture() -> (GuardrailModel, Vec<EncodedExample>) {
        let model = GuardrailModel::new(
            EncoderConfig {
                vocab_size: 16,
                d_model: 8,
                n_layers: 1,
                n_heads: 2,
                d_ff: 12,
                max_len: 8,
                dropout: 0.0,
            },
            44,
        )
        .unwrap();
        let examples = (0..30)
            .map(|i| EncodedExample {
                id: i.to_string(),
                token_ids: vec![3 + (i % 5) as u32, 4, 5, 6],
                word_spans: vec![(0, 1), (1, 2), (2, 3), (3, 4)],
                label: SafetyLabel::Safe,
                token_labels: None,
                delta_t: Vec::new(),
                delta_p: 0.0,
            })
            .collect();
        (model, examples)
    }

    #[test]
    fn mean_equals_total_over_count() {
        let (model, examples) = fixture();
        let report = latency_harness(&model, &examples).unwrap();
        assert_eq!(report.n_timed, 30);
        assert!((report.mean_ms - report.total_ms / 30.0).abs() < 1e-12);
        assert!(report.mean_ms > 0.0);
    }

    #[test]
    fn doubling_the_dataset_keeps_the_mean_within_noise() {
        let (model, examples) = fixture();
        let doubled: Vec<EncodedExample> = examples
            .iter()
            .chain(examples.iter())
            .cloned()
            .collect();
        let a = latency_harness(&model, &examples).unwrap();
        let b = latency_harness(&model, &doubled).unwrap();
        let ratio = a.mean_ms / b.mean_ms;
        assert!((0.5..=2.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn memory_high_water_mark_is_reported_on_linux() {
        let (model, examples) = fixture();
        let report = latency_harness(&model, &examples).unwrap();
        if cfg!(target_os = "linux") {
            assert!(report.peak_rss_kb.is_some());
        }
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let (model, _) = fixture();
        assert!(latency_harness(&model, &[]).is_err());
    }
}
