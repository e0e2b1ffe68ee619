//! Token polarization statistics: how strongly each token skews toward one
//! safety class across the training split, and the derived per-token and
//! per-prompt scores used as weak supervision.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::records::{PromptRecord, SafetyLabel};
use super::tokenize::tokenize;
use super::vocab::Vocabulary;
use super::{encode_records, EncodedExample};
use crate::error::{Error, Result};
use crate::util::fnv1a64;

/// Which label conditions the per-class token counts.
///
/// `PromptLabel` counts every token occurrence under the gold label of its
/// containing prompt and therefore covers the whole training split.
/// `TokenLabel` counts occurrences under their own projected token label and
/// only sees supervised records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CountMode {
    #[default]
    PromptLabel,
    TokenLabel,
}

/// Per-token `(c_safe, c_unsafe)` occurrence counts over the training split,
/// plus the epsilon used when normalizing scores. Immutable once built and
/// safe to share across readers.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarizationTable {
    counts: Vec<[u64; 2]>,
    epsilon: f64,
    mode: CountMode,
}

pub const DEFAULT_EPSILON: f64 = 1e-8;

impl PolarizationTable {
    /// Counts token occurrences over the training split. Must never see dev
    /// or test data.
    pub fn build(
        records: &[PromptRecord],
        vocab: &Vocabulary,
        mode: CountMode,
        epsilon: f64,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyInput("training set for polarization".to_string()));
        }
        let mut counts = vec![[0u64; 2]; vocab.size()];
        match mode {
            CountMode::PromptLabel => {
                for record in records {
                    let tok = tokenize(&record.text, vocab)?;
                    let class = record.label.class_index();
                    for id in tok.token_ids {
                        counts[id as usize][class] += 1;
                    }
                }
            }
            CountMode::TokenLabel => {
                let (encoded, _) = encode_records(records, vocab)?;
                for example in &encoded {
                    let Some(labels) = &example.token_labels else {
                        continue;
                    };
                    for (id, label) in example.token_ids.iter().zip(labels) {
                        counts[*id as usize][label.class_index()] += 1;
                    }
                }
            }
        }
        Ok(PolarizationTable {
            counts,
            epsilon,
            mode,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn mode(&self) -> CountMode {
        self.mode
    }

    /// `(c_safe, c_unsafe)` for a token id; ids outside the table count as
    /// never seen.
    pub fn counts(&self, id: u32) -> (u64, u64) {
        self.counts
            .get(id as usize)
            .map(|c| (c[0], c[1]))
            .unwrap_or((0, 0))
    }

    /// Token polarization score gated on label/dominance agreement:
    /// `1{y_t = argmax_y c^y} * |c_safe - c_unsafe| / (c_safe + c_unsafe + eps)`.
    ///
    /// Equal counts yield 0 (the numerator vanishes), and a label that
    /// contradicts the count-dominant class yields 0 via the gate.
    pub fn delta_t(&self, id: u32, y_t: SafetyLabel) -> f64 {
        let (c_safe, c_unsafe) = self.counts(id);
        if c_safe == c_unsafe {
            return 0.0;
        }
        let dominant = if c_unsafe > c_safe {
            SafetyLabel::Unsafe
        } else {
            SafetyLabel::Safe
        };
        if y_t != dominant {
            return 0.0;
        }
        c_safe.abs_diff(c_unsafe) as f64 / ((c_safe + c_unsafe) as f64 + self.epsilon)
    }

    /// Prompt polarization score aggregated over token occurrences whose label
    /// matches the prompt label. Unsupervised examples score 0 (the formula
    /// needs token labels), as does a dominance tie or a prompt whose matching
    /// tokens skew toward the opposite class.
    pub fn delta_p(&self, example: &EncodedExample) -> f64 {
        let Some(labels) = &example.token_labels else {
            return 0.0;
        };
        let mut diff_sum = 0.0;
        let mut total_sum = 0u64;
        let mut safe_sum = 0u64;
        let mut unsafe_sum = 0u64;
        for (id, label) in example.token_ids.iter().zip(labels) {
            if *label != example.label {
                continue;
            }
            let (c_safe, c_unsafe) = self.counts(*id);
            diff_sum += c_safe.abs_diff(c_unsafe) as f64;
            total_sum += c_safe + c_unsafe;
            safe_sum += c_safe;
            unsafe_sum += c_unsafe;
        }
        if safe_sum == unsafe_sum {
            // Covers both the empty sum and an exact dominance tie.
            return 0.0;
        }
        let dominant = if unsafe_sum > safe_sum {
            SafetyLabel::Unsafe
        } else {
            SafetyLabel::Safe
        };
        if dominant != example.label {
            return 0.0;
        }
        diff_sum / (total_sum as f64 + self.epsilon)
    }

    /// Stable fingerprint of the table contents, used to assert that
    /// evaluation never mutates training statistics.
    pub fn checksum(&self) -> u64 {
        let mut bytes = Vec::with_capacity(self.counts.len() * 16 + 8);
        for c in &self.counts {
            bytes.extend_from_slice(&c[0].to_le_bytes());
            bytes.extend_from_slice(&c[1].to_le_bytes());
        }
        bytes.extend_from_slice(&self.epsilon.to_le_bytes());
        fnv1a64(&bytes)
    }

    /// Persists as JSON keyed by token string, sorted for reproducibility.
    pub fn save(&self, path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<()> {
        let mut counts = BTreeMap::new();
        for (id, c) in self.counts.iter().enumerate() {
            if c[0] == 0 && c[1] == 0 {
                continue;
            }
            let token = vocab.token(id as u32).ok_or_else(|| {
                Error::TokenIdOutOfRange {
                    id: id as u32,
                    vocab: vocab.size(),
                }
            })?;
            counts.insert(token.to_string(), [c[0], c[1]]);
        }
        let disk = TableOnDisk {
            epsilon: self.epsilon,
            mode: self.mode,
            counts,
        };
        let json = serde_json::to_string_pretty(&disk)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<Self> {
        let json = std::fs::read_to_string(path)?;
        let disk: TableOnDisk = serde_json::from_str(&json)?;
        let mut counts = vec![[0u64; 2]; vocab.size()];
        for (token, c) in disk.counts {
            let id = vocab.lookup(&token).ok_or_else(|| {
                Error::Config(format!("polarization token `{token}` not in vocabulary"))
            })?;
            counts[id as usize] = c;
        }
        Ok(PolarizationTable {
            counts,
            epsilon: disk.epsilon,
            mode: disk.mode,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct TableOnDisk {
    epsilon: f64,
    #[serde(default)]
    mode: CountMode,
    counts: BTreeMap<String, [u64; 2]>,
}
