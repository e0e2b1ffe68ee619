//! Shapley-value word attribution over a subset value function. Exact
//! enumeration for small inputs, seeded permutation sampling beyond that.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{EncodedExample, MASK_ID};
use crate::error::{Error, Result};
use crate::net::{forward, GuardrailModel};

/// Exact enumeration is capped here: 2^12 value-function evaluations.
pub const EXACT_LIMIT: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShapleyMode {
    Exact,
    Permutation { n_perm: usize, seed: u64 },
}

/// Computes per-word Shapley attributions. `value` maps a bitmask of kept
/// words (bit i set = word i present) to the black-box score of that subset.
pub fn shapley_explain(
    n_words: usize,
    value: &mut dyn FnMut(u64) -> f64,
    mode: ShapleyMode,
) -> Result<Vec<f64>> {
    if n_words == 0 {
        return Err(Error::EmptyInput("shapley needs at least one word".to_string()));
    }
    if n_words > 63 {
        return Err(Error::InvalidArg("more than 63 words unsupported".to_string()));
    }
    match mode {
        ShapleyMode::Exact => {
            if n_words > EXACT_LIMIT {
                return Err(Error::InvalidArg(format!(
                    "exact mode handles at most {EXACT_LIMIT} words (got {n_words}); \
                     use permutation mode"
                )));
            }
            Ok(exact(n_words, value))
        }
        ShapleyMode::Permutation { n_perm, seed } => {
            if n_perm == 0 {
                return Err(Error::InvalidArg("n_perm must be positive".to_string()));
            }
            Ok(permutation(n_words, value, n_perm, seed))
        }
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

fn exact(n: usize, value: &mut dyn FnMut(u64) -> f64) -> Vec<f64> {
    let full = 1u64 << n;
    let mut table = Vec::with_capacity(full as usize);
    for mask in 0..full {
        table.push(value(mask));
    }
    let n_fact = factorial(n);
    let mut phi = vec![0.0; n];
    for (i, phi_i) in phi.iter_mut().enumerate() {
        let bit = 1u64 << i;
        for mask in 0..full {
            if mask & bit != 0 {
                continue;
            }
            let s = mask.count_ones() as usize;
            let weight = factorial(s) * factorial(n - s - 1) / n_fact;
            *phi_i += weight * (table[(mask | bit) as usize] - table[mask as usize]);
        }
    }
    phi
}

fn permutation(n: usize, value: &mut dyn FnMut(u64) -> f64, n_perm: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cache: HashMap<u64, f64> = HashMap::new();
    let mut eval = |mask: u64, value: &mut dyn FnMut(u64) -> f64| -> f64 {
        *cache.entry(mask).or_insert_with(|| value(mask))
    };
    let mut order: Vec<usize> = (0..n).collect();
    let mut phi = vec![0.0; n];
    for _ in 0..n_perm {
        order.shuffle(&mut rng);
        let mut mask = 0u64;
        let mut prev = eval(0, value);
        for &i in &order {
            mask |= 1 << i;
            let with = eval(mask, value);
            phi[i] += with - prev;
            prev = with;
        }
    }
    for p in &mut phi {
        *p /= n_perm as f64;
    }
    phi
}

/// Value function for a model: unsafe probability of the example with every
/// word outside the kept subset replaced by MASK tokens (length-stable).
pub fn model_subset_value<'a>(
    model: &'a GuardrailModel,
    example: &'a EncodedExample,
) -> impl FnMut(u64) -> f64 + 'a {
    move |mask: u64| {
        let mut ids = example.token_ids.clone();
        for (w, &(start, end)) in example.word_spans.iter().enumerate() {
            if mask & (1 << w) == 0 {
                for id in &mut ids[start..end] {
                    *id = MASK_ID;
                }
            }
        }
        forward(model, &ids, None)
            .expect("masked forward cannot fail on a valid example")
            .prompt_probs[1]
    }
}
