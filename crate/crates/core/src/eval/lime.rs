//! Perturbation-based local surrogate explanation for a black-box text
//! classifier: sample word-dropout perturbations, weight them by similarity
//! to the original, and fit a weighted ridge surrogate over the most
//! informative words.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimeConfig {
    /// Number of perturbed samples.
    pub n_samples: usize,
    /// Surrogate is fit on this many words, chosen by |weighted correlation|.
    pub top_k: usize,
    /// Ridge penalty on the word coefficients (the intercept is free).
    pub ridge_lambda: f64,
    /// Kernel width = `kernel_width_scale * sqrt(word count)`.
    pub kernel_width_scale: f64,
    pub seed: u64,
}

impl Default for LimeConfig {
    fn default() -> Self {
        LimeConfig {
            n_samples: 1500,
            top_k: 25,
            ridge_lambda: 1e-3,
            kernel_width_scale: 0.75,
            seed: 0,
        }
    }
}

/// Per-word weights toward the unsafe class, aligned with `words`. Words not
/// selected for the surrogate get weight 0.
pub fn lime_explain(
    words: &[String],
    blackbox: &dyn Fn(&str) -> f64,
    config: &LimeConfig,
) -> Result<Vec<f64>> {
    let n = words.len();
    if n == 0 {
        return Err(Error::EmptyInput("lime needs at least one word".to_string()));
    }
    if config.n_samples == 0 || config.top_k == 0 {
        return Err(Error::InvalidArg(
            "n_samples and top_k must be positive".to_string(),
        ));
    }
    if n == 1 {
        // Direct presence/absence contrast.
        return Ok(vec![blackbox(&words[0]) - blackbox("")]);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let sigma = config.kernel_width_scale * (n as f64).sqrt();

    // Sample masks, query the black box, and kernel-weight by cosine
    // distance between presence vectors (original = all ones).
    let mut masks: Vec<Vec<f64>> = Vec::with_capacity(config.n_samples);
    let mut targets: Vec<f64> = Vec::with_capacity(config.n_samples);
    let mut kernel: Vec<f64> = Vec::with_capacity(config.n_samples);
    let mut text_buf = String::new();
    for _ in 0..config.n_samples {
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < 0.5 { 0.0 } else { 1.0 })
            .collect();
        let kept = mask.iter().filter(|&&m| m == 1.0).count();
        text_buf.clear();
        for (word, &m) in words.iter().zip(&mask) {
            if m == 1.0 {
                if !text_buf.is_empty() {
                    text_buf.push(' ');
                }
                text_buf.push_str(word);
            }
        }
        targets.push(blackbox(&text_buf));
        let cos = if kept == 0 {
            0.0
        } else {
            (kept as f64 / n as f64).sqrt()
        };
        let dist = 1.0 - cos;
        kernel.push((-dist * dist / (sigma * sigma)).exp());
        masks.push(mask);
    }

    // Select the top-K words by |weighted correlation| with the target.
    let mut ranked: Vec<(usize, f64)> = (0..n)
        .map(|j| {
            let col: Vec<f64> = masks.iter().map(|m| m[j]).collect();
            (j, weighted_correlation(&col, &targets, &kernel).abs())
        })
        .collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut selected: Vec<usize> = ranked
        .into_iter()
        .take(config.top_k.min(n))
        .map(|(j, _)| j)
        .collect();
    selected.sort_unstable();

    // Weighted ridge with a free intercept: solve (X^T W X + lambda I') b =
    // X^T W y over [intercept, selected words].
    let k = selected.len();
    let dim = k + 1;
    let mut xtx = vec![vec![0.0; dim]; dim];
    let mut xty = vec![0.0; dim];
    for (row, (&y, &w)) in masks.iter().zip(targets.iter().zip(&kernel)) {
        let mut x = Vec::with_capacity(dim);
        x.push(1.0);
        for &j in &selected {
            x.push(row[j]);
        }
        for a in 0..dim {
            xty[a] += w * x[a] * y;
            for b in 0..dim {
                xtx[a][b] += w * x[a] * x[b];
            }
        }
    }
    for j in 1..dim {
        xtx[j][j] += config.ridge_lambda;
    }
    let beta = solve_linear(xtx, xty).ok_or_else(|| {
        Error::InvalidArg("singular surrogate system; try more samples".to_string())
    })?;

    let mut weights = vec![0.0; n];
    for (slot, &j) in selected.iter().enumerate() {
        weights[j] = beta[slot + 1];
    }
    Ok(weights)
}

fn weighted_correlation(x: &[f64], y: &[f64], w: &[f64]) -> f64 {
    let wsum: f64 = w.iter().sum();
    if wsum <= 0.0 {
        return 0.0;
    }
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / wsum;
    let my = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / wsum;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..x.len() {
        let dx = x[i] - mx;
        let dy = y[i] - my;
        cov += w[i] * dx * dy;
        vx += w[i] * dx * dx;
        vy += w[i] * dy * dy;
    }
    if vx <= 0.0 || vy <= 0.0 {
        return 0.0;
    }
    cov / (vx.sqrt() * vy.sqrt())
}

/// Gaussian elimination with partial pivoting.
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| {
            a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap()
        })?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}
