//! End-to-end training: batching, the optimization step, seeding, dev-set
//! model selection, and prediction-threshold tuning.
//!
//! Training is deterministic given the seed when run single-threaded: batch
//! order, dropout, and initialization all derive from ChaCha streams.

mod adamw;

pub use adamw::{clip_global_norm, AdamW};

use std::io::Write;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{EncodedExample, PolarizationTable, SafetyLabel};
use crate::error::{Error, Result};
use crate::eval::{
    best_threshold, default_threshold_grid, prompt_f1_encoded, prompt_scores, word_f1_encoded,
};
use crate::loss::{
    cross_entropy, explanation_loss, focal, joint_loss, joint_loss_grad_s, prompt_loss,
    task_loss_grad_pt, LossBreakdown, LossConfig,
};
use crate::net::{backward, forward_train, GuardrailModel};

/// Which checkpoint the run returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMode {
    /// Best dev prompt unsafe-F1; ties go to the earliest epoch.
    #[default]
    BestDev,
    LastEpoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub grad_clip_norm: f64,
    pub selection: SelectionMode,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk_preset()
    }
}

impl TrainConfig {
    /// From-scratch training of the small encoder.
    pub fn desk_preset() -> Self {
        TrainConfig {
            learning_rate: 3e-4,
            batch_size: 16,
            epochs: 30,
            seed: 42,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip_norm: 1.0,
            selection: SelectionMode::BestDev,
            loss: LossConfig::default(),
        }
    }

    /// The pretrained-backbone recipe: lower rate, few epochs.
    pub fn fine_tune_preset() -> Self {
        TrainConfig {
            learning_rate: 2e-5,
            epochs: 3,
            ..Self::desk_preset()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be >= 0".to_string()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "batch_size and epochs must be positive".to_string(),
            ));
        }
        if self.grad_clip_norm < 0.0 {
            return Err(Error::Config("grad_clip_norm must be >= 0".to_string()));
        }
        self.loss.validate()
    }
}

/// Per-epoch aggregates for the run report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_total: f64,
    pub mean_l_pc: f64,
    pub mean_l_ec: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub dev_prompt_f1: Option<f64>,
    pub dev_word_f1: Option<f64>,
}

/// Run summary. Wall-clock is informational only and excluded from
/// serialization so reports stay byte-identical across reruns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub selected_epoch: usize,
    pub steps: usize,
    pub tuned_threshold: Option<f64>,
    pub tuned_dev_f1: Option<f64>,
    #[serde(skip)]
    pub wall_clock_ms: f64,
}

/// Fills `delta_t` per supervised token and `delta_p` per example from the
/// polarization table. Amortized constant time per token; idempotent.
/// Tokens missing from the table count (0, 0) and score 0.
pub fn attach_weak_supervision(examples: &mut [EncodedExample], table: &PolarizationTable) {
    for example in examples {
        match &example.token_labels {
            Some(labels) => {
                example.delta_t = example
                    .token_ids
                    .iter()
                    .zip(labels)
                    .map(|(&id, &y)| table.delta_t(id, y))
                    .collect();
                example.delta_p = table.delta_p(example);
            }
            None => {
                example.delta_t = Vec::new();
                example.delta_p = 0.0;
            }
        }
    }
}

/// Forward-only batch objective; the scalar the gradients differentiate.
pub fn batch_loss(
    model: &GuardrailModel,
    batch: &[&EncodedExample],
    config: &LossConfig,
) -> Result<LossBreakdown> {
    let (breakdown, _) = batch_pass(model, batch, config, None, false)?;
    Ok(breakdown)
}

/// Batch objective plus parameter gradients.
pub fn batch_gradients(
    model: &GuardrailModel,
    batch: &[&EncodedExample],
    config: &LossConfig,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<(LossBreakdown, GuardrailModel)> {
    let (breakdown, grads) = batch_pass(model, batch, config, dropout_rng, true)?;
    Ok((breakdown, grads.expect("gradients requested")))
}

fn batch_pass(
    model: &GuardrailModel,
    batch: &[&EncodedExample],
    config: &LossConfig,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
    want_grads: bool,
) -> Result<(LossBreakdown, Option<GuardrailModel>)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("batch".to_string()));
    }
    let b = batch.len() as f64;

    struct Pass {
        out: crate::net::ForwardOutput,
        cache: crate::net::ForwardCache,
        n_sup_tokens: usize,
    }

    let mut passes = Vec::with_capacity(batch.len());
    let mut sum_pc = 0.0;
    let mut sum_ce_p = 0.0;
    let mut sum_fl_p = 0.0;
    let mut sum_ec = 0.0;
    let mut sum_ce_t = 0.0;
    let mut sum_fl_t = 0.0;
    let mut sup_examples = 0usize;

    for example in batch {
        let rng = dropout_rng.as_mut().map(|r| &mut **r);
        let (out, cache) = forward_train(model, &example.token_ids, None, rng)?;

        let delta_p = if config.use_weak_supervision {
            example.delta_p
        } else {
            0.0
        };
        sum_pc += prompt_loss(out.prompt_probs, example.label, delta_p, config);
        sum_ce_p += cross_entropy(out.prompt_probs, example.label, config.epsilon_prob);
        sum_fl_p += focal(out.prompt_probs, example.label, config.gamma, config.epsilon_prob);

        let (l_ec, n_sup_tokens) = explanation_loss(
            &out.token_probs,
            example.token_labels.as_deref(),
            &example.delta_t,
            None,
            config,
        );
        if n_sup_tokens > 0 {
            sup_examples += 1;
            sum_ec += l_ec;
            let labels = example.token_labels.as_ref().unwrap();
            let (mut ce_t, mut fl_t) = (0.0, 0.0);
            for (i, &label) in labels.iter().enumerate() {
                let probs = [out.token_probs[[i, 0]], out.token_probs[[i, 1]]];
                ce_t += cross_entropy(probs, label, config.epsilon_prob);
                fl_t += focal(probs, label, config.gamma, config.epsilon_prob);
            }
            sum_ce_t += ce_t / n_sup_tokens as f64;
            sum_fl_t += fl_t / n_sup_tokens as f64;
        }

        passes.push(Pass {
            out,
            cache,
            n_sup_tokens,
        });
    }

    let l_pc_bar = sum_pc / b;
    let l_ec_bar = if sup_examples > 0 {
        sum_ec / sup_examples as f64
    } else {
        0.0
    };
    let total = joint_loss(
        l_pc_bar,
        l_ec_bar,
        model.s_prompt,
        model.s_token,
        config.use_uncertainty_weighting,
    );
    let breakdown = LossBreakdown {
        l_pc: l_pc_bar,
        l_ec: l_ec_bar,
        ce_p: sum_ce_p / b,
        fl_p: sum_fl_p / b,
        mean_ce_t: if sup_examples > 0 {
            sum_ce_t / sup_examples as f64
        } else {
            0.0
        },
        mean_fl_t: if sup_examples > 0 {
            sum_fl_t / sup_examples as f64
        } else {
            0.0
        },
        total,
        sigma1: (model.s_prompt / 2.0).exp(),
        sigma2: (model.s_token / 2.0).exp(),
    };

    if !want_grads {
        return Ok((breakdown, None));
    }

    let w_pc = if config.use_uncertainty_weighting {
        0.5 * (-model.s_prompt).exp()
    } else {
        1.0
    } / b;
    let w_ec = if sup_examples > 0 {
        let base = if config.use_uncertainty_weighting {
            0.5 * (-model.s_token).exp()
        } else {
            1.0
        };
        base / sup_examples as f64
    } else {
        0.0
    };

    let mut grads = GuardrailModel::zeros(model.config)?;
    for (example, pass) in batch.iter().zip(&passes) {
        let t = example.token_ids.len();
        let probs = pass.out.prompt_probs;
        let true_class = example.label.class_index();
        let pt = probs[true_class];
        let delta_p = if config.use_weak_supervision {
            example.delta_p
        } else {
            0.0
        };
        let g_pt = task_loss_grad_pt(pt, delta_p, config) * w_pc;
        let mut g_prompt = [0.0; 2];
        for j in 0..2 {
            let indicator = if j == true_class { 1.0 } else { 0.0 };
            g_prompt[j] = g_pt * pt * (indicator - probs[j]);
        }

        let mut g_token = Array2::zeros((t, 2));
        if pass.n_sup_tokens > 0 && w_ec > 0.0 {
            let labels = example.token_labels.as_ref().unwrap();
            let per_token = w_ec / pass.n_sup_tokens as f64;
            for (i, &label) in labels.iter().enumerate() {
                let tp = [pass.out.token_probs[[i, 0]], pass.out.token_probs[[i, 1]]];
                let cls = label.class_index();
                let delta_t = if config.use_weak_supervision {
                    example.delta_t.get(i).copied().unwrap_or(0.0)
                } else {
                    0.0
                };
                let g = task_loss_grad_pt(tp[cls], delta_t, config) * per_token;
                for j in 0..2 {
                    let indicator = if j == cls { 1.0 } else { 0.0 };
                    g_token[[i, j]] = g * tp[cls] * (indicator - tp[j]);
                }
            }
        }
        backward(model, &pass.cache, g_prompt, &g_token, &mut grads);
    }

    if config.use_uncertainty_weighting {
        grads.s_prompt = joint_loss_grad_s(l_pc_bar, model.s_prompt);
        grads.s_token = joint_loss_grad_s(l_ec_bar, model.s_token);
    }

    Ok((breakdown, Some(grads)))
}

/// Runs the full training loop and returns the selected model plus a report.
///
/// Preconditions: the polarization table was built from the training split
/// only and every example already carries its attached deltas (see
/// [`attach_weak_supervision`]). Per step: shuffled mini-batch, forward,
/// joint loss, backward, global-norm clip, optimizer update (uncertainty
/// parameters update with everything else), then a finite-parameter guard.
/// A non-finite loss aborts with a diagnostic naming the offending batch.
pub fn train(
    train_set: &[EncodedExample],
    dev_set: &[EncodedExample],
    model_init: GuardrailModel,
    config: &TrainConfig,
    mut step_log: Option<&mut dyn Write>,
) -> Result<(GuardrailModel, TrainReport)> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyInput("training set".to_string()));
    }
    let start = Instant::now();
    let mut model = model_init;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut optimizer = AdamW::new(&model);
    let mut indices: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, GuardrailModel)> = None;
    let mut steps = 0usize;

    for epoch in 1..=config.epochs {
        indices.shuffle(&mut shuffle_rng);
        let mut sums = (0.0, 0.0, 0.0);
        let mut n_batches = 0usize;
        for chunk in indices.chunks(config.batch_size) {
            let batch: Vec<&EncodedExample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (breakdown, mut grads) =
                batch_gradients(&model, &batch, &config.loss, Some(&mut dropout_rng))?;
            if !breakdown.total.is_finite() {
                let ids: Vec<&str> = batch.iter().map(|e| e.id.as_str()).collect();
                log::error!(
                    "non-finite loss at step {steps}: batch {ids:?}, breakdown {breakdown:?}"
                );
                return Err(Error::NonFinite(format!(
                    "loss at step {steps} (batch ids {ids:?})"
                )));
            }
            clip_global_norm(&mut grads, config.grad_clip_norm);
            optimizer.step(&mut model, &grads, config);
            model.check_finite()?;
            if let Some(log) = step_log.as_deref_mut() {
                serde_json::to_writer(&mut *log, &breakdown)?;
                log.write_all(b"\n")?;
            }
            sums.0 += breakdown.total;
            sums.1 += breakdown.l_pc;
            sums.2 += breakdown.l_ec;
            n_batches += 1;
            steps += 1;
        }

        let (dev_prompt_f1, dev_word_f1) = if dev_set.is_empty() {
            (None, None)
        } else {
            let (p, _) = prompt_f1_encoded(&model, dev_set, 0.5)?;
            let (w, _) = word_f1_encoded(&model, dev_set)?;
            (Some(p), Some(w))
        };
        epochs.push(EpochStats {
            epoch,
            mean_total: sums.0 / n_batches as f64,
            mean_l_pc: sums.1 / n_batches as f64,
            mean_l_ec: sums.2 / n_batches as f64,
            sigma1: (model.s_prompt / 2.0).exp(),
            sigma2: (model.s_token / 2.0).exp(),
            dev_prompt_f1,
            dev_word_f1,
        });
        if let Some(f1) = dev_prompt_f1 {
            let improved = best.as_ref().map_or(true, |(b, _, _)| f1 > *b);
            if improved {
                best = Some((f1, epoch, model.clone()));
            }
        }
    }

    let (selected_epoch, selected) = match (config.selection, best) {
        (SelectionMode::BestDev, Some((_, epoch, snapshot))) => (epoch, snapshot),
        _ => (config.epochs, model),
    };

    let (tuned_threshold, tuned_dev_f1) = if dev_set.is_empty() {
        (None, None)
    } else {
        let (t, f1) = tune_threshold(&selected, dev_set, &default_threshold_grid())?;
        (Some(t), Some(f1))
    };

    let report = TrainReport {
        epochs,
        selected_epoch,
        steps,
        tuned_threshold,
        tuned_dev_f1,
        wall_clock_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    Ok((selected, report))
}

/// Sweeps the grid for the threshold maximizing dev prompt unsafe-F1; ties
/// resolve to the smallest threshold.
pub fn tune_threshold(
    model: &GuardrailModel,
    dev_set: &[EncodedExample],
    grid: &[f64],
) -> Result<(f64, f64)> {
    if dev_set.is_empty() {
        return Err(Error::EmptyInput("dev set for threshold tuning".to_string()));
    }
    let scores = prompt_scores(model, dev_set)?;
    let scored: Vec<(f64, bool)> = scores
        .into_iter()
        .zip(dev_set)
        .map(|(s, e)| (s, e.label == SafetyLabel::Unsafe))
        .collect();
    best_threshold(&scored, grid)
}
