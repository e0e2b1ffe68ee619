//! The joint training objective: focal-modulated, weak-supervision-scaled
//! cross-entropy for both tasks, combined by learned uncertainty weights.
//!
//! Per task, the loss is `CE + delta * FL` where `FL = (1 - p_t)^gamma * CE`,
//! so it collapses to plain cross-entropy whenever the polarization score is
//! zero. The two task losses combine as
//! `0.5*exp(-s1)*L_pc + 0.5*exp(-s2)*L_ec + 0.5*s1 + 0.5*s2`
//! with `s_k = log(sigma_k^2)`, which is the standard homoscedastic
//! uncertainty weighting written in log-variance form.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::SafetyLabel;
use crate::error::{Error, Result};

/// Loss hyperparameters and the ablation switches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Focal exponent; 0 turns the modulating factor into 1.
    pub gamma: f64,
    /// Probability clamp floor applied before logs and powers.
    pub epsilon_prob: f64,
    /// When false, all polarization scores are treated as zero and both task
    /// losses reduce to plain cross-entropy.
    pub use_weak_supervision: bool,
    /// When false, the task losses are summed unweighted and the uncertainty
    /// parameters receive no gradient.
    pub use_uncertainty_weighting: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            gamma: 2.0,
            epsilon_prob: 1e-7,
            use_weak_supervision: true,
            use_uncertainty_weighting: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gamma < 0.0 {
            return Err(Error::Config(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.epsilon_prob > 0.0 && self.epsilon_prob <= 1e-3) {
            return Err(Error::Config(format!(
                "epsilon_prob must be in (0, 1e-3], got {}",
                self.epsilon_prob
            )));
        }
        Ok(())
    }
}

/// Per-batch decomposition of the objective, logged as JSONL during training.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_pc: f64,
    pub l_ec: f64,
    pub ce_p: f64,
    pub fl_p: f64,
    pub mean_ce_t: f64,
    pub mean_fl_t: f64,
    pub total: f64,
    pub sigma1: f64,
    pub sigma2: f64,
}

/// Clamped true-class probability.
fn p_true(probs: [f64; 2], label: SafetyLabel, epsilon_prob: f64) -> f64 {
    probs[label.class_index()].max(epsilon_prob)
}

/// `-log(max(p_label, epsilon_prob))`.
pub fn cross_entropy(probs: [f64; 2], label: SafetyLabel, epsilon_prob: f64) -> f64 {
    -p_true(probs, label, epsilon_prob).ln()
}

/// `(1 - p_t)^gamma * CE`, with `p_t` the clamped true-class probability.
pub fn focal(probs: [f64; 2], label: SafetyLabel, gamma: f64, epsilon_prob: f64) -> f64 {
    let pt = p_true(probs, label, epsilon_prob);
    (1.0 - pt).powf(gamma) * cross_entropy(probs, label, epsilon_prob)
}

/// Prompt-task loss `[1 + delta_p * (1 - p_t)^gamma] * CE_p`.
pub fn prompt_loss(probs: [f64; 2], y_p: SafetyLabel, delta_p: f64, config: &LossConfig) -> f64 {
    let delta = if config.use_weak_supervision { delta_p } else { 0.0 };
    cross_entropy(probs, y_p, config.epsilon_prob)
        + delta * focal(probs, y_p, config.gamma, config.epsilon_prob)
}

/// Per-example explanation-task loss
/// `(1/S) * sum_i [CE_t(i) + delta_t(i) * FL_t(i)]` over the `S` supervised,
/// non-PAD tokens. Returns `(loss, S)`; unsupervised examples contribute
/// `(0, 0)` and no gradient.
pub fn explanation_loss(
    token_probs: &Array2<f64>,
    token_labels: Option<&[SafetyLabel]>,
    delta_t: &[f64],
    is_pad: Option<&[bool]>,
    config: &LossConfig,
) -> (f64, usize) {
    let Some(labels) = token_labels else {
        return (0.0, 0);
    };
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, &label) in labels.iter().enumerate() {
        if is_pad.is_some_and(|m| m[i]) {
            continue;
        }
        let probs = [token_probs[[i, 0]], token_probs[[i, 1]]];
        let delta = if config.use_weak_supervision {
            delta_t.get(i).copied().unwrap_or(0.0)
        } else {
            0.0
        };
        sum += cross_entropy(probs, label, config.epsilon_prob)
            + delta * focal(probs, label, config.gamma, config.epsilon_prob);
        count += 1;
    }
    if count == 0 {
        (0.0, 0)
    } else {
        (sum / count as f64, count)
    }
}

/// Combines the two task losses. With uncertainty weighting:
/// `0.5*exp(-s1)*L_pc + 0.5*exp(-s2)*L_ec + 0.5*s1 + 0.5*s2`; without it the
/// plain sum `L_pc + L_ec`.
pub fn joint_loss(l_pc: f64, l_ec: f64, s1: f64, s2: f64, use_uncertainty_weighting: bool) -> f64 {
    if use_uncertainty_weighting {
        0.5 * (-s1).exp() * l_pc + 0.5 * (-s2).exp() * l_ec + 0.5 * s1 + 0.5 * s2
    } else {
        l_pc + l_ec
    }
}

/// Analytic gradient of the joint loss w.r.t. an `s_k` log-variance:
/// `-0.5*exp(-s_k)*L_k + 0.5`.
pub fn joint_loss_grad_s(l_task: f64, s: f64) -> f64 {
    -0.5 * (-s).exp() * l_task + 0.5
}

/// d(task loss)/d(p_t) for `CE + delta*(1-p_t)^gamma*CE`.
/// Zero when `p_t` sits at the clamp floor, since the loss is constant there.
pub fn task_loss_grad_pt(pt_raw: f64, delta: f64, config: &LossConfig) -> f64 {
    let eps = config.epsilon_prob;
    if pt_raw <= eps {
        return 0.0;
    }
    let pt = pt_raw;
    let ce = -pt.ln();
    let dce = -1.0 / pt;
    let delta = if config.use_weak_supervision { delta } else { 0.0 };
    if delta == 0.0 {
        return dce;
    }
    let gamma = config.gamma;
    let one_minus = 1.0 - pt;
    // (1-p)^gamma and gamma*(1-p)^(gamma-1), guarding the p_t = 1 boundary.
    let pow_g = if one_minus <= 0.0 { 0.0 } else { one_minus.powf(gamma) };
    let dpow = if one_minus <= 0.0 {
        0.0
    } else {
        gamma * one_minus.powf(gamma - 1.0)
    };
    dce + delta * (-dpow * ce + pow_g * dce)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    const LN2: f64 = std::f64::consts::LN_2;

    fn cfg() -> LossConfig {
        LossConfig::default()
    }

    #[test]
    fn cross_entropy_of_certainty_is_zero() {
        assert_eq!(cross_entropy([0.0, 1.0], SafetyLabel::Unsafe, 1e-7), 0.0);
    }

    #[test]
    fn cross_entropy_of_half_is_ln_two() {
        let ce = cross_entropy([0.5, 0.5], SafetyLabel::Safe, 1e-7);
        assert!((ce - LN2).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_clamps_zero_probability() {
        let ce = cross_entropy([1.0, 0.0], SafetyLabel::Unsafe, 1e-7);
        assert!(ce.is_finite());
        assert!((ce - (-(1e-7f64).ln())).abs() < 1e-9);
    }

    #[test]
    fn focal_is_zero_at_full_confidence() {
        assert_eq!(focal([0.0, 1.0], SafetyLabel::Unsafe, 2.0, 1e-7), 0.0);
    }

    #[test]
    fn focal_with_zero_gamma_equals_cross_entropy() {
        let probs = [0.3, 0.7];
        let fl = focal(probs, SafetyLabel::Unsafe, 0.0, 1e-7);
        let ce = cross_entropy(probs, SafetyLabel::Unsafe, 1e-7);
        assert_eq!(fl, ce);
    }

    #[test]
    fn focal_matches_hand_evaluation() {
        // 0.25 * ln 2, evaluated independently.
        let fl = focal([0.5, 0.5], SafetyLabel::Safe, 2.0, 1e-7);
        assert!((fl - 0.25 * LN2).abs() < 1e-12);
        assert!((fl - 0.173286795139986).abs() < 1e-6);
    }

    #[test]
    fn prompt_loss_without_weak_signal_is_plain_ce() {
        let probs = [0.2, 0.8];
        let l = prompt_loss(probs, SafetyLabel::Unsafe, 0.0, &cfg());
        assert_eq!(l, cross_entropy(probs, SafetyLabel::Unsafe, 1e-7));
    }

    #[test]
    fn prompt_loss_matches_hand_evaluation() {
        // (1 + 0.6 * 0.25) * ln 2, evaluated independently.
        let l = prompt_loss([0.5, 0.5], SafetyLabel::Safe, 0.6, &cfg());
        assert!((l - 1.15 * LN2).abs() < 1e-12);
        assert!((l - 0.7971192576439371).abs() < 1e-9);
    }

    #[test]
    fn weak_supervision_becomes_negligible_at_high_confidence() {
        let mut prev_ratio = f64::INFINITY;
        for pt in [0.9, 0.99, 0.999, 0.9999] {
            let probs = [1.0 - pt, pt];
            let l = prompt_loss(probs, SafetyLabel::Unsafe, 0.9, &cfg());
            let ce = cross_entropy(probs, SafetyLabel::Unsafe, 1e-7);
            let ratio = l / ce;
            assert!(ratio < prev_ratio);
            prev_ratio = ratio;
        }
        assert!((prev_ratio - 1.0).abs() < 1e-6);
    }

    #[test]
    fn prompt_loss_amplification_is_bounded_by_two() {
        for &pt in &[0.01, 0.25, 0.5, 0.75, 0.99] {
            for &delta in &[0.0, 0.3, 0.6, 0.999] {
                let probs = [1.0 - pt, pt];
                let l = prompt_loss(probs, SafetyLabel::Unsafe, delta, &cfg());
                let ce = cross_entropy(probs, SafetyLabel::Unsafe, 1e-7);
                assert!(l <= 2.0 * ce + 1e-12);
            }
        }
    }

    #[test]
    fn explanation_loss_is_zero_for_perfect_predictions() {
        let probs = array![[0.0, 1.0], [0.0, 1.0]];
        let labels = vec![SafetyLabel::Unsafe, SafetyLabel::Unsafe];
        let (l, s) = explanation_loss(&probs, Some(&labels), &[0.5, 0.5], None, &cfg());
        assert_eq!(l, 0.0);
        assert_eq!(s, 2);
    }

    #[test]
    fn explanation_loss_single_token_matches_hand_evaluation() {
        let probs = array![[0.5, 0.5]];
        let labels = vec![SafetyLabel::Safe];
        let (l, s) = explanation_loss(&probs, Some(&labels), &[0.0], None, &cfg());
        assert_eq!(s, 1);
        assert!((l - LN2).abs() < 1e-12);
    }

    #[test]
    fn explanation_loss_of_unsupervised_batch_is_zero() {
        let probs = array![[0.5, 0.5]];
        let (l, s) = explanation_loss(&probs, None, &[], None, &cfg());
        assert_eq!((l, s), (0.0, 0));
    }

    #[test]
    fn explanation_loss_skips_pad_positions() {
        let probs = array![[0.5, 0.5], [0.9, 0.1]];
        let labels = vec![SafetyLabel::Safe, SafetyLabel::Safe];
        let pad = vec![false, true];
        let (l, s) = explanation_loss(&probs, Some(&labels), &[0.0, 0.0], Some(&pad), &cfg());
        assert_eq!(s, 1);
        assert!((l - LN2).abs() < 1e-12);
    }

    #[test]
    fn joint_loss_matches_hand_evaluation() {
        // 0.5*e^0*0.4 + 0.5*e^0*0.6 + 0 + 0 = 0.5, evaluated independently.
        let l = joint_loss(0.4, 0.6, 0.0, 0.0, true);
        assert!((l - 0.5).abs() < 1e-12);
    }

    #[test]
    fn joint_loss_zero_case() {
        assert_eq!(joint_loss(0.0, 0.0, 0.0, 0.0, true), 0.0);
    }

    #[test]
    fn joint_loss_without_weighting_is_plain_sum() {
        assert_eq!(joint_loss(0.4, 0.6, 3.0, -2.0, false), 1.0);
    }

    #[test]
    fn s_gradient_sign_flips_around_the_stationary_point() {
        // For fixed L = 1 the minimizer over s solves e^{-s} = 1, i.e. s = 0.
        assert!(joint_loss_grad_s(1.0, -0.1) < 0.0);
        assert!(joint_loss_grad_s(1.0, 0.1) > 0.0);
        assert!(joint_loss_grad_s(1.0, 0.0).abs() < 1e-15);
    }

    #[test]
    fn s_gradient_matches_finite_differences() {
        let l_task = 0.73;
        for &s in &[-1.5, -0.2, 0.0, 0.4, 2.0] {
            let h = 1e-6;
            let f = |s: f64| joint_loss(l_task, 0.0, s, 0.0, true);
            let fd = (f(s + h) - f(s - h)) / (2.0 * h);
            let analytic = joint_loss_grad_s(l_task, s);
            let rel = (fd - analytic).abs() / analytic.abs().max(1e-12);
            assert!(rel < 1e-6, "s={s}: fd={fd} analytic={analytic}");
        }
    }

    #[test]
    fn disabling_weak_supervision_reduces_to_plain_ce_paths() {
        let config = LossConfig {
            use_weak_supervision: false,
            use_uncertainty_weighting: false,
            ..LossConfig::default()
        };
        let probs = [0.3, 0.7];
        let l_pc = prompt_loss(probs, SafetyLabel::Unsafe, 0.87, &config);
        assert_eq!(
            l_pc,
            cross_entropy(probs, SafetyLabel::Unsafe, config.epsilon_prob)
        );

        let token_probs = array![[0.3, 0.7], [0.6, 0.4]];
        let labels = vec![SafetyLabel::Unsafe, SafetyLabel::Safe];
        let (l_ec, _) = explanation_loss(&token_probs, Some(&labels), &[0.9, 0.9], None, &config);
        let expect = (cross_entropy([0.3, 0.7], SafetyLabel::Unsafe, 1e-7)
            + cross_entropy([0.6, 0.4], SafetyLabel::Safe, 1e-7))
            / 2.0;
        assert!((l_ec - expect).abs() < 1e-15);

        let total = joint_loss(l_pc, l_ec, 0.3, -0.3, config.use_uncertainty_weighting);
        assert_eq!(total, l_pc + l_ec);
    }

    #[test]
    fn monotone_in_delta_and_confidence() {
        // For fixed p_t the loss is non-decreasing in delta; for fixed delta
        // it is non-increasing in p_t.
        let grid: Vec<f64> = (1..20).map(|i| i as f64 / 20.0).collect();
        for &pt in &grid {
            let probs = [1.0 - pt, pt];
            let mut prev = -1.0;
            for &delta in &grid {
                let l = prompt_loss(probs, SafetyLabel::Unsafe, delta, &cfg());
                assert!(l >= prev - 1e-12);
                prev = l;
            }
        }
        for &delta in &grid {
            let mut prev = f64::INFINITY;
            for &pt in &grid {
                let probs = [1.0 - pt, pt];
                let l = prompt_loss(probs, SafetyLabel::Unsafe, delta, &cfg());
                assert!(l <= prev + 1e-12);
                prev = l;
            }
        }
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let c = LossConfig {
            gamma: -0.5,
            ..LossConfig::default()
        };
        assert!(c.validate().is_err());
        let c = LossConfig {
            epsilon_prob: 0.0,
            ..LossConfig::default()
        };
        assert!(c.validate().is_err());
        assert!(LossConfig::default().validate().is_ok());
    }
}
