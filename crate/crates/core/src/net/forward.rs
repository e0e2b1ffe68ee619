//! Forward pass. The exact computation, per input of length T:
//!
//! ```text
//! x0   = embedding[ids] + pos[0..T]
//! per block (pre-norm):
//!   x = x + MultiHeadAttention(LN1(x))     keys masked at PAD
//!   x = x + W2 . gelu(W1 . LN2(x) + b1) + b2
//! H    = x
//! alpha_i = softmax_i(pool_w . h_i + pool_b)   over non-PAD positions
//! v    = sum_i alpha_i h_i
//! prompt_probs  = softmax(W_p v + b_p)
//! token_probs_i = softmax(W_t h_i + b_t)
//! ```
//!
//! PAD positions carry alpha = 0 and never act as attention keys, so
//! appending PAD tokens leaves every non-PAD output unchanged.

use ndarray::{s, Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::model::GuardrailModel;
use crate::error::{Error, Result};

pub(crate) const LN_EPS: f64 = 1e-5;

/// Everything a caller needs from one pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Final hidden states, T x d.
    pub hidden: Array2<f64>,
    /// Attention-pooled representation.
    pub pooled: Array1<f64>,
    /// Pooling weights; a simplex over non-PAD positions, 0 at PAD.
    pub attention: Vec<f64>,
    /// `[p_safe, p_unsafe]`.
    pub prompt_probs: [f64; 2],
    /// Per-token `[p_safe, p_unsafe]` rows, T x 2.
    pub token_probs: Array2<f64>,
}

/// Intermediates retained for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub(crate) ids: Vec<u32>,
    pub(crate) is_pad: Vec<bool>,
    pub(crate) emb_drop: Option<Array2<f64>>,
    pub(crate) layers: Vec<LayerCache>,
    pub(crate) hidden: Array2<f64>,
    pub(crate) alpha: Vec<f64>,
    pub(crate) pooled: Array1<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct LayerCache {
    pub(crate) ln1_out: Array2<f64>,
    pub(crate) ln1_xhat: Array2<f64>,
    pub(crate) ln1_inv_std: Vec<f64>,
    pub(crate) q: Array2<f64>,
    pub(crate) k: Array2<f64>,
    pub(crate) v: Array2<f64>,
    pub(crate) attn_probs: Vec<Array2<f64>>,
    pub(crate) ctx: Array2<f64>,
    pub(crate) attn_drop: Option<Array2<f64>>,
    pub(crate) ln2_out: Array2<f64>,
    pub(crate) ln2_xhat: Array2<f64>,
    pub(crate) ln2_inv_std: Vec<f64>,
    pub(crate) z1: Array2<f64>,
    pub(crate) a1: Array2<f64>,
    pub(crate) ff_drop: Option<Array2<f64>>,
}

pub(crate) fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let inner = C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let d_inner = C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
}

/// Row-wise layer norm; returns `(out, xhat, inv_std)`.
pub(crate) fn layer_norm(
    x: &Array2<f64>,
    gain: &Array1<f64>,
    bias: &Array1<f64>,
) -> (Array2<f64>, Array2<f64>, Vec<f64>) {
    let (t, d) = x.dim();
    let mut out = Array2::zeros((t, d));
    let mut xhat = Array2::zeros((t, d));
    let mut inv_std = Vec::with_capacity(t);
    for i in 0..t {
        let row = x.row(i);
        let mean = row.sum() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let istd = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(istd);
        for j in 0..d {
            let h = (x[[i, j]] - mean) * istd;
            xhat[[i, j]] = h;
            out[[i, j]] = gain[j] * h + bias[j];
        }
    }
    (out, xhat, inv_std)
}

pub(crate) fn softmax2(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let z = e0 + e1;
    [e0 / z, e1 / z]
}

fn dropout_mask(rng: &mut ChaCha8Rng, shape: (usize, usize), rate: f64) -> Array2<f64> {
    let keep = 1.0 - rate;
    Array2::from_shape_fn(shape, |_| {
        if rng.gen::<f64>() < rate {
            0.0
        } else {
            1.0 / keep
        }
    })
}

fn validate_input(model: &GuardrailModel, ids: &[u32], is_pad: &[bool]) -> Result<()> {
    if ids.is_empty() {
        return Err(Error::EmptyInput("token sequence".to_string()));
    }
    if ids.len() > model.config.max_len {
        return Err(Error::LengthOverflow {
            len: ids.len(),
            max: model.config.max_len,
        });
    }
    if is_pad.len() != ids.len() {
        return Err(Error::LengthMismatch {
            left: ids.len(),
            right: is_pad.len(),
        });
    }
    if is_pad.iter().all(|&p| p) {
        return Err(Error::EmptyInput("all positions are padding".to_string()));
    }
    for &id in ids {
        if id as usize >= model.config.vocab_size {
            return Err(Error::TokenIdOutOfRange {
                id,
                vocab: model.config.vocab_size,
            });
        }
    }
    Ok(())
}

/// Inference-mode forward pass (dropout disabled).
pub fn forward(
    model: &GuardrailModel,
    ids: &[u32],
    is_pad: Option<&[bool]>,
) -> Result<ForwardOutput> {
    let (output, _) = run(model, ids, is_pad, None)?;
    Ok(output)
}

/// Training-mode forward pass; retains intermediates and applies dropout when
/// the config rate is positive and an RNG is supplied.
pub fn forward_train(
    model: &GuardrailModel,
    ids: &[u32],
    is_pad: Option<&[bool]>,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<(ForwardOutput, ForwardCache)> {
    run(model, ids, is_pad, dropout_rng)
}

fn run(
    model: &GuardrailModel,
    ids: &[u32],
    is_pad: Option<&[bool]>,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<(ForwardOutput, ForwardCache)> {
    let t = ids.len();
    let is_pad: Vec<bool> = match is_pad {
        Some(mask) => mask.to_vec(),
        None => vec![false; t],
    };
    validate_input(model, ids, &is_pad)?;

    let d = model.config.d_model;
    let rate = model.config.dropout;
    let mut make_drop = |shape: (usize, usize)| -> Option<Array2<f64>> {
        match (&mut dropout_rng, rate > 0.0) {
            (Some(rng), true) => Some(dropout_mask(rng, shape, rate)),
            _ => None,
        }
    };

    // Embeddings + learned positions.
    let mut x = Array2::zeros((t, d));
    for (i, &id) in ids.iter().enumerate() {
        for j in 0..d {
            x[[i, j]] = model.embedding[[id as usize, j]] + model.pos_embedding[[i, j]];
        }
    }
    let emb_drop = make_drop((t, d));
    if let Some(mask) = &emb_drop {
        x *= mask;
    }

    let n_heads = model.config.n_heads.max(1);
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let mut layers = Vec::with_capacity(model.blocks.len());
    for block in &model.blocks {
        let (ln1_out, ln1_xhat, ln1_inv_std) = layer_norm(&x, &block.ln1_gain, &block.ln1_bias);
        let q = ln1_out.dot(&block.w_q.t()) + &block.b_q;
        let k = ln1_out.dot(&block.w_k.t()) + &block.b_k;
        let v = ln1_out.dot(&block.w_v.t()) + &block.b_v;

        let mut ctx = Array2::zeros((t, d));
        let mut attn_probs = Vec::with_capacity(n_heads);
        for h in 0..n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let qh = q.slice(cols);
            let kh = k.slice(cols);
            let vh = v.slice(cols);
            let mut scores = qh.dot(&kh.t());
            scores *= scale;
            // Key-side PAD masking.
            let mut probs = Array2::zeros((t, t));
            for i in 0..t {
                let mut max = f64::NEG_INFINITY;
                for j in 0..t {
                    if !is_pad[j] {
                        max = max.max(scores[[i, j]]);
                    }
                }
                let mut z = 0.0;
                for j in 0..t {
                    if !is_pad[j] {
                        let e = (scores[[i, j]] - max).exp();
                        probs[[i, j]] = e;
                        z += e;
                    }
                }
                for j in 0..t {
                    probs[[i, j]] /= z;
                }
            }
            let ctx_h = probs.dot(&vh);
            ctx.slice_mut(cols).assign(&ctx_h);
            attn_probs.push(probs);
        }

        let mut attn_out = ctx.dot(&block.w_o.t()) + &block.b_o;
        let attn_drop = make_drop((t, d));
        if let Some(mask) = &attn_drop {
            attn_out *= mask;
        }
        let x_mid = &x + &attn_out;

        let (ln2_out, ln2_xhat, ln2_inv_std) =
            layer_norm(&x_mid, &block.ln2_gain, &block.ln2_bias);
        let z1 = ln2_out.dot(&block.w_ff1.t()) + &block.b_ff1;
        let a1 = z1.mapv(gelu);
        let mut ff_out = a1.dot(&block.w_ff2.t()) + &block.b_ff2;
        let ff_drop = make_drop((t, d));
        if let Some(mask) = &ff_drop {
            ff_out *= mask;
        }
        let x_out = &x_mid + &ff_out;

        layers.push(LayerCache {
            ln1_out,
            ln1_xhat,
            ln1_inv_std,
            q,
            k,
            v,
            attn_probs,
            ctx,
            attn_drop,
            ln2_out,
            ln2_xhat,
            ln2_inv_std,
            z1,
            a1,
            ff_drop,
        });
        x = x_out;
    }

    let hidden = x;

    // Attention pooling over non-PAD positions.
    let mut pool_logits = vec![f64::NEG_INFINITY; t];
    let mut max_logit = f64::NEG_INFINITY;
    for i in 0..t {
        if is_pad[i] {
            continue;
        }
        let u = hidden.row(i).dot(&model.pool_w) + model.pool_b;
        pool_logits[i] = u;
        max_logit = max_logit.max(u);
    }
    let mut alpha = vec![0.0; t];
    let mut z = 0.0;
    for i in 0..t {
        if !is_pad[i] {
            let e = (pool_logits[i] - max_logit).exp();
            alpha[i] = e;
            z += e;
        }
    }
    for a in &mut alpha {
        *a /= z;
    }
    let mut pooled = Array1::zeros(d);
    for i in 0..t {
        if alpha[i] != 0.0 {
            pooled.scaled_add(alpha[i], &hidden.row(i));
        }
    }

    // Heads.
    let prompt_logits = [
        model.w_prompt.row(0).dot(&pooled) + model.b_prompt[0],
        model.w_prompt.row(1).dot(&pooled) + model.b_prompt[1],
    ];
    let prompt_probs = softmax2(prompt_logits);

    let mut token_probs = Array2::zeros((t, 2));
    for i in 0..t {
        let row = hidden.row(i);
        let logits = [
            model.w_token.row(0).dot(&row) + model.b_token[0],
            model.w_token.row(1).dot(&row) + model.b_token[1],
        ];
        let p = softmax2(logits);
        token_probs[[i, 0]] = p[0];
        token_probs[[i, 1]] = p[1];
    }

    let finite = prompt_probs.iter().all(|p| p.is_finite())
        && token_probs.iter().all(|p| p.is_finite())
        && pooled.iter().all(|p| p.is_finite());
    if !finite {
        return Err(Error::NonFinite("forward output".to_string()));
    }

    let output = ForwardOutput {
        hidden: hidden.clone(),
        pooled: pooled.clone(),
        attention: alpha.clone(),
        prompt_probs,
        token_probs,
    };
    let cache = ForwardCache {
        ids: ids.to_vec(),
        is_pad,
        emb_drop,
        layers,
        hidden,
        alpha,
        pooled,
    };
    Ok((output, cache))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::model::EncoderConfig;

    fn config(n_layers: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size: 12,
            d_model: 8,
            n_layers,
            n_heads: 2,
            d_ff: 16,
            max_len: 10,
            dropout: 0.0,
        }
    }

    fn model(n_layers: usize) -> GuardrailModel {
        GuardrailModel::new(config(n_layers), 9).unwrap()
    }

    #[test]
    fn singleton_input_pools_to_its_hidden_state() {
        let m = model(1);
        let out = forward(&m, &[5], None).unwrap();
        assert_eq!(out.attention, vec![1.0]);
        for j in 0..8 {
            assert!((out.pooled[j] - out.hidden[[0, j]]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_pool_weights_give_uniform_attention() {
        let mut m = model(1);
        m.pool_w.fill(0.0);
        m.pool_b = 0.3; // constant shift cancels in the softmax
        let out = forward(&m, &[1, 2, 3, 4], None).unwrap();
        for &a in &out.attention {
            assert!((a - 0.25).abs() < 1e-12);
        }
        // Pooled vector is then the plain mean of hidden states.
        for j in 0..8 {
            let mean = (0..4).map(|i| out.hidden[[i, j]]).sum::<f64>() / 4.0;
            assert!((out.pooled[j] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn probability_rows_are_normalized() {
        let m = model(2);
        let out = forward(&m, &[3, 4, 5, 6, 7], None).unwrap();
        assert!((out.prompt_probs[0] + out.prompt_probs[1] - 1.0).abs() < 1e-6);
        for i in 0..5 {
            let row = out.token_probs[[i, 0]] + out.token_probs[[i, 1]];
            assert!((row - 1.0).abs() < 1e-6);
        }
        let alpha_sum: f64 = out.attention.iter().sum();
        assert!((alpha_sum - 1.0).abs() < 1e-6);
    }

    #[test]
    fn pooled_vector_stays_in_the_convex_hull_of_hidden_states() {
        let m = model(1);
        let out = forward(&m, &[1, 2, 3, 4, 5, 6], None).unwrap();
        for j in 0..8 {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for i in 0..6 {
                lo = lo.min(out.hidden[[i, j]]);
                hi = hi.max(out.hidden[[i, j]]);
            }
            assert!(out.pooled[j] >= lo - 1e-12 && out.pooled[j] <= hi + 1e-12);
        }
    }

    #[test]
    fn appending_pad_changes_nothing_observable() {
        let m = model(2);
        let bare = forward(&m, &[3, 4, 5], None).unwrap();
        let ids = [3, 4, 5, 0, 0];
        let mask = [false, false, false, true, true];
        let padded = forward(&m, &ids, Some(&mask)).unwrap();
        for i in 0..3 {
            for j in 0..8 {
                assert!((bare.hidden[[i, j]] - padded.hidden[[i, j]]).abs() < 1e-6);
            }
            assert!((bare.attention[i] - padded.attention[i]).abs() < 1e-6);
            assert!((bare.token_probs[[i, 1]] - padded.token_probs[[i, 1]]).abs() < 1e-6);
        }
        assert_eq!(padded.attention[3], 0.0);
        assert_eq!(padded.attention[4], 0.0);
        for k in 0..2 {
            assert!((bare.prompt_probs[k] - padded.prompt_probs[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn length_overflow_is_an_error() {
        let m = model(0);
        let ids: Vec<u32> = (0..11).map(|i| i % 8).collect();
        assert!(matches!(
            forward(&m, &ids, None),
            Err(Error::LengthOverflow { .. })
        ));
    }

    #[test]
    fn out_of_vocab_id_is_an_error() {
        let m = model(0);
        assert!(matches!(
            forward(&m, &[3, 99], None),
            Err(Error::TokenIdOutOfRange { .. })
        ));
    }

    #[test]
    fn all_pad_input_is_an_error() {
        let m = model(0);
        assert!(forward(&m, &[0, 0], Some(&[true, true])).is_err());
    }

    #[test]
    fn token_head_is_permutation_equivariant() {
        // Inject hidden states directly through the head by using a 0-layer
        // model: hidden = embedding + position. Permuting positions with
        // identical positional rows permutes token_probs identically.
        let mut m = model(0);
        // Make all positional embeddings identical so permutation only moves
        // token identity.
        let row0: Vec<f64> = m.pos_embedding.row(0).to_vec();
        for i in 0..m.config.max_len {
            for j in 0..8 {
                m.pos_embedding[[i, j]] = row0[j];
            }
        }
        let a = forward(&m, &[3, 4, 5], None).unwrap();
        let b = forward(&m, &[5, 3, 4], None).unwrap();
        let perm = [2usize, 0, 1]; // position of old i in the new order
        for (old, &new) in perm.iter().enumerate() {
            for c in 0..2 {
                assert!((a.token_probs[[new, c]] - b.token_probs[[old, c]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gelu_grad_matches_finite_differences() {
        for &x in &[-3.0, -1.0, -0.1, 0.0, 0.5, 2.0] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn dropout_scales_and_disables_cleanly() {
        let mut cfg = config(1);
        cfg.dropout = 0.5;
        let m = GuardrailModel::new(cfg, 3).unwrap();
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let (with_drop, _) = forward_train(&m, &[1, 2, 3], None, Some(&mut rng)).unwrap();
        let no_drop = forward(&m, &[1, 2, 3], None).unwrap();
        // Inference path ignores dropout entirely and differs from the
        // dropped pass almost surely.
        assert!(no_drop
            .hidden
            .iter()
            .zip(with_drop.hidden.iter())
            .any(|(a, b)| (a - b).abs() > 1e-9));
    }
}
