//! Reverse-mode gradients for the full model, given upstream gradients on the
//! two heads' logits. Parameter gradients accumulate into a zero-initialized
//! model of the same shape; the caller owns scaling and batching.

use ndarray::{s, Array1, Array2};

use super::forward::{gelu_grad, ForwardCache};
use super::model::GuardrailModel;

/// Layer-norm backward for one activation matrix.
/// Returns the gradient w.r.t. the pre-norm input and accumulates the gain
/// and bias gradients.
fn layer_norm_backward(
    g_out: &Array2<f64>,
    xhat: &Array2<f64>,
    inv_std: &[f64],
    gain: &Array1<f64>,
    g_gain: &mut Array1<f64>,
    g_bias: &mut Array1<f64>,
) -> Array2<f64> {
    let (t, d) = g_out.dim();
    let mut g_x = Array2::zeros((t, d));
    for i in 0..t {
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for j in 0..d {
            let go = g_out[[i, j]];
            g_gain[j] += go * xhat[[i, j]];
            g_bias[j] += go;
            let gxh = go * gain[j];
            m1 += gxh;
            m2 += gxh * xhat[[i, j]];
        }
        m1 /= d as f64;
        m2 /= d as f64;
        for j in 0..d {
            let gxh = g_out[[i, j]] * gain[j];
            g_x[[i, j]] = inv_std[i] * (gxh - m1 - xhat[[i, j]] * m2);
        }
    }
    g_x
}

/// Adds `a^T . b` into `acc` (shapes: a is T x m, b is T x n, acc is m x n).
fn add_tdot(acc: &mut Array2<f64>, a: &Array2<f64>, b: &Array2<f64>) {
    acc.scaled_add(1.0, &a.t().dot(b));
}

fn add_col_sums(acc: &mut Array1<f64>, m: &Array2<f64>) {
    for row in m.rows() {
        acc.scaled_add(1.0, &row);
    }
}

/// Backpropagates one example. `g_prompt_logits` is dL/d(prompt logits) and
/// `g_token_logits` is dL/d(token logits) with zero rows at PAD and
/// unsupervised positions.
pub fn backward(
    model: &GuardrailModel,
    cache: &ForwardCache,
    g_prompt_logits: [f64; 2],
    g_token_logits: &Array2<f64>,
    grads: &mut GuardrailModel,
) {
    let t = cache.ids.len();
    let d = model.config.d_model;

    // Token head.
    add_tdot(&mut grads.w_token, g_token_logits, &cache.hidden);
    add_col_sums(&mut grads.b_token, g_token_logits);
    let mut g_hidden = g_token_logits.dot(&model.w_token);

    // Prompt head.
    for c in 0..2 {
        grads.b_prompt[c] += g_prompt_logits[c];
        for j in 0..d {
            grads.w_prompt[[c, j]] += g_prompt_logits[c] * cache.pooled[j];
        }
    }
    let mut g_pooled = Array1::zeros(d);
    for j in 0..d {
        g_pooled[j] =
            model.w_prompt[[0, j]] * g_prompt_logits[0] + model.w_prompt[[1, j]] * g_prompt_logits[1];
    }

    // Attention pooling: v = sum_i alpha_i h_i, alpha = softmax(u) over
    // non-PAD positions.
    let mut g_alpha = vec![0.0; t];
    for i in 0..t {
        if cache.is_pad[i] {
            continue;
        }
        g_alpha[i] = cache.hidden.row(i).dot(&g_pooled);
        for j in 0..d {
            g_hidden[[i, j]] += cache.alpha[i] * g_pooled[j];
        }
    }
    let dot: f64 = (0..t).map(|i| cache.alpha[i] * g_alpha[i]).sum();
    for i in 0..t {
        if cache.is_pad[i] {
            continue;
        }
        let g_u = cache.alpha[i] * (g_alpha[i] - dot);
        grads.pool_b += g_u;
        for j in 0..d {
            grads.pool_w[j] += g_u * cache.hidden[[i, j]];
            g_hidden[[i, j]] += g_u * model.pool_w[j];
        }
    }

    // Encoder blocks in reverse.
    let n_heads = model.config.n_heads.max(1);
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut g_x = g_hidden;
    for (block, layer, g_block) in model
        .blocks
        .iter()
        .zip(&cache.layers)
        .zip(&mut grads.blocks)
        .map(|((b, l), g)| (b, l, g))
        .rev()
    {
        // Feed-forward sublayer: x_out = x_mid + drop(W2 gelu(W1 LN2(x_mid) + b1) + b2).
        let g_ff_out = match &layer.ff_drop {
            Some(mask) => &g_x * mask,
            None => g_x.clone(),
        };
        add_tdot(&mut g_block.w_ff2, &g_ff_out, &layer.a1);
        add_col_sums(&mut g_block.b_ff2, &g_ff_out);
        let g_a1 = g_ff_out.dot(&block.w_ff2);
        let mut g_z1 = g_a1;
        g_z1.zip_mut_with(&layer.z1, |g, &z| *g *= gelu_grad(z));
        add_tdot(&mut g_block.w_ff1, &g_z1, &layer.ln2_out);
        add_col_sums(&mut g_block.b_ff1, &g_z1);
        let g_ln2_out = g_z1.dot(&block.w_ff1);
        let g_from_ln2 = layer_norm_backward(
            &g_ln2_out,
            &layer.ln2_xhat,
            &layer.ln2_inv_std,
            &block.ln2_gain,
            &mut g_block.ln2_gain,
            &mut g_block.ln2_bias,
        );
        let g_x_mid = &g_x + &g_from_ln2;

        // Attention sublayer: x_mid = x_in + drop(MHA(LN1(x_in))).
        let g_attn_out = match &layer.attn_drop {
            Some(mask) => &g_x_mid * mask,
            None => g_x_mid.clone(),
        };
        add_tdot(&mut g_block.w_o, &g_attn_out, &layer.ctx);
        add_col_sums(&mut g_block.b_o, &g_attn_out);
        let g_ctx = g_attn_out.dot(&block.w_o);

        let mut g_q = Array2::zeros((t, d));
        let mut g_k = Array2::zeros((t, d));
        let mut g_v = Array2::zeros((t, d));
        for h in 0..n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let probs = &layer.attn_probs[h];
            let g_ctx_h = g_ctx.slice(cols);
            let vh = layer.v.slice(cols);
            let qh = layer.q.slice(cols);
            let kh = layer.k.slice(cols);

            let g_probs = g_ctx_h.dot(&vh.t());
            g_v.slice_mut(cols).assign(&probs.t().dot(&g_ctx_h));

            // Row softmax backward; masked keys have probs = 0 and drop out.
            let mut g_scores = Array2::zeros((t, t));
            for i in 0..t {
                let mut row_dot = 0.0;
                for j in 0..t {
                    row_dot += probs[[i, j]] * g_probs[[i, j]];
                }
                for j in 0..t {
                    g_scores[[i, j]] = probs[[i, j]] * (g_probs[[i, j]] - row_dot) * scale;
                }
            }
            g_q.slice_mut(cols).assign(&g_scores.dot(&kh));
            g_k.slice_mut(cols).assign(&g_scores.t().dot(&qh));
        }

        add_tdot(&mut g_block.w_q, &g_q, &layer.ln1_out);
        add_col_sums(&mut g_block.b_q, &g_q);
        add_tdot(&mut g_block.w_k, &g_k, &layer.ln1_out);
        add_col_sums(&mut g_block.b_k, &g_k);
        add_tdot(&mut g_block.w_v, &g_v, &layer.ln1_out);
        add_col_sums(&mut g_block.b_v, &g_v);

        let g_ln1_out = g_q.dot(&block.w_q) + g_k.dot(&block.w_k) + g_v.dot(&block.w_v);
        let g_from_ln1 = layer_norm_backward(
            &g_ln1_out,
            &layer.ln1_xhat,
            &layer.ln1_inv_std,
            &block.ln1_gain,
            &mut g_block.ln1_gain,
            &mut g_block.ln1_bias,
        );
        g_x = g_x_mid + g_from_ln1;
    }

    // Embedding + positional tables.
    let g_x0 = match &cache.emb_drop {
        Some(mask) => &g_x * mask,
        None => g_x,
    };
    for (i, &id) in cache.ids.iter().enumerate() {
        for j in 0..d {
            grads.embedding[[id as usize, j]] += g_x0[[i, j]];
            grads.pos_embedding[[i, j]] += g_x0[[i, j]];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::forward::forward_train;
    use crate::net::model::EncoderConfig;

    /// Scalar probe loss: a fixed linear functional of the head logits'
    /// softmax inputs, differentiable and cheap to finite-difference.
    fn probe_loss(model: &GuardrailModel, ids: &[u32]) -> f64 {
        let (out, _) = forward_train(model, ids, None, None).unwrap();
        // Use log-probs of class 1 everywhere, a smooth function of logits.
        let mut l = out.prompt_probs[1].ln();
        for i in 0..ids.len() {
            l += out.token_probs[[i, 1]].ln() / ids.len() as f64;
        }
        l
    }

    fn probe_backward(model: &GuardrailModel, ids: &[u32]) -> GuardrailModel {
        let (out, cache) = forward_train(model, ids, None, None).unwrap();
        // d(log p1)/d(logit_c) = (1 - p1) for c = 1, -p0... using softmax:
        // d log p1 / dz = e_1 - p.
        let g_prompt = [-out.prompt_probs[0], 1.0 - out.prompt_probs[1]];
        let t = ids.len();
        let mut g_token = Array2::zeros((t, 2));
        for i in 0..t {
            g_token[[i, 0]] = -out.token_probs[[i, 0]] / t as f64;
            g_token[[i, 1]] = (1.0 - out.token_probs[[i, 1]]) / t as f64;
        }
        let mut grads = GuardrailModel::zeros(model.config).unwrap();
        backward(model, &cache, g_prompt, &g_token, &mut grads);
        grads
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let config = EncoderConfig {
            vocab_size: 9,
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 12,
            max_len: 6,
            dropout: 0.0,
        };
        let model = GuardrailModel::new(config, 31).unwrap();
        let ids = [3u32, 7, 1, 4];
        let grads = probe_backward(&model, &ids);

        let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
        grads.for_each_param(|name, _, data| analytic.push((name.to_string(), data.to_vec())));

        let h = 1e-5;
        let mut param_idx = 0usize;
        let mut names = Vec::new();
        model.for_each_param(|name, _, data| names.push((name.to_string(), data.len())));
        for (name, len) in &names {
            let stride = (len / 7).max(1); // sample within large tensors
            for k in (0..*len).step_by(stride) {
                let mut plus = model.clone();
                let mut minus = model.clone();
                let mut idx = 0usize;
                plus.for_each_param_mut(|n, data| {
                    if n == name {
                        data[k] += h;
                    }
                    idx += 1;
                });
                idx = 0;
                minus.for_each_param_mut(|n, data| {
                    if n == name {
                        data[k] -= h;
                    }
                    idx += 1;
                });
                let fd = (probe_loss(&plus, &ids) - probe_loss(&minus, &ids)) / (2.0 * h);
                let a = analytic[param_idx].1[k];
                let denom = a.abs().max(fd.abs()).max(1e-8);
                assert!(
                    (a - fd).abs() / denom < 1e-5 || (a - fd).abs() < 1e-9,
                    "{name}[{k}]: analytic={a} fd={fd}"
                );
            }
            param_idx += 1;
        }
    }

    #[test]
    fn pad_positions_receive_no_gradient() {
        let config = EncoderConfig {
            vocab_size: 9,
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 12,
            max_len: 6,
            dropout: 0.0,
        };
        let model = GuardrailModel::new(config, 5).unwrap();
        let ids = [3u32, 7, 0, 0];
        let pad = [false, false, true, true];
        let (out, cache) = forward_train(&model, &ids, Some(&pad), None).unwrap();
        let g_prompt = [-out.prompt_probs[0], 1.0 - out.prompt_probs[1]];
        let mut g_token = Array2::zeros((4, 2));
        for i in 0..2 {
            g_token[[i, 0]] = -out.token_probs[[i, 0]];
            g_token[[i, 1]] = 1.0 - out.token_probs[[i, 1]];
        }
        let mut grads = GuardrailModel::zeros(model.config).unwrap();
        backward(&model, &cache, g_prompt, &g_token, &mut grads);
        // PAD rows sit at positions 2 and 3; their positional embeddings must
        // stay untouched.
        for i in 2..4 {
            for j in 0..8 {
                assert_eq!(grads.pos_embedding[[i, j]], 0.0, "pos[{i},{j}]");
            }
        }
    }
}
