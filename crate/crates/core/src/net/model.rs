//! Parameter storage, initialization, and the canonical parameter walk used
//! by the optimizer, checkpointing, and gradient checking.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Encoder shape. `d_model` must divide evenly into `n_heads`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    #[serde(default)]
    pub dropout: f64,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.vocab_size == 0 || self.max_len == 0 {
            return Err(Error::Config("model dimensions must be positive".to_string()));
        }
        if self.n_layers > 0 && (self.n_heads == 0 || self.d_model % self.n_heads != 0) {
            return Err(Error::Config(format!(
                "d_model {} must be divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// One pre-norm encoder block: self-attention then a feed-forward sublayer,
/// each behind a layer norm and a residual connection.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderBlock {
    pub ln1_gain: Array1<f64>,
    pub ln1_bias: Array1<f64>,
    pub w_q: Array2<f64>,
    pub b_q: Array1<f64>,
    pub w_k: Array2<f64>,
    pub b_k: Array1<f64>,
    pub w_v: Array2<f64>,
    pub b_v: Array1<f64>,
    pub w_o: Array2<f64>,
    pub b_o: Array1<f64>,
    pub ln2_gain: Array1<f64>,
    pub ln2_bias: Array1<f64>,
    pub w_ff1: Array2<f64>,
    pub b_ff1: Array1<f64>,
    pub w_ff2: Array2<f64>,
    pub b_ff2: Array1<f64>,
}

/// All trainable state. Weight matrices are stored `(out, in)` and applied as
/// `y = x . W^T + b`. The uncertainty parameters are log-variances
/// `s_k = log(sigma_k^2)`, so `sigma_k^2 = exp(s_k) > 0` by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct GuardrailModel {
    pub config: EncoderConfig,
    pub embedding: Array2<f64>,
    pub pos_embedding: Array2<f64>,
    pub blocks: Vec<EncoderBlock>,
    pub pool_w: Array1<f64>,
    pub pool_b: f64,
    pub w_prompt: Array2<f64>,
    pub b_prompt: Array1<f64>,
    pub w_token: Array2<f64>,
    pub b_token: Array1<f64>,
    pub s_prompt: f64,
    pub s_token: f64,
}

fn normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    // Box-Muller; good enough for initialization and fully deterministic.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    std * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn randn2(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| normal(rng, std))
}

const INIT_STD: f64 = 0.02;

impl GuardrailModel {
    /// Random initialization: N(0, 0.02) weights, zero biases, unit layer-norm
    /// gains, `s_k = 0` (sigma = 1).
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let blocks = (0..config.n_layers)
            .map(|_| EncoderBlock {
                ln1_gain: Array1::ones(d),
                ln1_bias: Array1::zeros(d),
                w_q: randn2(&mut rng, d, d, INIT_STD),
                b_q: Array1::zeros(d),
                w_k: randn2(&mut rng, d, d, INIT_STD),
                b_k: Array1::zeros(d),
                w_v: randn2(&mut rng, d, d, INIT_STD),
                b_v: Array1::zeros(d),
                w_o: randn2(&mut rng, d, d, INIT_STD),
                b_o: Array1::zeros(d),
                ln2_gain: Array1::ones(d),
                ln2_bias: Array1::zeros(d),
                w_ff1: randn2(&mut rng, config.d_ff, d, INIT_STD),
                b_ff1: Array1::zeros(config.d_ff),
                w_ff2: randn2(&mut rng, d, config.d_ff, INIT_STD),
                b_ff2: Array1::zeros(d),
            })
            .collect();
        Ok(GuardrailModel {
            embedding: randn2(&mut rng, config.vocab_size, d, INIT_STD),
            pos_embedding: randn2(&mut rng, config.max_len, d, INIT_STD),
            blocks,
            pool_w: Array1::from_shape_fn(d, |_| normal(&mut rng, INIT_STD)),
            pool_b: 0.0,
            w_prompt: randn2(&mut rng, 2, d, INIT_STD),
            b_prompt: Array1::zeros(2),
            w_token: randn2(&mut rng, 2, d, INIT_STD),
            b_token: Array1::zeros(2),
            s_prompt: 0.0,
            s_token: 0.0,
            config,
        })
    }

    /// All-zero instance of the same shape; used as a gradient accumulator.
    pub fn zeros(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let blocks = (0..config.n_layers)
            .map(|_| EncoderBlock {
                ln1_gain: Array1::zeros(d),
                ln1_bias: Array1::zeros(d),
                w_q: Array2::zeros((d, d)),
                b_q: Array1::zeros(d),
                w_k: Array2::zeros((d, d)),
                b_k: Array1::zeros(d),
                w_v: Array2::zeros((d, d)),
                b_v: Array1::zeros(d),
                w_o: Array2::zeros((d, d)),
                b_o: Array1::zeros(d),
                ln2_gain: Array1::zeros(d),
                ln2_bias: Array1::zeros(d),
                w_ff1: Array2::zeros((config.d_ff, d)),
                b_ff1: Array1::zeros(config.d_ff),
                w_ff2: Array2::zeros((d, config.d_ff)),
                b_ff2: Array1::zeros(d),
            })
            .collect();
        Ok(GuardrailModel {
            embedding: Array2::zeros((config.vocab_size, d)),
            pos_embedding: Array2::zeros((config.max_len, d)),
            blocks,
            pool_w: Array1::zeros(d),
            pool_b: 0.0,
            w_prompt: Array2::zeros((2, d)),
            b_prompt: Array1::zeros(2),
            w_token: Array2::zeros((2, d)),
            b_token: Array1::zeros(2),
            s_prompt: 0.0,
            s_token: 0.0,
            config,
        })
    }

    /// Walks every parameter tensor in a fixed canonical order.
    pub fn for_each_param<F>(&self, mut visit: F)
    where
        F: FnMut(&str, &[usize], &[f64]),
    {
        let d = self.config.d_model;
        visit(
            "embedding",
            &[self.config.vocab_size, d],
            self.embedding.as_slice().unwrap(),
        );
        visit(
            "pos_embedding",
            &[self.config.max_len, d],
            self.pos_embedding.as_slice().unwrap(),
        );
        for (i, b) in self.blocks.iter().enumerate() {
            let f = self.config.d_ff;
            let name = |part: &str| format!("layers.{i}.{part}");
            visit(&name("ln1.gain"), &[d], b.ln1_gain.as_slice().unwrap());
            visit(&name("ln1.bias"), &[d], b.ln1_bias.as_slice().unwrap());
            visit(&name("attn.w_q"), &[d, d], b.w_q.as_slice().unwrap());
            visit(&name("attn.b_q"), &[d], b.b_q.as_slice().unwrap());
            visit(&name("attn.w_k"), &[d, d], b.w_k.as_slice().unwrap());
            visit(&name("attn.b_k"), &[d], b.b_k.as_slice().unwrap());
            visit(&name("attn.w_v"), &[d, d], b.w_v.as_slice().unwrap());
            visit(&name("attn.b_v"), &[d], b.b_v.as_slice().unwrap());
            visit(&name("attn.w_o"), &[d, d], b.w_o.as_slice().unwrap());
            visit(&name("attn.b_o"), &[d], b.b_o.as_slice().unwrap());
            visit(&name("ln2.gain"), &[d], b.ln2_gain.as_slice().unwrap());
            visit(&name("ln2.bias"), &[d], b.ln2_bias.as_slice().unwrap());
            visit(&name("ff.w1"), &[f, d], b.w_ff1.as_slice().unwrap());
            visit(&name("ff.b1"), &[f], b.b_ff1.as_slice().unwrap());
            visit(&name("ff.w2"), &[d, f], b.w_ff2.as_slice().unwrap());
            visit(&name("ff.b2"), &[d], b.b_ff2.as_slice().unwrap());
        }
        visit("pool.w", &[d], self.pool_w.as_slice().unwrap());
        visit("pool.b", &[1], std::slice::from_ref(&self.pool_b));
        visit("head.prompt.w", &[2, d], self.w_prompt.as_slice().unwrap());
        visit("head.prompt.b", &[2], self.b_prompt.as_slice().unwrap());
        visit("head.token.w", &[2, d], self.w_token.as_slice().unwrap());
        visit("head.token.b", &[2], self.b_token.as_slice().unwrap());
        visit("uncertainty.s1", &[1], std::slice::from_ref(&self.s_prompt));
        visit("uncertainty.s2", &[1], std::slice::from_ref(&self.s_token));
    }

    /// Mutable variant of [`Self::for_each_param`], same order.
    pub fn for_each_param_mut<F>(&mut self, mut visit: F)
    where
        F: FnMut(&str, &mut [f64]),
    {
        visit("embedding", self.embedding.as_slice_mut().unwrap());
        visit("pos_embedding", self.pos_embedding.as_slice_mut().unwrap());
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let name = |part: &str| format!("layers.{i}.{part}");
            visit(&name("ln1.gain"), b.ln1_gain.as_slice_mut().unwrap());
            visit(&name("ln1.bias"), b.ln1_bias.as_slice_mut().unwrap());
            visit(&name("attn.w_q"), b.w_q.as_slice_mut().unwrap());
            visit(&name("attn.b_q"), b.b_q.as_slice_mut().unwrap());
            visit(&name("attn.w_k"), b.w_k.as_slice_mut().unwrap());
            visit(&name("attn.b_k"), b.b_k.as_slice_mut().unwrap());
            visit(&name("attn.w_v"), b.w_v.as_slice_mut().unwrap());
            visit(&name("attn.b_v"), b.b_v.as_slice_mut().unwrap());
            visit(&name("attn.w_o"), b.w_o.as_slice_mut().unwrap());
            visit(&name("attn.b_o"), b.b_o.as_slice_mut().unwrap());
            visit(&name("ln2.gain"), b.ln2_gain.as_slice_mut().unwrap());
            visit(&name("ln2.bias"), b.ln2_bias.as_slice_mut().unwrap());
            visit(&name("ff.w1"), b.w_ff1.as_slice_mut().unwrap());
            visit(&name("ff.b1"), b.b_ff1.as_slice_mut().unwrap());
            visit(&name("ff.w2"), b.w_ff2.as_slice_mut().unwrap());
            visit(&name("ff.b2"), b.b_ff2.as_slice_mut().unwrap());
        }
        visit("pool.w", self.pool_w.as_slice_mut().unwrap());
        visit("pool.b", std::slice::from_mut(&mut self.pool_b));
        visit("head.prompt.w", self.w_prompt.as_slice_mut().unwrap());
        visit("head.prompt.b", self.b_prompt.as_slice_mut().unwrap());
        visit("head.token.w", self.w_token.as_slice_mut().unwrap());
        visit("head.token.b", self.b_token.as_slice_mut().unwrap());
        visit("uncertainty.s1", std::slice::from_mut(&mut self.s_prompt));
        visit("uncertainty.s2", std::slice::from_mut(&mut self.s_token));
    }

    /// Exact trainable-parameter count.
    pub fn count_params(&self) -> usize {
        let mut n = 0usize;
        self.for_each_param(|_, _, data| n += data.len());
        n
    }

    /// Errors if any parameter has gone non-finite.
    pub fn check_finite(&self) -> Result<()> {
        let mut bad: Option<String> = None;
        self.for_each_param(|name, _, data| {
            if bad.is_none() && data.iter().any(|v| !v.is_finite()) {
                bad = Some(name.to_string());
            }
        });
        match bad {
            Some(name) => Err(Error::NonFinite(format!("parameter `{name}`"))),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> EncoderConfig {
        EncoderConfig {
            vocab_size: 10,
            d_model: 8,
            n_layers: 0,
            n_heads: 2,
            d_ff: 16,
            max_len: 4,
            dropout: 0.0,
        }
    }

    #[test]
    fn count_matches_hand_summed_shapes() {
        // embeddings 80 + positions 32 + pooling 9 + heads 18 + 18 + s 2 = 159.
        let model = GuardrailModel::new(tiny_config(), 1).unwrap();
        assert_eq!(model.count_params(), 159);
    }

    #[test]
    fn doubling_vocab_adds_vocab_times_d_params() {
        let base = GuardrailModel::new(tiny_config(), 1).unwrap().count_params();
        let mut big = tiny_config();
        big.vocab_size = 20;
        let grown = GuardrailModel::new(big, 1).unwrap().count_params();
        assert_eq!(grown - base, 10 * 8);
    }

    #[test]
    fn layer_params_are_counted() {
        let mut config = tiny_config();
        config.n_layers = 1;
        let model = GuardrailModel::new(config, 1).unwrap();
        // Per block: 2*8 (ln1) + 4*(64+8) (attn) + 2*8 (ln2)
        //          + 16*8+16 (ff1) + 8*16+8 (ff2) = 600.
        assert_eq!(model.count_params(), 159 + 600);
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = GuardrailModel::new(tiny_config(), 42).unwrap();
        let b = GuardrailModel::new(tiny_config(), 42).unwrap();
        let c = GuardrailModel::new(tiny_config(), 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn param_walk_orders_match_between_const_and_mut() {
        let mut model = GuardrailModel::new(tiny_config(), 1).unwrap();
        let mut names = Vec::new();
        model.for_each_param(|name, _, _| names.push(name.to_string()));
        let mut mut_names = Vec::new();
        model.for_each_param_mut(|name, _| mut_names.push(name.to_string()));
        assert_eq!(names, mut_names);
        assert_eq!(names.first().map(String::as_str), Some("embedding"));
        assert_eq!(
            names.last().map(String::as_str),
            Some("uncertainty.s2")
        );
    }

    #[test]
    fn finite_check_catches_nan() {
        let mut model = GuardrailModel::new(tiny_config(), 1).unwrap();
        assert!(model.check_finite().is_ok());
        model.pool_w[0] = f64::NAN;
        assert!(model.check_finite().is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = tiny_config();
        c.n_layers = 1;
        c.n_heads = 3;
        assert!(c.validate().is_err());
        c.n_heads = 2;
        assert!(c.validate().is_ok());
        c.dropout = 1.0;
        assert!(c.validate().is_err());
    }
}
