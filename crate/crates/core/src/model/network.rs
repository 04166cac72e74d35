use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::tensor::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Layer-norm epsilon used throughout the network.
pub const LN_EPS: f64 = 1e-5;

const PER_ENCODER: usize = 16;

/// Sinusoidal table: `PE[pos, 2i] = sin(pos / 10000^(2i/d))`, `PE[pos, 2i+1] = cos(..)`.
pub fn positional_encoding(window_samples: usize, d_model: usize) -> Result<Tensor> {
    if d_model == 0 || d_model % 2 != 0 {
        return Err(Error::Config(format!("positional encoding needs an even d_model, got {d_model}")));
    }
    if window_samples == 0 {
        return Err(Error::Config("positional encoding needs at least one position".into()));
    }
    Ok(Tensor::from_fn([window_samples, d_model], |flat| {
        let (pos, j) = (flat / d_model, flat % d_model);
        let pair = (j / 2 * 2) as f64;
        let angle = pos as f64 / 10000f64.powf(pair / d_model as f64);
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    }))
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderVars {
    pub attn: AttentionVars,
    pub norm1_gain: Var,
    pub norm1_bias: Var,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub norm2_gain: Var,
    pub norm2_bias: Var,
}

/// Every model parameter bound onto one tape, in parameter order.
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub params: Vec<Var>,
    pub positional: Option<Var>,
}

impl ModelVars {
    pub fn embed_weight(&self) -> Var {
        self.params[0]
    }

    pub fn embed_bias(&self) -> Var {
        self.params[1]
    }

    pub fn encoder(&self, layer: usize) -> EncoderVars {
        let p = &self.params[2 + layer * PER_ENCODER..2 + (layer + 1) * PER_ENCODER];
        EncoderVars {
            attn: AttentionVars {
                wq: p[0],
                bq: p[1],
                wk: p[2],
                bk: p[3],
                wv: p[4],
                bv: p[5],
                wo: p[6],
                bo: p[7],
            },
            norm1_gain: p[8],
            norm1_bias: p[9],
            w1: p[10],
            b1: p[11],
            w2: p[12],
            b2: p[13],
            norm2_gain: p[14],
            norm2_bias: p[15],
        }
    }

    pub fn head_weight(&self) -> Var {
        self.params[self.params.len() - 2]
    }

    pub fn head_bias(&self) -> Var {
        self.params[self.params.len() - 1]
    }
}

/// Per-timestep affine projection of the channels, plus the positional table.
pub fn embed(tape: &mut Tape, x: Var, weight: Var, bias: Var, positional: Option<Var>) -> Result<Var> {
    let xs = tape.shape(x);
    let ws = tape.shape(weight);
    if xs.len() != 3 || ws.len() != 2 || xs[2] != ws[0] {
        return Err(Error::dim("embed", xs, ws));
    }
    let h = tape.matmul(x, weight)?;
    let h = tape.add_broadcast(h, bias)?;
    match positional {
        Some(pe) => tape.add_broadcast(h, pe),
        None => Ok(h),
    }
}

fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add_broadcast(y, b)
}

fn split_heads(tape: &mut Tape, x: Var, num_heads: usize) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    let x = tape.reshape(x, &[s[0], s[1], num_heads, s[2] / num_heads])?;
    tape.permute(x, &[0, 2, 1, 3])
}

fn check_heads(tape: &Tape, x: Var, num_heads: usize) -> Result<usize> {
    let s = tape.shape(x);
    if s.len() != 3 {
        return Err(Error::dim("multi_head_attention", s, &[]));
    }
    if num_heads == 0 || s[2] % num_heads != 0 {
        return Err(Error::Config(format!("d_model {} is not divisible by {num_heads} heads", s[2])));
    }
    Ok(s[2] / num_heads)
}

/// Unmasked multi-head scaled dot-product self-attention over `[n, T, d]`.
pub fn multi_head_attention(tape: &mut Tape, x: Var, p: &AttentionVars, num_heads: usize) -> Result<Var> {
    let dh = check_heads(tape, x, num_heads)?;
    let s = tape.shape(x).to_vec();
    let mut heads = Vec::with_capacity(3);
    for (w, b) in [(p.wq, p.bq), (p.wk, p.bk), (p.wv, p.bv)] {
        let y = linear(tape, x, w, b)?;
        heads.push(split_heads(tape, y, num_heads)?);
    }
    let out = tape.attention(heads[0], heads[1], heads[2], 1.0 / (dh as f64).sqrt())?;
    let merged = tape.permute(out, &[0, 2, 1, 3])?;
    let merged = tape.reshape(merged, &s)?;
    linear(tape, merged, p.wo, p.bo)
}

/// Attention weights `[n, heads, T, T]` of one block, for inspection.
pub fn attention_weights(tape: &mut Tape, x: Var, p: &AttentionVars, num_heads: usize) -> Result<Tensor> {
    let dh = check_heads(tape, x, num_heads)?;
    let q = linear(tape, x, p.wq, p.bq)?;
    let q = split_heads(tape, q, num_heads)?;
    let k = linear(tape, x, p.wk, p.bk)?;
    let k = split_heads(tape, k, num_heads)?;
    let kt = tape.permute(k, &[0, 1, 3, 2])?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
    let w = tape.softmax(scores)?;
    Ok(tape.value(w).clone())
}

/// Post-norm encoder block:
/// `y = LN(x + Dropout(MHA(x)))`, `out = LN(y + Dropout(FFN(y)))`.
pub fn encoder_block<R: Rng + ?Sized>(
    tape: &mut Tape,
    x: Var,
    p: &EncoderVars,
    num_heads: usize,
    dropout_p: f64,
    training: bool,
    rng: &mut R,
) -> Result<Var> {
    let attn = multi_head_attention(tape, x, &p.attn, num_heads)?;
    let attn = tape.dropout(attn, dropout_p, training, rng)?;
    let y = tape.add(x, attn)?;
    let y = tape.layer_norm(y, p.norm1_gain, p.norm1_bias, LN_EPS)?;

    let hidden = linear(tape, y, p.w1, p.b1)?;
    let hidden = tape.relu(hidden);
    let ff = linear(tape, hidden, p.w2, p.b2)?;
    let ff = tape.dropout(ff, dropout_p, training, rng)?;
    let out = tape.add(y, ff)?;
    tape.layer_norm(out, p.norm2_gain, p.norm2_bias, LN_EPS)
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardPass {
    /// `[n, num_classes]` raw scores.
    pub logits: Var,
    /// `[n, d_model]` time-averaged encoder output.
    pub pooled: Var,
}

enum Init {
    Weight { fan_in: usize },
    Zeros,
    Ones,
}

fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (c, d, f, k) = (cfg.num_channels, cfg.d_model, cfg.d_ff, cfg.num_classes);
    let mut out = vec![
        ("embed.weight".to_string(), vec![c, d], Init::Weight { fan_in: c }),
        ("embed.bias".to_string(), vec![d], Init::Zeros),
    ];
    for l in 0..cfg.num_encoders {
        let p = |s: &str| format!("encoder.{l}.{s}");
        for proj in ["q", "k", "v", "o"] {
            out.push((p(&format!("attn.w{proj}")), vec![d, d], Init::Weight { fan_in: d }));
            out.push((p(&format!("attn.b{proj}")), vec![d], Init::Zeros));
        }
        out.push((p("norm1.gain"), vec![d], Init::Ones));
        out.push((p("norm1.bias"), vec![d], Init::Zeros));
        out.push((p("ffn.w1"), vec![d, f], Init::Weight { fan_in: d }));
        out.push((p("ffn.b1"), vec![f], Init::Zeros));
        out.push((p("ffn.w2"), vec![f, d], Init::Weight { fan_in: f }));
        out.push((p("ffn.b2"), vec![d], Init::Zeros));
        out.push((p("norm2.gain"), vec![d], Init::Ones));
        out.push((p("norm2.bias"), vec![d], Init::Zeros));
    }
    out.push(("head.weight".to_string(), vec![d, k], Init::Weight { fan_in: d }));
    out.push(("head.bias".to_string(), vec![k], Init::Zeros));
    out
}

/// Transformer-encoder classifier over `[n, window_samples, num_channels]` batches.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerClassifier {
    config: ModelConfig,
    names: Vec<String>,
    params: Vec<Tensor>,
    positional: Tensor,
}

impl TransformerClassifier {
    /// Fresh model: weights `uniform(±sqrt(1/fan_in))`, zero biases, unit gains.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (names, params) = layout(&config)
            .into_iter()
            .map(|(name, shape, init)| {
                let t = match init {
                    Init::Weight { fan_in } => Tensor::uniform(shape, (1.0 / fan_in as f64).sqrt(), &mut rng),
                    Init::Zeros => Tensor::zeros(shape),
                    Init::Ones => Tensor::ones(shape),
                };
                (name, t)
            })
            .unzip();
        let positional = positional_encoding(config.window_samples, config.d_model)?;
        Ok(Self { config, names, params, positional })
    }

    /// Rebuilds a model from named parameters, which must match the layout of `config`.
    pub fn from_params(config: ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let expected = layout(&config);
        if expected.len() != named.len() {
            return Err(Error::Contract(format!(
                "config implies {} parameter tensors, got {}",
                expected.len(),
                named.len()
            )));
        }
        for ((name, shape, _), (got_name, t)) in expected.iter().zip(&named) {
            if name != got_name || shape.as_slice() != t.shape() {
                return Err(Error::Contract(format!(
                    "expected parameter {name} {shape:?}, got {got_name} {:?}",
                    t.shape()
                )));
            }
        }
        let positional = positional_encoding(config.window_samples, config.d_model)?;
        let (names, params) = named.into_iter().unzip();
        Ok(Self { config, names, params, positional })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.params[i])
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// Places the parameters on `tape`, as trainable leaves when `trainable`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> ModelVars {
        let params = self.params.iter().map(|p| tape.leaf(p.clone(), trainable)).collect();
        let positional = self
            .config
            .positional_encoding
            .then(|| tape.constant(self.positional.clone()));
        ModelVars { params, positional }
    }

    pub fn check_batch(&self, batch: &Tensor) -> Result<()> {
        let c = &self.config;
        let s = batch.shape();
        if s.len() != 3 || s[1] != c.window_samples || s[2] != c.num_channels {
            return Err(Error::dim("forward", s, &[0, c.window_samples, c.num_channels]));
        }
        Ok(())
    }

    /// Records the full network on `tape`.
    pub fn forward_on<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        vars: &ModelVars,
        x: Var,
        training: bool,
        rng: &mut R,
    ) -> Result<ForwardPass> {
        let c = &self.config;
        let mut h = embed(tape, x, vars.embed_weight(), vars.embed_bias(), vars.positional)?;
        for l in 0..c.num_encoders {
            h = encoder_block(tape, h, &vars.encoder(l), c.num_heads, c.dropout_p, training, rng)?;
        }
        let pooled = tape.mean(h, 1)?;
        let logits = linear(tape, pooled, vars.head_weight(), vars.head_bias())?;
        Ok(ForwardPass { logits, pooled })
    }

    fn eval_pass(&self, batch: &Tensor) -> Result<(Tape, ForwardPass)> {
        self.check_batch(batch)?;
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let x = tape.constant(batch.clone());
        // eval mode never draws from the generator
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pass = self.forward_on(&mut tape, &vars, x, false, &mut rng)?;
        Ok((tape, pass))
    }

    /// Eval-mode logits `[n, num_classes]`.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        let (tape, pass) = self.eval_pass(batch)?;
        Ok(tape.value(pass.logits).clone())
    }

    /// Eval-mode pooled representation `[n, d_model]` fed to the head.
    pub fn features(&self, batch: &Tensor) -> Result<Tensor> {
        let (tape, pass) = self.eval_pass(batch)?;
        Ok(tape.value(pass.pooled).clone())
    }

    /// Applies the dense head to pooled features.
    pub fn head(&self, features: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let f = tape.constant(features.clone());
        let w = tape.constant(self.params[self.params.len() - 2].clone());
        let b = tape.constant(self.params[self.params.len() - 1].clone());
        let out = linear(&mut tape, f, w, b)?;
        Ok(tape.value(out).clone())
    }

    /// Mean cross-entropy on one batch, its parameter gradients and the logits.
    pub fn loss_and_grads<R: Rng + ?Sized>(
        &self,
        batch: &Tensor,
        labels: &[usize],
        training: bool,
        rng: &mut R,
    ) -> Result<(f64, Vec<Tensor>, Tensor)> {
        self.check_batch(batch)?;
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, true);
        let x = tape.constant(batch.clone());
        let pass = self.forward_on(&mut tape, &vars, x, training, rng)?;
        let loss = tape.sparse_cross_entropy(pass.logits, labels)?;
        let value = tape.value(loss).item().expect("scalar loss");
        let logits = tape.value(pass.logits).clone();
        tape.backward(loss)?;
        let grads = vars
            .params
            .iter()
            .map(|&v| tape.grad(v).expect("every parameter reaches the loss"))
            .collect();
        Ok((value, grads, logits))
    }
}
