//! A tiny encoder-decoder transformer with exact hand-derived gradients.
//!
//! Architecture: pre-norm residual blocks with scale-only (RMS) normalization
//! and no biases anywhere; a bidirectional encoder; a causally masked
//! decoder with cross-attention; a single learned relative-position bias
//! table shared by encoder and decoder self-attention (clamped signed
//! distances, no bias in cross-attention); tied input/output embeddings.
//! Everything is f64 and single-threaded-deterministic: the same params and
//! inputs produce bit-identical logits.

mod checkpoint;
pub mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, AdamState, Checkpoint};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{BOS, EOS};
use crate::error::{Error, Result};
use crate::generators::nucleus_sample;
use tensor::{matmul, matmul_at, matmul_bt, Tensor};

const NORM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_rel_distance: usize,
    pub dropout: f64,
    pub max_decode_len: usize,
}

impl ModelConfig {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            n_layers: 2,
            n_heads: 4,
            d_model: 64,
            d_ff: 128,
            vocab_size,
            max_rel_distance: 8,
            dropout: 0.0,
            max_decode_len: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.n_layers == 0 || self.d_ff == 0 {
            return Err(Error::InvalidConfig("model dimensions must be at least 1".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size < 5 {
            return Err(Error::InvalidConfig("vocab too small".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig("dropout must lie in [0,1)".into()));
        }
        Ok(())
    }

    fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    fn bias_cols(&self) -> usize {
        2 * self.max_rel_distance + 1
    }

    /// Closed-form parameter count; checked against the actual tensors.
    pub fn param_count(&self) -> usize {
        let d = self.d_model;
        let f = self.d_ff;
        let enc_layer = 2 * d + 4 * d * d + 2 * d * f;
        let dec_layer = 3 * d + 8 * d * d + 2 * d * f;
        self.vocab_size * d
            + self.n_heads * self.bias_cols()
            + self.n_layers * (enc_layer + dec_layer)
            + 2 * d
    }
}

#[derive(Debug, Clone)]
pub(crate) struct AttnParams {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
}

#[derive(Debug, Clone)]
pub(crate) struct FfParams {
    pub w1: Tensor,
    pub w2: Tensor,
}

#[derive(Debug, Clone)]
pub(crate) struct EncLayer {
    pub ln_attn: Tensor,
    pub attn: AttnParams,
    pub ln_ff: Tensor,
    pub ff: FfParams,
}

#[derive(Debug, Clone)]
pub(crate) struct DecLayer {
    pub ln_self: Tensor,
    pub self_attn: AttnParams,
    pub ln_cross: Tensor,
    pub cross_attn: AttnParams,
    pub ln_ff: Tensor,
    pub ff: FfParams,
}

/// All learned tensors. Doubles as the gradient container.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub(crate) embedding: Tensor,
    pub(crate) rel_bias: Tensor,
    pub(crate) enc: Vec<EncLayer>,
    pub(crate) dec: Vec<DecLayer>,
    pub(crate) ln_enc_out: Tensor,
    pub(crate) ln_dec_out: Tensor,
}

fn gauss(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    // Box-Muller
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn rand_tensor(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = Tensor::zeros(rows, cols);
    for v in &mut t.data {
        *v = gauss(rng, std);
    }
    t
}

fn ones(cols: usize) -> Tensor {
    Tensor {
        rows: 1,
        cols,
        data: vec![1.0; cols],
    }
}

impl ModelParams {
    /// Gaussian init (std 0.02); output projections start at zero so each
    /// block begins as the identity; norm gains start at one.
    pub fn init(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let f = config.d_ff;
        let std = 0.02;
        let attn = |rng: &mut ChaCha8Rng| AttnParams {
            wq: rand_tensor(d, d, std, rng),
            wk: rand_tensor(d, d, std, rng),
            wv: rand_tensor(d, d, std, rng),
            wo: Tensor::zeros(d, d),
        };
        let ff = |rng: &mut ChaCha8Rng| FfParams {
            w1: rand_tensor(d, f, std, rng),
            w2: Tensor::zeros(f, d),
        };
        let enc = (0..config.n_layers)
            .map(|_| EncLayer {
                ln_attn: ones(d),
                attn: attn(rng),
                ln_ff: ones(d),
                ff: ff(rng),
            })
            .collect();
        let dec = (0..config.n_layers)
            .map(|_| DecLayer {
                ln_self: ones(d),
                self_attn: attn(rng),
                ln_cross: ones(d),
                cross_attn: attn(rng),
                ln_ff: ones(d),
                ff: ff(rng),
            })
            .collect();
        Ok(Self {
            embedding: rand_tensor(config.vocab_size, d, std, rng),
            rel_bias: Tensor::zeros(config.n_heads, config.bias_cols()),
            enc,
            dec,
            ln_enc_out: ones(d),
            ln_dec_out: ones(d),
            config: config.clone(),
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(|_, t| t.data.iter_mut().for_each(|v| *v = 0.0));
        z
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(|_, t| n += t.data.len());
        n
    }

    /// Visit every tensor in a fixed, documented order (the checkpoint
    /// tensor order).
    pub fn visit<'a>(&'a self, mut f: impl FnMut(&str, &'a Tensor)) {
        f("embedding", &self.embedding);
        f("rel_bias", &self.rel_bias);
        for (i, l) in self.enc.iter().enumerate() {
            f(&format!("enc.{i}.ln_attn"), &l.ln_attn);
            f(&format!("enc.{i}.attn.wq"), &l.attn.wq);
            f(&format!("enc.{i}.attn.wk"), &l.attn.wk);
            f(&format!("enc.{i}.attn.wv"), &l.attn.wv);
            f(&format!("enc.{i}.attn.wo"), &l.attn.wo);
            f(&format!("enc.{i}.ln_ff"), &l.ln_ff);
            f(&format!("enc.{i}.ff.w1"), &l.ff.w1);
            f(&format!("enc.{i}.ff.w2"), &l.ff.w2);
        }
        for (i, l) in self.dec.iter().enumerate() {
            f(&format!("dec.{i}.ln_self"), &l.ln_self);
            f(&format!("dec.{i}.self.wq"), &l.self_attn.wq);
            f(&format!("dec.{i}.self.wk"), &l.self_attn.wk);
            f(&format!("dec.{i}.self.wv"), &l.self_attn.wv);
            f(&format!("dec.{i}.self.wo"), &l.self_attn.wo);
            f(&format!("dec.{i}.ln_cross"), &l.ln_cross);
            f(&format!("dec.{i}.cross.wq"), &l.cross_attn.wq);
            f(&format!("dec.{i}.cross.wk"), &l.cross_attn.wk);
            f(&format!("dec.{i}.cross.wv"), &l.cross_attn.wv);
            f(&format!("dec.{i}.cross.wo"), &l.cross_attn.wo);
            f(&format!("dec.{i}.ln_ff"), &l.ln_ff);
            f(&format!("dec.{i}.ff.w1"), &l.ff.w1);
            f(&format!("dec.{i}.ff.w2"), &l.ff.w2);
        }
        f("ln_enc_out", &self.ln_enc_out);
        f("ln_dec_out", &self.ln_dec_out);
    }

    pub fn visit_mut(&mut self, mut f: impl FnMut(&str, &mut Tensor)) {
        f("embedding", &mut self.embedding);
        f("rel_bias", &mut self.rel_bias);
        for (i, l) in self.enc.iter_mut().enumerate() {
            f(&format!("enc.{i}.ln_attn"), &mut l.ln_attn);
            f(&format!("enc.{i}.attn.wq"), &mut l.attn.wq);
            f(&format!("enc.{i}.attn.wk"), &mut l.attn.wk);
            f(&format!("enc.{i}.attn.wv"), &mut l.attn.wv);
            f(&format!("enc.{i}.attn.wo"), &mut l.attn.wo);
            f(&format!("enc.{i}.ln_ff"), &mut l.ln_ff);
            f(&format!("enc.{i}.ff.w1"), &mut l.ff.w1);
            f(&format!("enc.{i}.ff.w2"), &mut l.ff.w2);
        }
        for (i, l) in self.dec.iter_mut().enumerate() {
            f(&format!("dec.{i}.ln_self"), &mut l.ln_self);
            f(&format!("dec.{i}.self.wq"), &mut l.self_attn.wq);
            f(&format!("dec.{i}.self.wk"), &mut l.self_attn.wk);
            f(&format!("dec.{i}.self.wv"), &mut l.self_attn.wv);
            f(&format!("dec.{i}.self.wo"), &mut l.self_attn.wo);
            f(&format!("dec.{i}.ln_cross"), &mut l.ln_cross);
            f(&format!("dec.{i}.cross.wq"), &mut l.cross_attn.wq);
            f(&format!("dec.{i}.cross.wk"), &mut l.cross_attn.wk);
            f(&format!("dec.{i}.cross.wv"), &mut l.cross_attn.wv);
            f(&format!("dec.{i}.cross.wo"), &mut l.cross_attn.wo);
            f(&format!("dec.{i}.ln_ff"), &mut l.ln_ff);
            f(&format!("dec.{i}.ff.w1"), &mut l.ff.w1);
            f(&format!("dec.{i}.ff.w2"), &mut l.ff.w2);
        }
        f("ln_enc_out", &mut self.ln_enc_out);
        f("ln_dec_out", &mut self.ln_dec_out);
    }

    /// Flat tensor views in `visit` order, for zip-style updates.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v = Vec::new();
        self.visit(|_, t| v.push(t));
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = Vec::new();
        v.push(&mut self.embedding);
        v.push(&mut self.rel_bias);
        for l in &mut self.enc {
            v.push(&mut l.ln_attn);
            v.push(&mut l.attn.wq);
            v.push(&mut l.attn.wk);
            v.push(&mut l.attn.wv);
            v.push(&mut l.attn.wo);
            v.push(&mut l.ln_ff);
            v.push(&mut l.ff.w1);
            v.push(&mut l.ff.w2);
        }
        for l in &mut self.dec {
            v.push(&mut l.ln_self);
            v.push(&mut l.self_attn.wq);
            v.push(&mut l.self_attn.wk);
            v.push(&mut l.self_attn.wv);
            v.push(&mut l.self_attn.wo);
            v.push(&mut l.ln_cross);
            v.push(&mut l.cross_attn.wq);
            v.push(&mut l.cross_attn.wk);
            v.push(&mut l.cross_attn.wv);
            v.push(&mut l.cross_attn.wo);
            v.push(&mut l.ln_ff);
            v.push(&mut l.ff.w1);
            v.push(&mut l.ff.w2);
        }
        v.push(&mut self.ln_enc_out);
        v.push(&mut self.ln_dec_out);
        v
    }

    /// Global L2 norm over every tensor (used by gradient clipping).
    pub fn global_norm(&self) -> f64 {
        let mut sq = 0.0;
        self.visit(|_, t| sq += t.sq_norm());
        sq.sqrt()
    }

    pub fn scale_all(&mut self, s: f64) {
        self.visit_mut(|_, t| t.scale(s));
    }

    pub fn add_scaled(&mut self, other: &Self, s: f64) {
        let mut flat: Vec<&Tensor> = Vec::new();
        other.visit(|_, t| flat.push(t));
        let mut i = 0;
        self.visit_mut(|_, t| {
            for (a, b) in t.data.iter_mut().zip(&flat[i].data) {
                *a += s * b;
            }
            i += 1;
        });
    }
}

// ---------------------------------------------------------------------------
// forward pass with caches
// ---------------------------------------------------------------------------

struct NormCache {
    x: Tensor,
    inv: Vec<f64>,
}

fn rms_norm(x: &Tensor, gain: &Tensor) -> (Tensor, NormCache) {
    let d = x.cols as f64;
    let mut y = Tensor::zeros(x.rows, x.cols);
    let mut inv = Vec::with_capacity(x.rows);
    for i in 0..x.rows {
        let row = x.row(i);
        let ms: f64 = row.iter().map(|v| v * v).sum::<f64>() / d;
        let r = 1.0 / (ms + NORM_EPS).sqrt();
        inv.push(r);
        let out = y.row_mut(i);
        for (j, (&v, &g)) in row.iter().zip(&gain.data).enumerate() {
            out[j] = g * v * r;
        }
    }
    (y, NormCache { x: x.clone(), inv })
}

fn rms_norm_backward(cache: &NormCache, gain: &Tensor, dy: &Tensor, dgain: &mut Tensor) -> Tensor {
    let d = cache.x.cols as f64;
    let mut dx = Tensor::zeros(cache.x.rows, cache.x.cols);
    for i in 0..cache.x.rows {
        let x = cache.x.row(i);
        let dyr = dy.row(i);
        let r = cache.inv[i];
        let mut dot = 0.0;
        for ((&dyv, &g), &xv) in dyr.iter().zip(&gain.data).zip(x) {
            dot += dyv * g * xv;
        }
        let dxr = dx.row_mut(i);
        for j in 0..x.len() {
            let u = dyr[j] * gain.data[j];
            dxr[j] = u * r - x[j] * (r * r * r / d) * dot;
            dgain.data[j] += dyr[j] * x[j] * r;
        }
    }
    dx
}

struct AttnCache {
    q_in: Tensor,
    kv_in: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    /// Per-head attention weights, each [n_q, n_k].
    weights: Vec<Tensor>,
    concat: Tensor,
}

fn bias_index(i: usize, j: usize, max_dist: usize) -> usize {
    let delta = j as isize - i as isize;
    let clamped = delta.clamp(-(max_dist as isize), max_dist as isize);
    (clamped + max_dist as isize) as usize
}

fn attention(
    q_in: &Tensor,
    kv_in: &Tensor,
    p: &AttnParams,
    rel_bias: Option<&Tensor>,
    causal: bool,
    cfg: &ModelConfig,
) -> (Tensor, AttnCache) {
    let (n_q, n_k) = (q_in.rows, kv_in.rows);
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let q = matmul(q_in, &p.wq);
    let k = matmul(kv_in, &p.wk);
    let v = matmul(kv_in, &p.wv);
    let mut concat = Tensor::zeros(n_q, cfg.d_model);
    let mut weights = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let off = h * dh;
        let mut logits = Tensor::zeros(n_q, n_k);
        for i in 0..n_q {
            let qi = &q.row(i)[off..off + dh];
            for j in 0..n_k {
                if causal && j > i {
                    *logits.at_mut(i, j) = f64::NEG_INFINITY;
                    continue;
                }
                let kj = &k.row(j)[off..off + dh];
                let mut dot = 0.0;
                for (a, b) in qi.iter().zip(kj) {
                    dot += a * b;
                }
                let mut l = dot * scale;
                if let Some(bias) = rel_bias {
                    l += bias.at(h, bias_index(i, j, cfg.max_rel_distance));
                }
                *logits.at_mut(i, j) = l;
            }
        }
        // softmax rows in place
        for i in 0..n_q {
            let row = logits.row_mut(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        for i in 0..n_q {
            let out = &mut concat.row_mut(i)[off..off + dh];
            for j in 0..n_k {
                let w = logits.at(i, j);
                if w == 0.0 {
                    continue;
                }
                let vj = &v.row(j)[off..off + dh];
                for (o, &vv) in out.iter_mut().zip(vj) {
                    *o += w * vv;
                }
            }
        }
        weights.push(logits);
    }
    let out = matmul(&concat, &p.wo);
    (
        out,
        AttnCache {
            q_in: q_in.clone(),
            kv_in: kv_in.clone(),
            q,
            k,
            v,
            weights,
            concat,
        },
    )
}

/// Backward through one attention block. Returns (d_q_in, d_kv_in) and
/// accumulates parameter gradients.
#[allow(clippy::too_many_arguments)]
fn attention_backward(
    cache: &AttnCache,
    p: &AttnParams,
    grads: &mut AttnParams,
    mut dbias: Option<&mut Tensor>,
    d_out: &Tensor,
    cfg: &ModelConfig,
) -> (Tensor, Tensor) {
    let (n_q, n_k) = (cache.q_in.rows, cache.kv_in.rows);
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    grads.wo.add_assign(&matmul_at(&cache.concat, d_out));
    let d_concat = matmul_bt(d_out, &p.wo);

    let mut dq = Tensor::zeros(n_q, cfg.d_model);
    let mut dk = Tensor::zeros(n_k, cfg.d_model);
    let mut dv = Tensor::zeros(n_k, cfg.d_model);
    for h in 0..cfg.n_heads {
        let off = h * dh;
        let a = &cache.weights[h];
        // dA = dOh · Vhᵀ ; dVh += Aᵀ · dOh
        let mut da = Tensor::zeros(n_q, n_k);
        for i in 0..n_q {
            let doh = &d_concat.row(i)[off..off + dh];
            for j in 0..n_k {
                let w = a.at(i, j);
                let vj = &cache.v.row(j)[off..off + dh];
                let mut dot = 0.0;
                for (x, y) in doh.iter().zip(vj) {
                    dot += x * y;
                }
                *da.at_mut(i, j) = dot;
                if w != 0.0 {
                    let dvj = &mut dv.row_mut(j)[off..off + dh];
                    for (o, &x) in dvj.iter_mut().zip(doh) {
                        *o += w * x;
                    }
                }
            }
        }
        // softmax backward per row, then split into q/k/bias pieces
        for i in 0..n_q {
            let arow = a.row(i);
            let darow = da.row(i);
            let s: f64 = arow.iter().zip(darow).map(|(&w, &g)| w * g).sum();
            for j in 0..n_k {
                let w = arow[j];
                if w == 0.0 {
                    continue;
                }
                let dlogit = w * (darow[j] - s);
                if let Some(bias) = dbias.as_deref_mut() {
                    *bias.at_mut(h, bias_index(i, j, cfg.max_rel_distance)) += dlogit;
                }
                let kj = &cache.k.row(j)[off..off + dh];
                let qi = &cache.q.row(i)[off..off + dh];
                let dqr = &mut dq.row_mut(i)[off..off + dh];
                for (o, &kv) in dqr.iter_mut().zip(kj) {
                    *o += dlogit * kv * scale;
                }
                let dkr = &mut dk.row_mut(j)[off..off + dh];
                for (o, &qv) in dkr.iter_mut().zip(qi) {
                    *o += dlogit * qv * scale;
                }
            }
        }
    }
    grads.wq.add_assign(&matmul_at(&cache.q_in, &dq));
    grads.wk.add_assign(&matmul_at(&cache.kv_in, &dk));
    grads.wv.add_assign(&matmul_at(&cache.kv_in, &dv));
    let d_q_in = matmul_bt(&dq, &p.wq);
    let mut d_kv_in = matmul_bt(&dk, &p.wk);
    d_kv_in.add_assign(&matmul_bt(&dv, &p.wv));
    // self-attention feeds q and kv from the same tensor; the caller must
    // add the two pieces together
    (d_q_in, d_kv_in)
}

struct FfCache {
    xn: Tensor,
    h1: Tensor,
    relu: Tensor,
}

fn feed_forward(xn: &Tensor, p: &FfParams) -> (Tensor, FfCache) {
    let h1 = matmul(xn, &p.w1);
    let mut relu = h1.clone();
    for v in &mut relu.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let out = matmul(&relu, &p.w2);
    (
        out,
        FfCache {
            xn: xn.clone(),
            h1,
            relu,
        },
    )
}

fn feed_forward_backward(
    cache: &FfCache,
    p: &FfParams,
    grads: &mut FfParams,
    d_out: &Tensor,
) -> Tensor {
    grads.w2.add_assign(&matmul_at(&cache.relu, d_out));
    let mut dh1 = matmul_bt(d_out, &p.w2);
    for (g, &h) in dh1.data.iter_mut().zip(&cache.h1.data) {
        if h <= 0.0 {
            *g = 0.0;
        }
    }
    grads.w1.add_assign(&matmul_at(&cache.xn, &dh1));
    matmul_bt(&dh1, &p.w1)
}

struct EncLayerCache {
    norm1: NormCache,
    attn: AttnCache,
    norm2: NormCache,
    ff: FfCache,
}

struct DecLayerCache {
    norm1: NormCache,
    self_attn: AttnCache,
    norm2: NormCache,
    cross_attn: AttnCache,
    norm3: NormCache,
    ff: FfCache,
}

struct ForwardCache {
    src: Vec<u32>,
    dec_in: Vec<u32>,
    enc_layers: Vec<EncLayerCache>,
    enc_final: NormCache,
    enc_out: Tensor,
    dec_layers: Vec<DecLayerCache>,
    dec_final: NormCache,
    dec_out: Tensor,
    logits: Tensor,
}

fn embed(params: &ModelParams, ids: &[u32]) -> Result<Tensor> {
    let d = params.config.d_model;
    let mut x = Tensor::zeros(ids.len(), d);
    for (i, &id) in ids.iter().enumerate() {
        if id as usize >= params.config.vocab_size {
            return Err(Error::InvalidTokenId(id));
        }
        x.row_mut(i).copy_from_slice(params.embedding.row(id as usize));
    }
    Ok(x)
}

/// A denoising example can wipe the whole source; the decoder still needs a
/// memory to attend over, so an empty source becomes a single BOS.
fn effective_src(src: &[u32]) -> Vec<u32> {
    if src.is_empty() {
        vec![BOS]
    } else {
        src.to_vec()
    }
}

fn encode_cached(
    params: &ModelParams,
    src: &[u32],
) -> Result<(Tensor, Vec<EncLayerCache>, NormCache, Vec<u32>)> {
    let cfg = &params.config;
    let src = effective_src(src);
    let mut x = embed(params, &src)?;
    let mut enc_layers = Vec::with_capacity(cfg.n_layers);
    for layer in &params.enc {
        let (xn, norm1) = rms_norm(&x, &layer.ln_attn);
        let (attn_out, attn) = attention(&xn, &xn, &layer.attn, Some(&params.rel_bias), false, cfg);
        x.add_assign(&attn_out);
        let (xn2, norm2) = rms_norm(&x, &layer.ln_ff);
        let (ff_out, ff) = feed_forward(&xn2, &layer.ff);
        x.add_assign(&ff_out);
        enc_layers.push(EncLayerCache {
            norm1,
            attn,
            norm2,
            ff,
        });
    }
    let (enc_out, enc_final) = rms_norm(&x, &params.ln_enc_out);
    Ok((enc_out, enc_layers, enc_final, src))
}

fn decode_cached(
    params: &ModelParams,
    enc_out: &Tensor,
    dec_in: &[u32],
) -> Result<(Tensor, Vec<DecLayerCache>, NormCache, Tensor)> {
    let cfg = &params.config;
    let mut y = embed(params, dec_in)?;
    let mut dec_layers = Vec::with_capacity(cfg.n_layers);
    for layer in &params.dec {
        let (yn, norm1) = rms_norm(&y, &layer.ln_self);
        let (self_out, self_attn) =
            attention(&yn, &yn, &layer.self_attn, Some(&params.rel_bias), true, cfg);
        y.add_assign(&self_out);
        let (yn2, norm2) = rms_norm(&y, &layer.ln_cross);
        let (cross_out, cross_attn) = attention(&yn2, enc_out, &layer.cross_attn, None, false, cfg);
        y.add_assign(&cross_out);
        let (yn3, norm3) = rms_norm(&y, &layer.ln_ff);
        let (ff_out, ff) = feed_forward(&yn3, &layer.ff);
        y.add_assign(&ff_out);
        dec_layers.push(DecLayerCache {
            norm1,
            self_attn,
            norm2,
            cross_attn,
            norm3,
            ff,
        });
    }
    let (dec_out, dec_final) = rms_norm(&y, &params.ln_dec_out);
    let logits = matmul_bt(&dec_out, &params.embedding);
    Ok((logits, dec_layers, dec_final, dec_out))
}

fn forward_cached(params: &ModelParams, src: &[u32], dec_in: &[u32]) -> Result<ForwardCache> {
    if dec_in.is_empty() {
        return Err(Error::ShapeMismatch("empty decoder input".into()));
    }
    let (enc_out, enc_layers, enc_final, src) = encode_cached(params, src)?;
    let (logits, dec_layers, dec_final, dec_out) = decode_cached(params, &enc_out, dec_in)?;
    Ok(ForwardCache {
        src,
        dec_in: dec_in.to_vec(),
        enc_layers,
        enc_final,
        enc_out,
        dec_layers,
        dec_final,
        dec_out,
        logits,
    })
}

/// Encoder output held for repeated decoding against one source.
pub struct EncodedSource {
    memory: Tensor,
}

pub fn encode_source(params: &ModelParams, src: &[u32]) -> Result<EncodedSource> {
    let (memory, _, _, _) = encode_cached(params, src)?;
    Ok(EncodedSource { memory })
}

/// Distribution over the next token given the decoded prefix (BOS implied).
pub fn next_distribution(
    params: &ModelParams,
    enc: &EncodedSource,
    prefix: &[u32],
) -> Result<Vec<f64>> {
    let mut dec_in = Vec::with_capacity(prefix.len() + 1);
    dec_in.push(BOS);
    dec_in.extend_from_slice(prefix);
    let (logits, _, _, _) = decode_cached(params, &enc.memory, &dec_in)?;
    Ok(softmax_vec(logits.row(logits.rows - 1)))
}

/// Decoder logits for one (source, shifted-target) pair: `[|dec_in|, vocab]`.
pub fn forward(params: &ModelParams, src: &[u32], dec_in: &[u32]) -> Result<Tensor> {
    Ok(forward_cached(params, src, dec_in)?.logits)
}

fn backward(params: &ModelParams, cache: &ForwardCache, d_logits: &Tensor, grads: &mut ModelParams) {
    let cfg = &params.config;

    // logits = dec_out · Eᵀ
    let mut dy = matmul(d_logits, &params.embedding);
    grads.embedding.add_assign(&matmul_at(d_logits, &cache.dec_out));

    dy = rms_norm_backward(&cache.dec_final, &params.ln_dec_out, &dy, &mut grads.ln_dec_out);

    let mut d_enc_out = Tensor::zeros(cache.enc_out.rows, cfg.d_model);
    for (li, layer) in params.dec.iter().enumerate().rev() {
        let c = &cache.dec_layers[li];
        let g = &mut grads.dec[li];
        // feed-forward block
        let d_ffn = feed_forward_backward(&c.ff, &layer.ff, &mut g.ff, &dy);
        let dx = rms_norm_backward(&c.norm3, &layer.ln_ff, &d_ffn, &mut g.ln_ff);
        dy.add_assign(&dx);
        // cross-attention block
        let (d_q_in, d_kv) = attention_backward(
            &c.cross_attn,
            &layer.cross_attn,
            &mut g.cross_attn,
            None,
            &dy,
            cfg,
        );
        d_enc_out.add_assign(&d_kv);
        let dx = rms_norm_backward(&c.norm2, &layer.ln_cross, &d_q_in, &mut g.ln_cross);
        dy.add_assign(&dx);
        // causal self-attention block: q and kv share the normed input
        let (d_q, d_kv) = attention_backward(
            &c.self_attn,
            &layer.self_attn,
            &mut g.self_attn,
            Some(&mut grads.rel_bias),
            &dy,
            cfg,
        );
        let mut d_self = d_q;
        d_self.add_assign(&d_kv);
        let dx = rms_norm_backward(&c.norm1, &layer.ln_self, &d_self, &mut g.ln_self);
        dy.add_assign(&dx);
    }
    for (i, &tok) in cache.dec_in.iter().enumerate() {
        let row = dy.row(i);
        let erow = grads.embedding.row_mut(tok as usize);
        for (e, &v) in erow.iter_mut().zip(row) {
            *e += v;
        }
    }

    let mut dx = rms_norm_backward(
        &cache.enc_final,
        &params.ln_enc_out,
        &d_enc_out,
        &mut grads.ln_enc_out,
    );
    for (li, layer) in params.enc.iter().enumerate().rev() {
        let c = &cache.enc_layers[li];
        let g = &mut grads.enc[li];
        let d_ffn = feed_forward_backward(&c.ff, &layer.ff, &mut g.ff, &dx);
        let dn = rms_norm_backward(&c.norm2, &layer.ln_ff, &d_ffn, &mut g.ln_ff);
        dx.add_assign(&dn);
        let (d_q, d_kv) = attention_backward(
            &c.attn,
            &layer.attn,
            &mut g.attn,
            Some(&mut grads.rel_bias),
            &dx,
            cfg,
        );
        let mut d_attn = d_q;
        d_attn.add_assign(&d_kv);
        let dn = rms_norm_backward(&c.norm1, &layer.ln_attn, &d_attn, &mut g.ln_attn);
        dx.add_assign(&dn);
    }
    for (i, &tok) in cache.src.iter().enumerate() {
        let row = dx.row(i);
        let erow = grads.embedding.row_mut(tok as usize);
        for (e, &v) in erow.iter_mut().zip(row) {
            *e += v;
        }
    }
}

/// One training pair, already tokenized. The decoder input is the target
/// shifted right behind BOS; the labels append EOS.
#[derive(Debug, Clone)]
pub struct Pair {
    pub source: Vec<u32>,
    pub target: Vec<u32>,
}

fn row_log_softmax_loss(logits: &Tensor, row: usize, label: u32) -> (f64, Vec<f64>) {
    let r = logits.row(row);
    let max = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for &v in r {
        sum += (v - max).exp();
    }
    let lse = max + sum.ln();
    let loss = lse - r[label as usize];
    let mut grad: Vec<f64> = r.iter().map(|&v| (v - max).exp() / sum).collect();
    grad[label as usize] -= 1.0;
    (loss, grad)
}

/// Mean token-level cross-entropy over the batch plus exact gradients.
/// Examples with an empty target are filtered out of the mean.
pub fn loss_and_grad(params: &ModelParams, batch: &[Pair]) -> Result<(f64, ModelParams)> {
    let mut grads = params.zeros_like();
    let mut total_loss = 0.0;
    let mut total_tokens = 0usize;
    let mut used = 0usize;
    for pair in batch {
        if pair.target.is_empty() {
            continue;
        }
        used += 1;
        let mut dec_in = Vec::with_capacity(pair.target.len() + 1);
        dec_in.push(BOS);
        dec_in.extend_from_slice(&pair.target);
        let mut labels = pair.target.clone();
        labels.push(EOS);

        let cache = forward_cached(params, &pair.source, &dec_in)?;
        let mut d_logits = Tensor::zeros(cache.logits.rows, cache.logits.cols);
        for (t, &label) in labels.iter().enumerate() {
            if label as usize >= params.config.vocab_size {
                return Err(Error::InvalidTokenId(label));
            }
            let (loss, grad) = row_log_softmax_loss(&cache.logits, t, label);
            total_loss += loss;
            d_logits.row_mut(t).copy_from_slice(&grad);
        }
        total_tokens += labels.len();
        backward(params, &cache, &d_logits, &mut grads);
    }
    if used == 0 {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let scale = 1.0 / total_tokens as f64;
    grads.scale_all(scale);
    Ok((total_loss * scale, grads))
}

/// Forward-only batch loss; same filtering and reduction as
/// [`loss_and_grad`].
pub fn loss(params: &ModelParams, batch: &[Pair]) -> Result<f64> {
    let mut total_loss = 0.0;
    let mut total_tokens = 0usize;
    let mut used = 0usize;
    for pair in batch {
        if pair.target.is_empty() {
            continue;
        }
        used += 1;
        let mut dec_in = Vec::with_capacity(pair.target.len() + 1);
        dec_in.push(BOS);
        dec_in.extend_from_slice(&pair.target);
        let mut labels = pair.target.clone();
        labels.push(EOS);
        let cache = forward_cached(params, &pair.source, &dec_in)?;
        for (t, &label) in labels.iter().enumerate() {
            total_loss += row_log_softmax_loss(&cache.logits, t, label).0;
        }
        total_tokens += labels.len();
    }
    if used == 0 {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    Ok(total_loss / total_tokens as f64)
}

fn argmax(row: &[f64]) -> u32 {
    let mut best = 0usize;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best as u32
}

/// Greedy autoregressive decoding until EOS or `max_decode_len`. The
/// encoder runs once; the decoder is recomputed per step.
pub fn decode_greedy(params: &ModelParams, src: &[u32]) -> Result<Vec<u32>> {
    let enc = encode_source(params, src)?;
    let mut out: Vec<u32> = Vec::new();
    for _ in 0..params.config.max_decode_len {
        let dist = next_distribution(params, &enc, &out)?;
        let next = argmax(&dist);
        if next == EOS {
            break;
        }
        out.push(next);
    }
    Ok(out)
}

/// Nucleus-sampled decoding; shares the sampler with the span generators.
pub fn decode_nucleus(
    params: &ModelParams,
    src: &[u32],
    p: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<u32>> {
    let enc = encode_source(params, src)?;
    let mut out: Vec<u32> = Vec::new();
    for _ in 0..params.config.max_decode_len {
        let dist = next_distribution(params, &enc, &out)?;
        let (next, _) = nucleus_sample(&dist, p, rng)?;
        if next == EOS {
            break;
        }
        out.push(next);
    }
    Ok(out)
}

/// Softmax of one logit row as a probability vector.
pub fn softmax_vec(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

#[cfg(test)]
mod tests;
