//! A small text-to-text transformer (encoder-decoder) in plain `f64`
//! arrays with hand-written backpropagation.
//!
//! Architecture: a single embedding matrix shared between both input stacks
//! and the output logit projection (tied weights), plus learned positional
//! embeddings and a rotary twist on self-attention queries/keys; pre-norm
//! blocks (RMSNorm before every sublayer, residual around it); bias-free
//! multi-head attention and ReLU feed-forward sublayers; a final RMSNorm on
//! each stack; an output bias is the model's only bias. Decoding is greedy
//! argmax with ties resolved to the lowest token id. Everything is
//! deterministic given the seed.

use ndarray::{s, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::optimizer::AdamState;
use super::vocab::{Vocab, BOS, EOS};
use super::{Backend, BackendConfig, StepLoss, TrainableBackend};

const NORM_EPS: f64 = 1e-6;

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub(crate) struct AttnWeights {
    wq: Array2<f64>,
    wk: Array2<f64>,
    wv: Array2<f64>,
    wo: Array2<f64>,
}

impl AttnWeights {
    fn init(d: usize, rng: &mut ChaCha8Rng) -> Self {
        let scale = 1.0 / (d as f64).sqrt();
        let mut mat = || uniform(d, d, scale, rng);
        Self {
            wq: mat(),
            wk: mat(),
            wv: mat(),
            wo: mat(),
        }
    }

    fn zeros(d: usize) -> Self {
        Self {
            wq: Array2::zeros((d, d)),
            wk: Array2::zeros((d, d)),
            wv: Array2::zeros((d, d)),
            wo: Array2::zeros((d, d)),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct FfnWeights {
    w1: Array2<f64>,
    w2: Array2<f64>,
}

impl FfnWeights {
    fn init(d: usize, f: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w1: uniform(d, f, 1.0 / (d as f64).sqrt(), rng),
            w2: uniform(f, d, 1.0 / (f as f64).sqrt(), rng),
        }
    }

    fn zeros(d: usize, f: usize) -> Self {
        Self {
            w1: Array2::zeros((d, f)),
            w2: Array2::zeros((f, d)),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct EncLayer {
    ln1: Array1<f64>,
    attn: AttnWeights,
    ln2: Array1<f64>,
    ffn: FfnWeights,
}

#[derive(Debug, Clone)]
pub(crate) struct DecLayer {
    ln1: Array1<f64>,
    self_attn: AttnWeights,
    ln2: Array1<f64>,
    cross_attn: AttnWeights,
    ln3: Array1<f64>,
    ffn: FfnWeights,
}

#[derive(Debug, Clone)]
pub(crate) struct Params {
    embed: Array2<f64>,
    pos_enc: Array2<f64>,
    pos_dec: Array2<f64>,
    enc: Vec<EncLayer>,
    enc_norm: Array1<f64>,
    dec: Vec<DecLayer>,
    dec_norm: Array1<f64>,
    b_out: Array1<f64>,
}

fn uniform(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-scale..scale))
}

impl Params {
    fn init(cfg: &BackendConfig, vocab_size: usize, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.hidden_size;
        let f = cfg.ffn_size;
        Self {
            embed: uniform(vocab_size, d, 0.1, rng),
            pos_enc: uniform(cfg.max_input_len, d, 0.1, rng),
            pos_dec: uniform(cfg.max_target_len, d, 0.1, rng),
            enc: (0..cfg.layers)
                .map(|_| EncLayer {
                    ln1: Array1::ones(d),
                    attn: AttnWeights::init(d, rng),
                    ln2: Array1::ones(d),
                    ffn: FfnWeights::init(d, f, rng),
                })
                .collect(),
            enc_norm: Array1::ones(d),
            dec: (0..cfg.layers)
                .map(|_| DecLayer {
                    ln1: Array1::ones(d),
                    self_attn: AttnWeights::init(d, rng),
                    ln2: Array1::ones(d),
                    cross_attn: AttnWeights::init(d, rng),
                    ln3: Array1::ones(d),
                    ffn: FfnWeights::init(d, f, rng),
                })
                .collect(),
            dec_norm: Array1::ones(d),
            b_out: Array1::zeros(vocab_size),
        }
    }

    fn zeros(cfg: &BackendConfig, vocab_size: usize) -> Self {
        let d = cfg.hidden_size;
        let f = cfg.ffn_size;
        Self {
            embed: Array2::zeros((vocab_size, d)),
            pos_enc: Array2::zeros((cfg.max_input_len, d)),
            pos_dec: Array2::zeros((cfg.max_target_len, d)),
            enc: (0..cfg.layers)
                .map(|_| EncLayer {
                    ln1: Array1::zeros(d),
                    attn: AttnWeights::zeros(d),
                    ln2: Array1::zeros(d),
                    ffn: FfnWeights::zeros(d, f),
                })
                .collect(),
            enc_norm: Array1::zeros(d),
            dec: (0..cfg.layers)
                .map(|_| DecLayer {
                    ln1: Array1::zeros(d),
                    self_attn: AttnWeights::zeros(d),
                    ln2: Array1::zeros(d),
                    cross_attn: AttnWeights::zeros(d),
                    ln3: Array1::zeros(d),
                    ffn: FfnWeights::zeros(d, f),
                })
                .collect(),
            dec_norm: Array1::zeros(d),
            b_out: Array1::zeros(vocab_size),
        }
    }

    /// All tensors in a fixed traversal order, as contiguous slices.
    fn tensors(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = vec![
            self.embed.as_slice().unwrap(),
            self.pos_enc.as_slice().unwrap(),
            self.pos_dec.as_slice().unwrap(),
        ];
        for layer in &self.enc {
            v.push(layer.ln1.as_slice().unwrap());
            v.push(layer.attn.wq.as_slice().unwrap());
            v.push(layer.attn.wk.as_slice().unwrap());
            v.push(layer.attn.wv.as_slice().unwrap());
            v.push(layer.attn.wo.as_slice().unwrap());
            v.push(layer.ln2.as_slice().unwrap());
            v.push(layer.ffn.w1.as_slice().unwrap());
            v.push(layer.ffn.w2.as_slice().unwrap());
        }
        v.push(self.enc_norm.as_slice().unwrap());
        for layer in &self.dec {
            v.push(layer.ln1.as_slice().unwrap());
            v.push(layer.self_attn.wq.as_slice().unwrap());
            v.push(layer.self_attn.wk.as_slice().unwrap());
            v.push(layer.self_attn.wv.as_slice().unwrap());
            v.push(layer.self_attn.wo.as_slice().unwrap());
            v.push(layer.ln2.as_slice().unwrap());
            v.push(layer.cross_attn.wq.as_slice().unwrap());
            v.push(layer.cross_attn.wk.as_slice().unwrap());
            v.push(layer.cross_attn.wv.as_slice().unwrap());
            v.push(layer.cross_attn.wo.as_slice().unwrap());
            v.push(layer.ln3.as_slice().unwrap());
            v.push(layer.ffn.w1.as_slice().unwrap());
            v.push(layer.ffn.w2.as_slice().unwrap());
        }
        v.push(self.dec_norm.as_slice().unwrap());
        v.push(self.b_out.as_slice().unwrap());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = vec![
            self.embed.as_slice_mut().unwrap(),
            self.pos_enc.as_slice_mut().unwrap(),
            self.pos_dec.as_slice_mut().unwrap(),
        ];
        for layer in &mut self.enc {
            v.push(layer.ln1.as_slice_mut().unwrap());
            v.push(layer.attn.wq.as_slice_mut().unwrap());
            v.push(layer.attn.wk.as_slice_mut().unwrap());
            v.push(layer.attn.wv.as_slice_mut().unwrap());
            v.push(layer.attn.wo.as_slice_mut().unwrap());
            v.push(layer.ln2.as_slice_mut().unwrap());
            v.push(layer.ffn.w1.as_slice_mut().unwrap());
            v.push(layer.ffn.w2.as_slice_mut().unwrap());
        }
        v.push(self.enc_norm.as_slice_mut().unwrap());
        for layer in &mut self.dec {
            v.push(layer.ln1.as_slice_mut().unwrap());
            v.push(layer.self_attn.wq.as_slice_mut().unwrap());
            v.push(layer.self_attn.wk.as_slice_mut().unwrap());
            v.push(layer.self_attn.wv.as_slice_mut().unwrap());
            v.push(layer.self_attn.wo.as_slice_mut().unwrap());
            v.push(layer.ln2.as_slice_mut().unwrap());
            v.push(layer.cross_attn.wq.as_slice_mut().unwrap());
            v.push(layer.cross_attn.wk.as_slice_mut().unwrap());
            v.push(layer.cross_attn.wv.as_slice_mut().unwrap());
            v.push(layer.cross_attn.wo.as_slice_mut().unwrap());
            v.push(layer.ln3.as_slice_mut().unwrap());
            v.push(layer.ffn.w1.as_slice_mut().unwrap());
            v.push(layer.ffn.w2.as_slice_mut().unwrap());
        }
        v.push(self.dec_norm.as_slice_mut().unwrap());
        v.push(self.b_out.as_slice_mut().unwrap());
        v
    }

    pub(crate) fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub(crate) fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.n_params());
        for tensor in self.tensors() {
            flat.extend_from_slice(tensor);
        }
        flat
    }

    pub(crate) fn assign_from_flat(&mut self, flat: &[f64]) {
        let mut cursor = 0;
        for tensor in self.tensors_mut() {
            tensor.copy_from_slice(&flat[cursor..cursor + tensor.len()]);
            cursor += tensor.len();
        }
        assert_eq!(cursor, flat.len(), "flat parameter length mismatch");
    }

    /// `self += factor * other`, tensor by tensor.
    fn add_scaled(&mut self, other: &Params, factor: f64) {
        let theirs = other.tensors();
        for (mine, other) in self.tensors_mut().into_iter().zip(theirs) {
            for (a, b) in mine.iter_mut().zip(other) {
                *a += factor * b;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Forward / backward building blocks
// ---------------------------------------------------------------------------

struct NormCache {
    x: Array2<f64>,
    inv_rms: Array1<f64>,
}

fn rmsnorm_fwd(x: &Array2<f64>, gain: &Array1<f64>) -> (Array2<f64>, NormCache) {
    let d = x.ncols() as f64;
    let inv_rms = Array1::from_iter(
        x.rows()
            .into_iter()
            .map(|row| 1.0 / (row.iter().map(|v| v * v).sum::<f64>() / d + NORM_EPS).sqrt()),
    );
    let mut out = x.clone();
    for (mut row, &inv) in out.rows_mut().into_iter().zip(inv_rms.iter()) {
        for (value, g) in row.iter_mut().zip(gain.iter()) {
            *value *= inv * g;
        }
    }
    (
        out,
        NormCache {
            x: x.clone(),
            inv_rms,
        },
    )
}

fn rmsnorm_bwd(
    cache: &NormCache,
    gain: &Array1<f64>,
    dout: &Array2<f64>,
    dgain: &mut Array1<f64>,
) -> Array2<f64> {
    let d = cache.x.ncols() as f64;
    let mut dx = Array2::zeros(cache.x.dim());
    for i in 0..cache.x.nrows() {
        let inv = cache.inv_rms[i];
        let x_row = cache.x.row(i);
        let dy_row = dout.row(i);
        let mut dot = 0.0;
        for j in 0..x_row.len() {
            let gdy = dy_row[j] * gain[j];
            dot += gdy * x_row[j];
            dgain[j] += dy_row[j] * x_row[j] * inv;
        }
        let coeff = dot * inv * inv * inv / d;
        for j in 0..x_row.len() {
            dx[[i, j]] = dy_row[j] * gain[j] * inv - x_row[j] * coeff;
        }
    }
    dx
}

struct AttnCache {
    norm: NormCache,
    xn: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Vec<Array2<f64>>,
    ctx: Array2<f64>,
}

/// Base for rotary position angles in self-attention.
const ROPE_BASE: f64 = 10000.0;

/// Rotary position map over one head's column block: the pair
/// (2m, 2m+1) of row `pos` is rotated by pos · base^(−2m/dh). With
/// `invert` the transpose map is applied instead (rotation by the negative
/// angle), which pulls gradients back through the twist.
fn rope_block(x: &mut Array2<f64>, col0: usize, dh: usize, invert: bool) {
    for (pos, mut row) in x.rows_mut().into_iter().enumerate() {
        for m in 0..dh / 2 {
            let angle = pos as f64 * ROPE_BASE.powf(-(2.0 * m as f64) / dh as f64);
            let (sin, cos) = angle.sin_cos();
            let a = row[col0 + 2 * m];
            let b = row[col0 + 2 * m + 1];
            let (ra, rb) = if invert {
                (a * cos + b * sin, b * cos - a * sin)
            } else {
                (a * cos - b * sin, a * sin + b * cos)
            };
            row[col0 + 2 * m] = ra;
            row[col0 + 2 * m + 1] = rb;
        }
    }
}

fn rope_all_heads(x: &mut Array2<f64>, n_heads: usize, invert: bool) {
    let dh = x.ncols() / n_heads;
    for h in 0..n_heads {
        rope_block(x, h * dh, dh, invert);
    }
}

/// Pre-norm residual attention sublayer. `memory` switches between
/// self-attention (None: keys/values from the normed stream itself) and
/// cross-attention (Some: keys/values from the already-normed memory).
/// With `rope`, queries and keys get a rotary position twist before the
/// score product, making attention patterns depend on relative offsets —
/// self-attention only; cross-attention stays purely content-addressed.
fn attn_fwd(
    x: &Array2<f64>,
    memory: Option<&Array2<f64>>,
    w: &AttnWeights,
    gain: &Array1<f64>,
    n_heads: usize,
    causal: bool,
    rope: bool,
) -> (Array2<f64>, AttnCache) {
    let (xn, norm) = rmsnorm_fwd(x, gain);
    let mem = memory.unwrap_or(&xn);
    let mut q = xn.dot(&w.wq);
    let mut k = mem.dot(&w.wk);
    let v = mem.dot(&w.wv);
    if rope {
        rope_all_heads(&mut q, n_heads, false);
        rope_all_heads(&mut k, n_heads, false);
    }
    let q = q;
    let k = k;
    let d = q.ncols();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let (lq, lk) = (q.nrows(), k.nrows());
    let mut ctx = Array2::zeros((lq, d));
    let mut attn = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let qh = q.slice(cols).to_owned();
        let kh = k.slice(cols).to_owned();
        let vh = v.slice(cols).to_owned();
        let mut scores = qh.dot(&kh.t()) * scale;
        if causal {
            for i in 0..lq {
                for j in (i + 1)..lk {
                    scores[[i, j]] = f64::NEG_INFINITY;
                }
            }
        }
        softmax_rows(&mut scores);
        ctx.slice_mut(cols).assign(&scores.dot(&vh));
        attn.push(scores);
    }
    let out = ctx.dot(&w.wo);
    (
        x + &out,
        AttnCache {
            norm,
            xn,
            q,
            k,
            v,
            attn,
            ctx,
        },
    )
}

/// Backward of [`attn_fwd`]. Returns the gradient for the stream input and,
/// for cross-attention, the gradient flowing into the memory. The cache
/// holds post-twist queries and keys, so with `rope` the gradients are
/// pulled back through the inverse rotation before hitting the projections.
#[allow(clippy::too_many_arguments)]
fn attn_bwd(
    cache: &AttnCache,
    memory: Option<&Array2<f64>>,
    w: &AttnWeights,
    gain: &Array1<f64>,
    n_heads: usize,
    rope: bool,
    dout: &Array2<f64>,
    gw: &mut AttnWeights,
    dgain: &mut Array1<f64>,
) -> (Array2<f64>, Option<Array2<f64>>) {
    let d = cache.q.ncols();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    gw.wo += &cache.ctx.t().dot(dout);
    let dctx = dout.dot(&w.wo.t());
    let mut dq = Array2::zeros(cache.q.dim());
    let mut dk = Array2::zeros(cache.k.dim());
    let mut dv = Array2::zeros(cache.v.dim());
    for h in 0..n_heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let a = &cache.attn[h];
        let dctx_h = dctx.slice(cols).to_owned();
        let vh = cache.v.slice(cols).to_owned();
        let da = dctx_h.dot(&vh.t());
        dv.slice_mut(cols).assign(&a.t().dot(&dctx_h));
        // softmax backward, row-wise: ds = a ⊙ (da − Σ_j da⊙a)
        let rowdot = (&da * a).sum_axis(Axis(1));
        let ds = (&da - &rowdot.insert_axis(Axis(1))) * a;
        let qh = cache.q.slice(cols).to_owned();
        let kh = cache.k.slice(cols).to_owned();
        dq.slice_mut(cols).assign(&(ds.dot(&kh) * scale));
        dk.slice_mut(cols).assign(&(ds.t().dot(&qh) * scale));
    }
    if rope {
        rope_all_heads(&mut dq, n_heads, true);
        rope_all_heads(&mut dk, n_heads, true);
    }
    gw.wq += &cache.xn.t().dot(&dq);
    let mut dxn = dq.dot(&w.wq.t());
    let dmem = match memory {
        None => {
            gw.wk += &cache.xn.t().dot(&dk);
            gw.wv += &cache.xn.t().dot(&dv);
            dxn += &dk.dot(&w.wk.t());
            dxn += &dv.dot(&w.wv.t());
            None
        }
        Some(mem) => {
            gw.wk += &mem.t().dot(&dk);
            gw.wv += &mem.t().dot(&dv);
            Some(dk.dot(&w.wk.t()) + dv.dot(&w.wv.t()))
        }
    };
    let dx = rmsnorm_bwd(&cache.norm, gain, &dxn, dgain);
    (dout + &dx, dmem)
}

fn softmax_rows(scores: &mut Array2<f64>) {
    for mut row in scores.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for value in row.iter_mut() {
            *value = (*value - max).exp();
            sum += *value;
        }
        for value in row.iter_mut() {
            *value /= sum;
        }
    }
}

struct FfnCache {
    norm: NormCache,
    xn: Array2<f64>,
    z: Array2<f64>,
    h: Array2<f64>,
}

fn ffn_fwd(x: &Array2<f64>, w: &FfnWeights, gain: &Array1<f64>) -> (Array2<f64>, FfnCache) {
    let (xn, norm) = rmsnorm_fwd(x, gain);
    let z = xn.dot(&w.w1);
    let h = z.mapv(|v| v.max(0.0));
    let out = h.dot(&w.w2);
    (x + &out, FfnCache { norm, xn, z, h })
}

fn ffn_bwd(
    cache: &FfnCache,
    w: &FfnWeights,
    gain: &Array1<f64>,
    dout: &Array2<f64>,
    gw: &mut FfnWeights,
    dgain: &mut Array1<f64>,
) -> Array2<f64> {
    gw.w2 += &cache.h.t().dot(dout);
    let dh = dout.dot(&w.w2.t());
    let dz = &dh * &cache.z.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    gw.w1 += &cache.xn.t().dot(&dz);
    let dxn = dz.dot(&w.w1.t());
    let dx = rmsnorm_bwd(&cache.norm, gain, &dxn, dgain);
    dout + &dx
}

struct EncoderCache {
    layers: Vec<(AttnCache, FfnCache)>,
    final_norm: NormCache,
    output: Array2<f64>,
}

struct DecoderCache {
    layers: Vec<(AttnCache, AttnCache, FfnCache)>,
    final_norm: NormCache,
    normed: Array2<f64>,
}

fn cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    let t = labels.len() as f64;
    let mut dlogits = Array2::zeros(logits.dim());
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[label];
        for j in 0..row.len() {
            dlogits[[i, j]] = (row[j] - lse).exp() / t;
        }
        dlogits[[i, label]] -= 1.0 / t;
    }
    (total / t, dlogits)
}

fn argmax_lowest(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (i, &value) in row.iter().enumerate() {
        if value > best_value {
            best = i;
            best_value = value;
        }
    }
    best
}

// ---------------------------------------------------------------------------
// The model
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Seq2SeqModel {
    config: BackendConfig,
    vocab: Vocab,
    params: Params,
    optimizer: AdamState,
}

impl Seq2SeqModel {
    pub fn new(config: BackendConfig, vocab: Vocab, seed: u64) -> Self {
        assert!(
            config.hidden_size % config.heads == 0,
            "hidden size must divide evenly into heads"
        );
        assert!(
            (config.hidden_size / config.heads) % 2 == 0,
            "head dimension must be even for the rotary position twist"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = Params::init(&config, vocab.size(), &mut rng);
        let n = params.n_params();
        Self {
            config,
            vocab,
            params,
            optimizer: AdamState::new(n, super::DEFAULT_LEARNING_RATE),
        }
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn n_params(&self) -> usize {
        self.params.n_params()
    }

    pub fn flatten_params(&self) -> Vec<f64> {
        self.params.flatten()
    }

    pub fn assign_params(&mut self, flat: &[f64]) {
        self.params.assign_from_flat(flat);
    }

    /// Zeroes every parameter. With all-zero weights the logits are uniform,
    /// so the per-token loss is exactly ln(vocab size) — handy for tests.
    pub fn zero_params(&mut self) {
        let flat = vec![0.0; self.n_params()];
        self.params.assign_from_flat(&flat);
    }

    fn encode_source(&self, input_text: &str) -> Vec<usize> {
        let mut ids = self.vocab.encode(input_text);
        ids.push(EOS);
        if ids.len() > self.config.max_input_len {
            ids.drain(..ids.len() - self.config.max_input_len);
        }
        ids
    }

    /// Decoder input (BOS-prefixed) and labels (EOS-terminated).
    fn encode_target(&self, target_text: &str) -> (Vec<usize>, Vec<usize>) {
        let mut ids = self.vocab.encode(target_text);
        ids.truncate(self.config.max_target_len - 1);
        let mut dec_in = Vec::with_capacity(ids.len() + 1);
        dec_in.push(BOS);
        dec_in.extend_from_slice(&ids);
        let mut labels = ids;
        labels.push(EOS);
        (dec_in, labels)
    }

    fn embed(&self, ids: &[usize], pos: &Array2<f64>) -> Array2<f64> {
        let d = self.config.hidden_size;
        let mut x = Array2::zeros((ids.len(), d));
        for (row, &id) in ids.iter().enumerate() {
            for j in 0..d {
                x[[row, j]] = self.params.embed[[id, j]] + pos[[row, j]];
            }
        }
        x
    }

    fn encode(&self, src: &[usize]) -> EncoderCache {
        let mut x = self.embed(src, &self.params.pos_enc);
        let mut layers = Vec::with_capacity(self.params.enc.len());
        for layer in &self.params.enc {
            let (x1, ac) =
                attn_fwd(&x, None, &layer.attn, &layer.ln1, self.config.heads, false, true);
            let (x2, fc) = ffn_fwd(&x1, &layer.ffn, &layer.ln2);
            x = x2;
            layers.push((ac, fc));
        }
        let (output, final_norm) = rmsnorm_fwd(&x, &self.params.enc_norm);
        EncoderCache {
            layers,
            final_norm,
            output,
        }
    }

    fn decode(&self, dec_in: &[usize], memory: &Array2<f64>) -> (Array2<f64>, DecoderCache) {
        let mut y = self.embed(dec_in, &self.params.pos_dec);
        let mut layers = Vec::with_capacity(self.params.dec.len());
        for layer in &self.params.dec {
            let (y1, sc) = attn_fwd(
                &y,
                None,
                &layer.self_attn,
                &layer.ln1,
                self.config.heads,
                true,
                true,
            );
            let (y2, cc) = attn_fwd(
                &y1,
                Some(memory),
                &layer.cross_attn,
                &layer.ln2,
                self.config.heads,
                false,
                false,
            );
            let (y3, fc) = ffn_fwd(&y2, &layer.ffn, &layer.ln3);
            y = y3;
            layers.push((sc, cc, fc));
        }
        let (normed, final_norm) = rmsnorm_fwd(&y, &self.params.dec_norm);
        let logits = normed.dot(&self.params.embed.t()) + &self.params.b_out;
        (
            logits,
            DecoderCache {
                layers,
                final_norm,
                normed,
            },
        )
    }

    pub(crate) fn loss_for_ids(&self, src: &[usize], dec_in: &[usize], labels: &[usize]) -> f64 {
        let enc = self.encode(src);
        let (logits, _) = self.decode(dec_in, &enc.output);
        cross_entropy(&logits, labels).0
    }

    /// Loss and full parameter gradient for one example.
    pub(crate) fn example_grad(
        &self,
        src: &[usize],
        dec_in: &[usize],
        labels: &[usize],
    ) -> (f64, Params) {
        let enc = self.encode(src);
        let (logits, dec) = self.decode(dec_in, &enc.output);
        let (loss, dlogits) = cross_entropy(&logits, labels);
        let mut grads = Params::zeros(&self.config, self.vocab.size());

        // output projection (shares the embedding matrix)
        grads.b_out += &dlogits.sum_axis(Axis(0));
        grads.embed += &dlogits.t().dot(&dec.normed);
        let dnormed = dlogits.dot(&self.params.embed);
        let mut dy = rmsnorm_bwd(
            &dec.final_norm,
            &self.params.dec_norm,
            &dnormed,
            &mut grads.dec_norm,
        );

        // decoder stack, reversed
        let mut dmem = Array2::zeros(enc.output.dim());
        for (layer, (glayer, caches)) in self
            .params
            .dec
            .iter()
            .zip(grads.dec.iter_mut().zip(dec.layers.iter()))
            .rev()
        {
            let (sc, cc, fc) = caches;
            dy = ffn_bwd(fc, &layer.ffn, &layer.ln3, &dy, &mut glayer.ffn, &mut glayer.ln3);
            let (dy2, dmem_layer) = attn_bwd(
                cc,
                Some(&enc.output),
                &layer.cross_attn,
                &layer.ln2,
                self.config.heads,
                false,
                &dy,
                &mut glayer.cross_attn,
                &mut glayer.ln2,
            );
            dmem += &dmem_layer.expect("cross attention returns memory grad");
            let (dy3, _) = attn_bwd(
                sc,
                None,
                &layer.self_attn,
                &layer.ln1,
                self.config.heads,
                true,
                &dy2,
                &mut glayer.self_attn,
                &mut glayer.ln1,
            );
            dy = dy3;
        }
        for (pos, &id) in dec_in.iter().enumerate() {
            let mut embed_row = grads.embed.row_mut(id);
            embed_row += &dy.row(pos);
            let mut pos_row = grads.pos_dec.row_mut(pos);
            pos_row += &dy.row(pos);
        }

        // encoder stack, reversed, fed by the accumulated memory gradient
        let mut dx = rmsnorm_bwd(
            &enc.final_norm,
            &self.params.enc_norm,
            &dmem,
            &mut grads.enc_norm,
        );
        for (layer, (glayer, caches)) in self
            .params
            .enc
            .iter()
            .zip(grads.enc.iter_mut().zip(enc.layers.iter()))
            .rev()
        {
            let (ac, fc) = caches;
            dx = ffn_bwd(fc, &layer.ffn, &layer.ln2, &dx, &mut glayer.ffn, &mut glayer.ln2);
            let (dx2, _) = attn_bwd(
                ac,
                None,
                &layer.attn,
                &layer.ln1,
                self.config.heads,
                true,
                &dx,
                &mut glayer.attn,
                &mut glayer.ln1,
            );
            dx = dx2;
        }
        for (pos, &id) in src.iter().enumerate() {
            let mut embed_row = grads.embed.row_mut(id);
            embed_row += &dx.row(pos);
            let mut pos_row = grads.pos_enc.row_mut(pos);
            pos_row += &dx.row(pos);
        }

        (loss, grads)
    }

    fn generate_ids(&self, src: &[usize]) -> Vec<usize> {
        let enc = self.encode(src);
        let mut out = vec![BOS];
        while out.len() < self.config.max_target_len {
            let (logits, _) = self.decode(&out, &enc.output);
            let next = argmax_lowest(logits.row(logits.nrows() - 1));
            if next == EOS {
                break;
            }
            out.push(next);
        }
        out.drain(..1);
        out
    }

    pub(crate) fn prepare(&self, input: &str, target: &str) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
        let src = self.encode_source(input);
        let (dec_in, labels) = self.encode_target(target);
        (src, dec_in, labels)
    }
}

impl Backend for Seq2SeqModel {
    fn generate(&self, input_text: &str) -> String {
        let src = self.encode_source(input_text);
        self.vocab.decode(&self.generate_ids(&src))
    }
}

impl TrainableBackend for Seq2SeqModel {
    fn example_nll(&self, input_text: &str, target_text: &str) -> f64 {
        let (src, dec_in, labels) = self.prepare(input_text, target_text);
        self.loss_for_ids(&src, &dec_in, &labels)
    }

    fn set_learning_rate(&mut self, learning_rate: f64) {
        self.optimizer.set_learning_rate(learning_rate);
    }

    fn train_batch(
        &mut self,
        main: &[(&str, &str)],
        aux: &[(&str, &str)],
        aux_weight: f64,
    ) -> StepLoss {
        use rayon::prelude::*;
        let prepared: Vec<(Vec<usize>, Vec<usize>, Vec<usize>, bool)> = main
            .iter()
            .map(|(i, t)| (i, t, false))
            .chain(aux.iter().map(|(i, t)| (i, t, true)))
            .map(|(input, target, is_aux)| {
                let (src, dec_in, labels) = self.prepare(input, target);
                (src, dec_in, labels, is_aux)
            })
            .collect();
        // per-example gradients in parallel; reduction stays in input order
        // so results do not depend on thread scheduling
        let results: Vec<(f64, Params, bool)> = prepared
            .par_iter()
            .map(|(src, dec_in, labels, is_aux)| {
                let (loss, grads) = self.example_grad(src, dec_in, labels);
                (loss, grads, *is_aux)
            })
            .collect();
        let n_main = main.len().max(1) as f64;
        let n_aux = aux.len().max(1) as f64;
        let mut l_belief = 0.0;
        let mut l_aux = 0.0;
        let mut total_grads = Params::zeros(&self.config, self.vocab.size());
        for (loss, grads, is_aux) in &results {
            if *is_aux {
                l_aux += loss / n_aux;
                total_grads.add_scaled(grads, aux_weight / n_aux);
            } else {
                l_belief += loss / n_main;
                total_grads.add_scaled(grads, 1.0 / n_main);
            }
        }
        let mut theta = self.params.flatten();
        self.optimizer.step(&mut theta, &total_grads.flatten());
        self.params.assign_from_flat(&theta);
        StepLoss {
            belief: l_belief,
            aux: l_aux,
            aux_weight,
            total: super::joint_loss(l_belief, l_aux, aux_weight),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> BackendConfig {
        BackendConfig {
            layers: 1,
            hidden_size: 16,
            heads: 2,
            ffn_size: 32,
            max_input_len: 24,
            max_target_len: 8,
        }
    }

    fn tiny_model(extra: &[&str]) -> Seq2SeqModel {
        let mut texts = vec!["the hotel area should be east", "east", "not mentioned"];
        texts.extend_from_slice(extra);
        let vocab = Vocab::build(texts.iter().copied());
        Seq2SeqModel::new(tiny_config(), vocab, 7)
    }

    #[test]
    fn zeroed_params_give_uniform_nll() {
        let mut model = tiny_model(&[]);
        model.zero_params();
        let expected = (model.vocab().size() as f64).ln();
        let nll = model.example_nll("the hotel area should be east", "east");
        assert!((nll - expected).abs() < 1e-12, "nll {nll} vs ln V {expected}");
        // independent of the target length
        let nll2 = model.example_nll("the hotel area", "not mentioned");
        assert!((nll2 - expected).abs() < 1e-12);
    }

    #[test]
    fn flatten_assign_round_trip() {
        let mut model = tiny_model(&[]);
        let flat = model.flatten_params();
        assert_eq!(flat.len(), model.n_params());
        let mut perturbed = flat.clone();
        for value in perturbed.iter_mut() {
            *value += 0.5;
        }
        model.assign_params(&perturbed);
        let back = model.flatten_params();
        assert_eq!(back, perturbed);
    }

    #[test]
    fn overfits_one_example_to_exact_decode() {
        let mut model = tiny_model(&[]);
        model.set_learning_rate(5e-3);
        let input = "the hotel area should be east";
        let target = "east";
        for _ in 0..400 {
            model.train_batch(&[(input, target)], &[], 0.7);
        }
        let nll = model.example_nll(input, target);
        assert!(nll < 0.01, "nll after overfitting: {nll}");
        assert_eq!(model.generate(input), target);
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let mut model = tiny_model(&["west belief is none"]);
            for _ in 0..5 {
                model.train_batch(
                    &[("the hotel area should be east", "east")],
                    &[("west belief is none", "not mentioned")],
                    0.7,
                );
            }
            model.flatten_params()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn generation_is_deterministic_and_tie_breaks_low() {
        let mut model = tiny_model(&[]);
        model.zero_params();
        // uniform logits: every step picks the lowest id, which is <bos>=0;
        // generation then runs to the length cap without emitting <eos>
        let text = model.generate("the hotel area");
        assert_eq!(text, "");
        let model = tiny_model(&[]);
        assert_eq!(model.generate("the hotel area"), model.generate("the hotel area"));
    }

    #[test]
    fn truncation_respects_length_limits() {
        let model = tiny_model(&[]);
        let long_input = "east ".repeat(100);
        let src = model.encode_source(&long_input);
        assert_eq!(src.len(), model.config().max_input_len);
        let (dec_in, labels) = model.encode_target(&"east ".repeat(50));
        assert_eq!(dec_in.len(), model.config().max_target_len);
        assert_eq!(labels.len(), model.config().max_target_len);
        assert_eq!(labels[labels.len() - 1], EOS);
    }

    #[test]
    fn batch_loss_components_follow_the_identity() {
        let mut model = tiny_model(&["west belief is none"]);
        let step = model.train_batch(
            &[("the hotel area should be east", "east")],
            &[("west belief is none", "not mentioned")],
            0.7,
        );
        assert!((step.total - (step.belief + 0.7 * step.aux)).abs() < 1e-12);
        assert!(step.belief > 0.0);
        assert!(step.aux > 0.0);
    }
}
