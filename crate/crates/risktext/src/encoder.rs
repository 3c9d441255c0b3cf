//! Vocabulary construction and a small trainable text encoder.
//!
//! The encoder is a from-scratch single-head transformer: token plus
//! position embeddings, `L` post-norm blocks (self-attention, feed-forward
//! with GELU, residuals, layer norm), token-mean pooling into a passage
//! embedding, and a masked-language-model head. Forward passes cache the
//! intermediates needed by the hand-written backward passes; everything
//! runs in f64 so analytic gradients can be checked against central finite
//! differences.

use std::collections::HashMap;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::{Passage, ProcessedUser, MASK_TOKEN, PERSON_TOKEN, URL_TOKEN};
use crate::seed::rng_from;

pub const PAD_TOKEN: &str = "_PAD_";
pub const UNK_TOKEN: &str = "_UNK_";

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const MASK_ID: usize = 2;
pub const PERSON_ID: usize = 3;
pub const URL_ID: usize = 4;

const RESERVED: [&str; 5] = [PAD_TOKEN, UNK_TOKEN, MASK_TOKEN, PERSON_TOKEN, URL_TOKEN];

const LN_EPS: f64 = 1e-12;

/// A passage or user embedding of dimension `d`.
pub type EmbeddingVector = Array1<f64>;

/// Token-to-id mapping with fixed low ids for the reserved tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Vocabulary {
        let token_to_id = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            id_to_token: tokens,
            token_to_id,
        }
    }

    /// Rebuilds a vocabulary from an id-ordered token list (checkpoints).
    pub fn from_id_ordered(tokens: Vec<String>) -> Result<Vocabulary> {
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::Validation(
                "vocabulary must start with the reserved tokens".into(),
            ));
        }
        Ok(Vocabulary::from_tokens(tokens))
    }

    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    /// Id for a token, falling back to `_UNK_`.
    pub fn lookup(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.id_to_token[id]
    }

    /// Tokens in id order.
    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }
}

/// Builds a vocabulary over a preprocessed corpus. Tokens with frequency
/// at least `min_freq` get ids after the reserved block, ordered by
/// descending frequency (ties lexicographic); everything else resolves to
/// `_UNK_` at lookup time.
pub fn build_vocabulary(corpus: &[ProcessedUser], min_freq: usize) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::Validation("cannot build a vocabulary from an empty corpus".into()));
    }
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for user in corpus {
        for passage in &user.passages {
            for token in passage.tokens() {
                *freq.entry(token).or_insert(0) += 1;
            }
        }
    }
    let mut kept: Vec<(&str, usize)> = freq
        .into_iter()
        .filter(|(t, c)| *c >= min_freq && !RESERVED.contains(t))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let mut tokens: Vec<String> = RESERVED.iter().map(|t| t.to_string()).collect();
    tokens.extend(kept.into_iter().map(|(t, _)| t.to_string()));
    Ok(Vocabulary::from_tokens(tokens))
}

/// Architecture sizes, fixed at construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDims {
    pub vocab_size: usize,
    pub dim: usize,
    pub layers: usize,
    pub max_len: usize,
}

impl EncoderDims {
    pub const DEFAULT_DIM: usize = 64;
    pub const DEFAULT_LAYERS: usize = 2;
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedForwardParams {
    pub w1: Array2<f64>,
    pub w2: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub attn: AttentionParams,
    pub ln1: LayerNormParams,
    pub ff: FeedForwardParams,
    pub ln2: LayerNormParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlmHead {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// All trainable encoder parameters. The same structure doubles as the
/// gradient accumulator (see [`EncoderParams::zeros_like`]).
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub dims: EncoderDims,
    pub token_embed: Array2<f64>,
    pub pos_embed: Array2<f64>,
    pub blocks: Vec<BlockParams>,
    pub mlm_head: MlmHead,
}

fn normal_sample(rng: &mut rand_chacha::ChaCha8Rng, std: f64) -> f64 {
    // Box-Muller; u1 in (0, 1] avoids ln(0).
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    std * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn uniform_matrix(rng: &mut rand_chacha::ChaCha8Rng, rows: usize, cols: usize, a: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-a..a))
}

fn normal_matrix(rng: &mut rand_chacha::ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| normal_sample(rng, std))
}

impl EncoderParams {
    /// Seeded initialization: uniform [-0.05, 0.05] embeddings, normal
    /// (std 0.02) weight matrices, unit layer-norm scales, zero biases.
    pub fn init(dims: EncoderDims, seed: u64) -> EncoderParams {
        let mut rng = rng_from(seed);
        let d = dims.dim;
        let token_embed = uniform_matrix(&mut rng, dims.vocab_size, d, 0.05);
        let pos_embed = uniform_matrix(&mut rng, dims.max_len, d, 0.05);
        let blocks = (0..dims.layers)
            .map(|_| BlockParams {
                attn: AttentionParams {
                    wq: normal_matrix(&mut rng, d, d, 0.02),
                    wk: normal_matrix(&mut rng, d, d, 0.02),
                    wv: normal_matrix(&mut rng, d, d, 0.02),
                    wo: normal_matrix(&mut rng, d, d, 0.02),
                },
                ln1: LayerNormParams {
                    gamma: Array1::ones(d),
                    beta: Array1::zeros(d),
                },
                ff: FeedForwardParams {
                    w1: normal_matrix(&mut rng, d, 4 * d, 0.02),
                    w2: normal_matrix(&mut rng, 4 * d, d, 0.02),
                },
                ln2: LayerNormParams {
                    gamma: Array1::ones(d),
                    beta: Array1::zeros(d),
                },
            })
            .collect();
        let mlm_head = MlmHead {
            weight: normal_matrix(&mut rng, d, dims.vocab_size, 0.02),
            bias: Array1::zeros(dims.vocab_size),
        };
        EncoderParams {
            dims,
            token_embed,
            pos_embed,
            blocks,
            mlm_head,
        }
    }

    /// Zero-valued structure of the same shape, used as a gradient
    /// accumulator.
    pub fn zeros_like(&self) -> EncoderParams {
        let d = self.dims.dim;
        EncoderParams {
            dims: self.dims,
            token_embed: Array2::zeros(self.token_embed.raw_dim()),
            pos_embed: Array2::zeros(self.pos_embed.raw_dim()),
            blocks: self
                .blocks
                .iter()
                .map(|_| BlockParams {
                    attn: AttentionParams {
                        wq: Array2::zeros((d, d)),
                        wk: Array2::zeros((d, d)),
                        wv: Array2::zeros((d, d)),
                        wo: Array2::zeros((d, d)),
                    },
                    ln1: LayerNormParams {
                        gamma: Array1::zeros(d),
                        beta: Array1::zeros(d),
                    },
                    ff: FeedForwardParams {
                        w1: Array2::zeros((d, 4 * d)),
                        w2: Array2::zeros((4 * d, d)),
                    },
                    ln2: LayerNormParams {
                        gamma: Array1::zeros(d),
                        beta: Array1::zeros(d),
                    },
                })
                .collect(),
            mlm_head: MlmHead {
                weight: Array2::zeros(self.mlm_head.weight.raw_dim()),
                bias: Array1::zeros(self.mlm_head.bias.raw_dim()),
            },
        }
    }

    /// All parameter values in one canonical order.
    pub fn slots(&self) -> Vec<&f64> {
        let mut v: Vec<&f64> = Vec::with_capacity(self.num_params());
        v.extend(self.token_embed.iter());
        v.extend(self.pos_embed.iter());
        for b in &self.blocks {
            v.extend(b.attn.wq.iter());
            v.extend(b.attn.wk.iter());
            v.extend(b.attn.wv.iter());
            v.extend(b.attn.wo.iter());
            v.extend(b.ln1.gamma.iter());
            v.extend(b.ln1.beta.iter());
            v.extend(b.ff.w1.iter());
            v.extend(b.ff.w2.iter());
            v.extend(b.ln2.gamma.iter());
            v.extend(b.ln2.beta.iter());
        }
        v.extend(self.mlm_head.weight.iter());
        v.extend(self.mlm_head.bias.iter());
        v
    }

    /// Mutable view of every parameter in the same canonical order as
    /// [`EncoderParams::slots`].
    pub fn slots_mut(&mut self) -> Vec<&mut f64> {
        let mut v: Vec<&mut f64> = Vec::with_capacity(self.num_params());
        v.extend(self.token_embed.iter_mut());
        v.extend(self.pos_embed.iter_mut());
        for b in &mut self.blocks {
            v.extend(b.attn.wq.iter_mut());
            v.extend(b.attn.wk.iter_mut());
            v.extend(b.attn.wv.iter_mut());
            v.extend(b.attn.wo.iter_mut());
            v.extend(b.ln1.gamma.iter_mut());
            v.extend(b.ln1.beta.iter_mut());
            v.extend(b.ff.w1.iter_mut());
            v.extend(b.ff.w2.iter_mut());
            v.extend(b.ln2.gamma.iter_mut());
            v.extend(b.ln2.beta.iter_mut());
        }
        v.extend(self.mlm_head.weight.iter_mut());
        v.extend(self.mlm_head.bias.iter_mut());
        v
    }

    pub fn num_params(&self) -> usize {
        let d = self.dims.dim;
        let per_block = 4 * d * d + 2 * d + 2 * (d * 4 * d) + 2 * d;
        self.token_embed.len()
            + self.pos_embed.len()
            + self.blocks.len() * per_block
            + self.mlm_head.weight.len()
            + self.mlm_head.bias.len()
    }
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

fn softmax_rows(scores: &Array2<f64>) -> Array2<f64> {
    let mut out = scores.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|z| (z - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|z| z / sum);
    }
    out
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_deriv(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

struct LayerNormCache {
    normalized: Array2<f64>,
    inv_std: Array1<f64>,
}

/// Row-wise layer norm; returns the affine output and the cache for the
/// backward pass.
fn layer_norm_forward(x: &Array2<f64>, ln: &LayerNormParams) -> (Array2<f64>, LayerNormCache) {
    let n = x.nrows();
    let d = x.ncols();
    let mut normalized = Array2::zeros((n, d));
    let mut inv_std = Array1::zeros(n);
    let mut out = Array2::zeros((n, d));
    for i in 0..n {
        let row = x.row(i);
        let mean = row.sum() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std[i] = is;
        for j in 0..d {
            let norm = (x[[i, j]] - mean) * is;
            normalized[[i, j]] = norm;
            out[[i, j]] = ln.gamma[j] * norm + ln.beta[j];
        }
    }
    (out, LayerNormCache { normalized, inv_std })
}

/// Normalized row statistics before the affine transform, for testing the
/// layer-norm contract directly.
pub fn layer_norm_stats(row: &[f64]) -> (f64, f64) {
    let d = row.len() as f64;
    let mean = row.iter().sum::<f64>() / d;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let inv_std = 1.0 / (var + LN_EPS).sqrt();
    let normalized: Vec<f64> = row.iter().map(|v| (v - mean) * inv_std).collect();
    let nmean = normalized.iter().sum::<f64>() / d;
    let nvar = normalized.iter().map(|v| (v - nmean) * (v - nmean)).sum::<f64>() / d;
    (nmean, nvar)
}

fn layer_norm_backward(
    d_out: &Array2<f64>,
    ln: &LayerNormParams,
    cache: &LayerNormCache,
    d_gamma: &mut Array1<f64>,
    d_beta: &mut Array1<f64>,
) -> Array2<f64> {
    let n = d_out.nrows();
    let d = d_out.ncols();
    let mut dx = Array2::zeros((n, d));
    for i in 0..n {
        let mut g_mean = 0.0;
        let mut gx_mean = 0.0;
        for j in 0..d {
            let g = d_out[[i, j]] * ln.gamma[j];
            g_mean += g;
            gx_mean += g * cache.normalized[[i, j]];
            d_gamma[j] += d_out[[i, j]] * cache.normalized[[i, j]];
            d_beta[j] += d_out[[i, j]];
        }
        g_mean /= d as f64;
        gx_mean /= d as f64;
        for j in 0..d {
            let g = d_out[[i, j]] * ln.gamma[j];
            dx[[i, j]] = cache.inv_std[i] * (g - g_mean - cache.normalized[[i, j]] * gx_mean);
        }
    }
    dx
}

struct BlockCache {
    x_in: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Array2<f64>,
    ctx: Array2<f64>,
    ln1: LayerNormCache,
    y1: Array2<f64>,
    ff_pre: Array2<f64>,
    ff_act: Array2<f64>,
    ln2: LayerNormCache,
    y2: Array2<f64>,
}

/// Forward-pass cache for one passage.
pub struct PassageCache {
    pub ids: Vec<usize>,
    blocks: Vec<BlockCache>,
    /// Final hidden states, one row per token.
    pub hidden: Array2<f64>,
}

/// Token ids for a passage, truncated to `max_len` (over-long single
/// sentences keep their full text upstream; the encoder sees the budget).
pub fn token_ids(passage: &Passage, vocab: &Vocabulary, max_len: usize) -> Vec<usize> {
    passage
        .tokens()
        .take(max_len)
        .map(|t| vocab.lookup(t))
        .collect()
}

fn block_forward(params: &BlockParams, x: &Array2<f64>, scale: f64) -> BlockCache {
    let q = x.dot(&params.attn.wq);
    let k = x.dot(&params.attn.wk);
    let v = x.dot(&params.attn.wv);
    let scores = q.dot(&k.t()) * scale;
    let attn = softmax_rows(&scores);
    let ctx = attn.dot(&v);
    let attn_out = ctx.dot(&params.attn.wo);
    let r1 = x + &attn_out;
    let (y1, ln1) = layer_norm_forward(&r1, &params.ln1);
    let ff_pre = y1.dot(&params.ff.w1);
    let ff_act = ff_pre.mapv(gelu);
    let ff_out = ff_act.dot(&params.ff.w2);
    let r2 = &y1 + &ff_out;
    let (y2, ln2) = layer_norm_forward(&r2, &params.ln2);
    BlockCache {
        x_in: x.clone(),
        q,
        k,
        v,
        attn,
        ctx,
        ln1,
        y1,
        ff_pre,
        ff_act,
        ln2,
        y2,
    }
}

fn block_backward(
    params: &BlockParams,
    cache: &BlockCache,
    d_y2: &Array2<f64>,
    grads: &mut BlockParams,
    scale: f64,
) -> Array2<f64> {
    // LN2 then the feed-forward residual.
    let d_r2 = layer_norm_backward(d_y2, &params.ln2, &cache.ln2, &mut grads.ln2.gamma, &mut grads.ln2.beta);
    let d_ff_out = &d_r2;
    grads.ff.w2 += &cache.ff_act.t().dot(d_ff_out);
    let d_ff_act = d_ff_out.dot(&params.ff.w2.t());
    let d_ff_pre = &d_ff_act * &cache.ff_pre.mapv(gelu_deriv);
    grads.ff.w1 += &cache.y1.t().dot(&d_ff_pre);
    let d_y1 = &d_r2 + &d_ff_pre.dot(&params.ff.w1.t());

    // LN1 then the attention residual.
    let d_r1 = layer_norm_backward(&d_y1, &params.ln1, &cache.ln1, &mut grads.ln1.gamma, &mut grads.ln1.beta);
    let mut d_x = d_r1.clone();

    grads.attn.wo += &cache.ctx.t().dot(&d_r1);
    let d_ctx = d_r1.dot(&params.attn.wo.t());
    let d_attn = d_ctx.dot(&cache.v.t());
    let d_v = cache.attn.t().dot(&d_ctx);

    // Row-softmax backward.
    let n = cache.attn.nrows();
    let mut d_scores = Array2::zeros((n, n));
    for i in 0..n {
        let mut dot = 0.0;
        for j in 0..n {
            dot += d_attn[[i, j]] * cache.attn[[i, j]];
        }
        for j in 0..n {
            d_scores[[i, j]] = cache.attn[[i, j]] * (d_attn[[i, j]] - dot) * scale;
        }
    }

    let d_q = d_scores.dot(&cache.k);
    let d_k = d_scores.t().dot(&cache.q);

    grads.attn.wq += &cache.x_in.t().dot(&d_q);
    grads.attn.wk += &cache.x_in.t().dot(&d_k);
    grads.attn.wv += &cache.x_in.t().dot(&d_v);

    d_x += &d_q.dot(&params.attn.wq.t());
    d_x += &d_k.dot(&params.attn.wk.t());
    d_x += &d_v.dot(&params.attn.wv.t());
    d_x
}

/// Runs the encoder over a token id sequence, caching every intermediate.
pub fn forward_passage(params: &EncoderParams, ids: &[usize]) -> Result<PassageCache> {
    if ids.is_empty() {
        return Err(Error::Validation("cannot encode an empty passage".into()));
    }
    if ids.len() > params.dims.max_len {
        return Err(Error::Validation(format!(
            "passage of {} tokens exceeds the position table ({})",
            ids.len(),
            params.dims.max_len
        )));
    }
    let n = ids.len();
    let d = params.dims.dim;
    let mut x = Array2::zeros((n, d));
    for (t, &id) in ids.iter().enumerate() {
        for j in 0..d {
            x[[t, j]] = params.token_embed[[id, j]] + params.pos_embed[[t, j]];
        }
    }
    let scale = 1.0 / (d as f64).sqrt();
    let mut blocks = Vec::with_capacity(params.blocks.len());
    for block in &params.blocks {
        let cache = block_forward(block, &x, scale);
        x = cache.y2.clone();
        blocks.push(cache);
    }
    Ok(PassageCache {
        ids: ids.to_vec(),
        blocks,
        hidden: x,
    })
}

/// Backpropagates a gradient on the final hidden states into `grads`.
pub fn backward_passage(
    params: &EncoderParams,
    cache: &PassageCache,
    d_hidden: &Array2<f64>,
    grads: &mut EncoderParams,
) {
    let scale = 1.0 / (params.dims.dim as f64).sqrt();
    let mut d = d_hidden.clone();
    for idx in (0..params.blocks.len()).rev() {
        d = block_backward(
            &params.blocks[idx],
            &cache.blocks[idx],
            &d,
            &mut grads.blocks[idx],
            scale,
        );
    }
    for (t, &id) in cache.ids.iter().enumerate() {
        for j in 0..params.dims.dim {
            grads.token_embed[[id, j]] += d[[t, j]];
            grads.pos_embed[[t, j]] += d[[t, j]];
        }
    }
}

/// Mean of the final hidden states: the passage embedding.
pub fn pool_mean(cache: &PassageCache) -> EmbeddingVector {
    cache.hidden.mean_axis(Axis(0)).unwrap()
}

/// Encodes a passage into its embedding e = mean over token positions of
/// the final hidden states.
pub fn encode_passage(
    params: &EncoderParams,
    passage: &Passage,
    vocab: &Vocabulary,
) -> Result<EmbeddingVector> {
    let ids = token_ids(passage, vocab, params.dims.max_len);
    let cache = forward_passage(params, &ids)?;
    Ok(pool_mean(&cache))
}

/// Component-wise mean of a non-empty set of embeddings.
pub fn user_embedding(vectors: &[EmbeddingVector]) -> Result<EmbeddingVector> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::Validation("user embedding needs at least one vector".into()))?;
    let dim = first.len();
    let mut sum = Array1::<f64>::zeros(dim);
    for v in vectors {
        if v.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "embedding of length {} mixed with {}",
                v.len(),
                dim
            )));
        }
        sum += v;
    }
    Ok(sum / vectors.len() as f64)
}

/// Masked-language-model loss and gradients for one passage.
///
/// The passage must already carry `_MASK_` substitutions at
/// `mask_positions` (flattened token indices); `targets` are the original
/// token ids. Loss is the mean cross-entropy over the masked positions.
pub fn mlm_forward(
    params: &EncoderParams,
    passage: &Passage,
    mask_positions: &[usize],
    targets: &[usize],
    vocab: &Vocabulary,
) -> Result<(f64, EncoderParams)> {
    if mask_positions.is_empty() {
        return Err(Error::Validation("mlm_forward requires at least one masked position".into()));
    }
    if mask_positions.len() != targets.len() {
        return Err(Error::Validation(format!(
            "{} mask positions but {} targets",
            mask_positions.len(),
            targets.len()
        )));
    }
    let ids = token_ids(passage, vocab, params.dims.max_len);
    let cache = forward_passage(params, &ids)?;
    let mut grads = params.zeros_like();
    let loss = mlm_loss_backward(params, &cache, mask_positions, targets, &mut grads)?;
    Ok((loss, grads))
}

/// Shared MLM loss/backward over an existing forward cache; used both by
/// [`mlm_forward`] and the pre-training loop.
pub fn mlm_loss_backward(
    params: &EncoderParams,
    cache: &PassageCache,
    mask_positions: &[usize],
    targets: &[usize],
    grads: &mut EncoderParams,
) -> Result<f64> {
    let n = cache.hidden.nrows();
    let vocab_size = params.dims.vocab_size;
    let count = mask_positions.len() as f64;
    let mut d_hidden = Array2::zeros(cache.hidden.raw_dim());
    let mut loss = 0.0;

    for (&pos, &target) in mask_positions.iter().zip(targets) {
        if pos >= n {
            return Err(Error::Validation(format!(
                "mask position {pos} out of range for a {n}-token passage"
            )));
        }
        if target >= vocab_size {
            return Err(Error::Validation(format!("target id {target} outside the vocabulary")));
        }
        let hidden = cache.hidden.row(pos);
        let logits: Vec<f64> = (0..vocab_size)
            .map(|w| {
                let mut z = params.mlm_head.bias[w];
                for j in 0..params.dims.dim {
                    z += hidden[j] * params.mlm_head.weight[[j, w]];
                }
                z
            })
            .collect();
        let log_probs = log_softmax(&logits);
        loss += -log_probs[target] / count;

        for (w, lp) in log_probs.iter().enumerate() {
            let dz = (lp.exp() - f64::from(w == target)) / count;
            grads.mlm_head.bias[w] += dz;
            for j in 0..params.dims.dim {
                grads.mlm_head.weight[[j, w]] += hidden[j] * dz;
                d_hidden[[pos, j]] += params.mlm_head.weight[[j, w]] * dz;
            }
        }
    }

    backward_passage(params, cache, &d_hidden, grads);
    Ok(loss)
}

/// Computes only the MLM loss (no gradients); used for held-out early
/// stopping during pre-training.
pub fn mlm_loss_only(
    params: &EncoderParams,
    cache: &PassageCache,
    mask_positions: &[usize],
    targets: &[usize],
) -> Result<f64> {
    let n = cache.hidden.nrows();
    let count = mask_positions.len() as f64;
    let mut loss = 0.0;
    for (&pos, &target) in mask_positions.iter().zip(targets) {
        if pos >= n {
            return Err(Error::Validation(format!(
                "mask position {pos} out of range for a {n}-token passage"
            )));
        }
        let hidden = cache.hidden.row(pos);
        let logits: Vec<f64> = (0..params.dims.vocab_size)
            .map(|w| {
                let mut z = params.mlm_head.bias[w];
                for j in 0..params.dims.dim {
                    z += hidden[j] * params.mlm_head.weight[[j, w]];
                }
                z
            })
            .collect();
        let log_probs = log_softmax(&logits);
        loss += -log_probs[target] / count;
    }
    Ok(loss)
}


#[cfg(test)]
mod tests {
    use super::test_support::{randomize_for_gradcheck, rel_err};
    use super::*;
    use crate::preprocess::Sentence;

    fn user_of(tokens: &[&[&str]]) -> ProcessedUser {
        ProcessedUser {
            user_id: "u".into(),
            passages: tokens
                .iter()
                .enumerate()
                .map(|(i, sent)| Passage {
                    origin_post_id: format!("p{i}"),
                    sentences: vec![Sentence::new(sent.iter().map(|t| t.to_string()).collect())],
                })
                .collect(),
        }
    }

    fn passage_of(tokens: &[&str]) -> Passage {
        Passage {
            origin_post_id: "p".into(),
            sentences: vec![Sentence::new(tokens.iter().map(|t| t.to_string()).collect())],
        }
    }

    #[test]
    fn vocabulary_reserves_low_ids() {
        let corpus = vec![user_of(&[&["pain", "pain", "sleep"]])];
        let vocab = build_vocabulary(&corpus, 1).unwrap();
        assert_eq!(vocab.lookup(PAD_TOKEN), PAD_ID);
        assert_eq!(vocab.lookup(UNK_TOKEN), UNK_ID);
        assert_eq!(vocab.lookup(MASK_TOKEN), MASK_ID);
        assert_eq!(vocab.lookup(PERSON_TOKEN), PERSON_ID);
        assert_eq!(vocab.lookup(URL_TOKEN), URL_ID);
        assert_eq!(vocab.lookup("pain"), 5, "most frequent token follows the reserved block");
    }

    #[test]
    fn vocabulary_min_freq_filters() {
        let corpus = vec![user_of(&[&["pain", "pain", "once"]])];
        let vocab = build_vocabulary(&corpus, 2).unwrap();
        assert!(vocab.contains("pain"));
        assert!(!vocab.contains("once"));
        assert_eq!(vocab.lookup("once"), UNK_ID);
    }

    fn tiny_dims(vocab_size: usize) -> EncoderDims {
        EncoderDims {
            vocab_size,
            dim: 4,
            layers: 0,
            max_len: 8,
        }
    }

    #[test]
    fn zero_layer_encoder_is_embedding_plus_position() {
        let corpus = vec![user_of(&[&["alpha", "beta"]])];
        let vocab = build_vocabulary(&corpus, 1).unwrap();
        let params = EncoderParams::init(tiny_dims(vocab.size()), 3);
        let e = encode_passage(&params, &passage_of(&["alpha"]), &vocab).unwrap();
        let id = vocab.lookup("alpha");
        for j in 0..4 {
            let expected = params.token_embed[[id, j]] + params.pos_embed[[0, j]];
            assert!((e[j] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_layer_pooling_is_permutation_invariant_without_positions() {
        let corpus = vec![user_of(&[&["alpha", "beta", "gamma"]])];
        let vocab = build_vocabulary(&corpus, 1).unwrap();
        let mut params = EncoderParams::init(tiny_dims(vocab.size()), 3);
        params.pos_embed.fill(0.0);
        let a = encode_passage(&params, &passage_of(&["alpha", "beta", "gamma"]), &vocab).unwrap();
        let b = encode_passage(&params, &passage_of(&["gamma", "alpha", "beta"]), &vocab).unwrap();
        for j in 0..4 {
            assert!((a[j] - b[j]).abs() < 1e-15);
        }
    }

    #[test]
    fn encoding_is_bit_deterministic() {
        let corpus = vec![user_of(&[&["alpha", "beta", "gamma", "delta"]])];
        let vocab = build_vocabulary(&corpus, 1).unwrap();
        let dims = EncoderDims {
            vocab_size: vocab.size(),
            dim: 8,
            layers: 2,
            max_len: 16,
        };
        let params = EncoderParams::init(dims, 9);
        let p = passage_of(&["alpha", "beta", "gamma"]);
        let a = encode_passage(&params, &p, &vocab).unwrap();
        let b = encode_passage(&params, &p, &vocab).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn user_embedding_mean_and_invariance() {
        let single = vec![Array1::from(vec![1.0, 3.0])];
        assert_eq!(user_embedding(&single).unwrap(), single[0]);

        let pair = vec![Array1::from(vec![1.0, 3.0]), Array1::from(vec![3.0, 5.0])];
        assert_eq!(user_embedding(&pair).unwrap(), Array1::from(vec![2.0, 4.0]));

        let swapped = vec![pair[1].clone(), pair[0].clone()];
        assert_eq!(user_embedding(&pair).unwrap(), user_embedding(&swapped).unwrap());

        assert!(user_embedding(&[]).is_err());
    }

    #[test]
    fn layer_norm_statistics_are_tight() {
        let mut rng = rng_from(5);
        for _ in 0..50 {
            let row: Vec<f64> = (0..16).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let (mean, var) = layer_norm_stats(&row);
            assert!(mean.abs() < 1e-9, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-9, "var {var}");
        }
    }

    #[test]
    fn mlm_uniform_logits_give_ln_v() {
        let corpus = vec![user_of(&[&["alpha", "beta", "gamma"]])];
        let vocab = build_vocabulary(&corpus, 1).unwrap();
        let dims = EncoderDims {
            vocab_size: vocab.size(),
            dim: 4,
            layers: 1,
            max_len: 8,
        };
        let mut params = EncoderParams::init(dims, 1);
        params.mlm_head.weight.fill(0.0);
        params.mlm_head.bias.fill(0.0);
        let masked = passage_of(&[MASK_TOKEN, "beta", "gamma"]);
        let (loss, _) =
            mlm_forward(&params, &masked, &[0], &[vocab.lookup("alpha")], &vocab).unwrap();
        let ln_v = (vocab.size() as f64).ln();
        assert!((loss - ln_v).abs() < 1e-12, "loss {loss} vs ln V {ln_v}");
    }

    #[test]
    fn mlm_sharp_logits_drive_loss_to_zero() {
        let corpus = vec![user_of(&[&["alpha", "beta"]])];
        let vocab = build_vocabulary(&corpus, 1).unwrap();
        let dims = EncoderDims {
            vocab_size: vocab.size(),
            dim: 4,
            layers: 0,
            max_len: 8,
        };
        let mut params = EncoderParams::init(dims, 1);
        params.mlm_head.weight.fill(0.0);
        params.mlm_head.bias.fill(0.0);
        let target = vocab.lookup("alpha");
        params.mlm_head.bias[target] = 50.0;
        let masked = passage_of(&[MASK_TOKEN, "beta"]);
        let (loss, _) = mlm_forward(&params, &masked, &[0], &[target], &vocab).unwrap();
        assert!(loss < 1e-12, "loss {loss}");
    }

    #[test]
    fn mlm_rejects_zero_mask_positions() {
        let corpus = vec![user_of(&[&["alpha"]])];
        let vocab = build_vocabulary(&corpus, 1).unwrap();
        let params = EncoderParams::init(tiny_dims(vocab.size()), 1);
        assert!(mlm_forward(&params, &passage_of(&["alpha"]), &[], &[], &vocab).is_err());
    }

    use rand::Rng;

    use crate::seed::rng_from;

    /// Exhaustive central finite differences over every parameter of one
    /// tiny configuration; catches systematic backward-pass errors.
    #[test]
    fn mlm_gradient_matches_finite_differences_exhaustively() {
        let corpus = vec![user_of(&[&["a0", "a1", "a2", "a3", "a4"]])];
        let vocab = build_vocabulary(&corpus, 1).unwrap();
        let dims = EncoderDims {
            vocab_size: vocab.size(),
            dim: 3,
            layers: 1,
            max_len: 6,
        };
        let mut params = EncoderParams::init(dims, 7);
        randomize_for_gradcheck(&mut params, &mut rng_from(21));
        let masked = passage_of(&[MASK_TOKEN, "a1", MASK_TOKEN, "a3"]);
        let positions = [0usize, 2];
        let targets = [vocab.lookup("a0"), vocab.lookup("a2")];

        let (_, grads) = mlm_forward(&params, &masked, &positions, &targets, &vocab).unwrap();
        let analytic: Vec<f64> = grads.slots().into_iter().copied().collect();

        let eps = 1e-5;
        let mut worst = 0.0f64;
        for i in 0..analytic.len() {
            let mut p = params.clone();
            {
                let mut slots = p.slots_mut();
                *slots[i] += eps;
            }
            let (lp, _) = mlm_forward(&p, &masked, &positions, &targets, &vocab).unwrap();
            {
                let mut slots = p.slots_mut();
                *slots[i] -= 2.0 * eps;
            }
            let (lm, _) = mlm_forward(&p, &masked, &positions, &targets, &vocab).unwrap();
            let fd = (lp - lm) / (2.0 * eps);
            worst = worst.max(rel_err(analytic[i], fd));
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn pooled_gradient_matches_finite_differences() {
        // Scalar probe: sum of the passage embedding; checks the pooled
        // backward path end to end on a 2-layer encoder.
        let corpus = vec![user_of(&[&["a0", "a1", "a2", "a3", "a4", "a5"]])];
        let vocab = build_vocabulary(&corpus, 1).unwrap();
        let dims = EncoderDims {
            vocab_size: vocab.size(),
            dim: 4,
            layers: 2,
            max_len: 8,
        };
        let mut params = EncoderParams::init(dims, 13);
        randomize_for_gradcheck(&mut params, &mut rng_from(22));
        let p = passage_of(&["a0", "a3", "a5", "a1"]);
        let ids = token_ids(&p, &vocab, dims.max_len);

        let probe = |params: &EncoderParams| -> f64 {
            let cache = forward_passage(params, &ids).unwrap();
            pool_mean(&cache).sum()
        };

        let cache = forward_passage(&params, &ids).unwrap();
        let n = cache.hidden.nrows() as f64;
        let d_hidden = Array2::from_elem(cache.hidden.raw_dim(), 1.0 / n);
        let mut grads = params.zeros_like();
        backward_passage(&params, &cache, &d_hidden, &mut grads);
        let analytic: Vec<f64> = grads.slots().into_iter().copied().collect();

        let eps = 1e-5;
        let mut rng = rng_from(3);
        let total = analytic.len();
        let mut worst = 0.0f64;
        for _ in 0..300 {
            let i = rng.gen_range(0..total);
            let mut p2 = params.clone();
            {
                let mut slots = p2.slots_mut();
                *slots[i] += eps;
            }
            let lp = probe(&p2);
            {
                let mut slots = p2.slots_mut();
                *slots[i] -= 2.0 * eps;
            }
            let lm = probe(&p2);
            let fd = (lp - lm) / (2.0 * eps);
            worst = worst.max(rel_err(analytic[i], fd));
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }
}
