use ndarray::{s, Array1, Array2, Axis, Zip};
use rand::Rng;

use super::config::{Mode, ModelConfig};
use super::params::{LayerParams, ParameterSet};
use crate::error::{Error, Result};
use crate::tokenizer::EncodedInput;

pub(crate) const LN_EPS: f64 = 1e-12;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Row-wise normalization; returns (x_hat, 1/std).
pub(crate) fn layer_norm(x: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, is) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *is = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| v * *is);
    }
    (xhat, inv_std)
}

fn affine(xhat: &Array2<f64>, gain: &Array1<f64>, bias: &Array1<f64>) -> Array2<f64> {
    xhat * gain + bias
}

/// Max-subtracted softmax over each row, in place.
pub(crate) fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

fn dropout_mask(rng: &mut impl Rng, shape: (usize, usize), rate: f64) -> Array2<f64> {
    let keep = 1.0 / (1.0 - rate);
    Array2::from_shape_simple_fn(shape, || if rng.random::<f64>() < rate { 0.0 } else { keep })
}

pub(crate) struct LayerCache {
    pub x_in: Array2<f64>,
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    pub probs: Vec<Array2<f64>>,
    pub ctx: Array2<f64>,
    pub attn_drop: Option<Array2<f64>>,
    pub xhat1: Array2<f64>,
    pub inv_std1: Array1<f64>,
    pub h1: Array2<f64>,
    pub ff_pre: Array2<f64>,
    pub ff_act: Array2<f64>,
    pub ffn_drop: Option<Array2<f64>>,
    pub xhat2: Array2<f64>,
    pub inv_std2: Array1<f64>,
}

pub(crate) struct EncoderCache {
    pub ids: Vec<u32>,
    pub emb_drop: Option<Array2<f64>>,
    pub layers: Vec<LayerCache>,
    pub hidden: Array2<f64>,
}

fn run_layer(
    l: &LayerParams,
    config: &ModelConfig,
    x: Array2<f64>,
    key_bias: &Array1<f64>,
    dropout: &mut Option<(&mut dyn rand::RngCore, f64)>,
) -> (Array2<f64>, LayerCache) {
    let n = x.nrows();
    let dh = config.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let q = x.dot(&l.wq) + &l.bq;
    let k = x.dot(&l.wk) + &l.bk;
    let v = x.dot(&l.wv) + &l.bv;
    let mut ctx = Array2::zeros((n, config.hidden_dim));
    let mut probs = Vec::with_capacity(config.num_heads);
    for h in 0..config.num_heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        scores += key_bias;
        softmax_rows(&mut scores);
        ctx.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
        probs.push(scores);
    }
    let mut attn = ctx.dot(&l.wo) + &l.bo;
    let attn_drop = dropout.as_mut().map(|(rng, rate)| dropout_mask(rng, attn.dim(), *rate));
    if let Some(m) = &attn_drop {
        attn *= m;
    }
    let (xhat1, inv_std1) = layer_norm(&(&x + &attn));
    let h1 = affine(&xhat1, &l.ln1_gain, &l.ln1_bias);
    let ff_pre = h1.dot(&l.w1) + &l.b1;
    let ff_act = ff_pre.mapv(gelu);
    let mut ff = ff_act.dot(&l.w2) + &l.b2;
    let ffn_drop = dropout.as_mut().map(|(rng, rate)| dropout_mask(rng, ff.dim(), *rate));
    if let Some(m) = &ffn_drop {
        ff *= m;
    }
    let (xhat2, inv_std2) = layer_norm(&(&h1 + &ff));
    let out = affine(&xhat2, &l.ln2_gain, &l.ln2_bias);
    let cache = LayerCache {
        x_in: x,
        q,
        k,
        v,
        probs,
        ctx,
        attn_drop,
        xhat1,
        inv_std1,
        h1,
        ff_pre,
        ff_act,
        ffn_drop,
        xhat2,
        inv_std2,
    };
    (out, cache)
}

/// Runs the encoder over `ids`, keeping every intermediate needed for the
/// backward pass. Keys with `key_valid[j] == false` get an additive -inf
/// score before the softmax.
pub(crate) fn run_encoder(
    params: &ParameterSet,
    config: &ModelConfig,
    ids: &[u32],
    key_valid: &[bool],
    mut dropout: Option<(&mut dyn rand::RngCore, f64)>,
) -> EncoderCache {
    let n = ids.len();
    let mut x = Array2::zeros((n, config.hidden_dim));
    for (i, (&id, mut row)) in ids.iter().zip(x.rows_mut()).enumerate() {
        row.assign(&(&params.token_embeddings.row(id as usize) + &params.position_embeddings.row(i)));
    }
    let emb_drop = dropout.as_mut().map(|(rng, rate)| dropout_mask(rng, x.dim(), *rate));
    if let Some(m) = &emb_drop {
        x *= m;
    }
    let key_bias: Array1<f64> = key_valid
        .iter()
        .map(|&ok| if ok { 0.0 } else { f64::NEG_INFINITY })
        .collect();
    let mut layers = Vec::with_capacity(params.layers.len());
    for l in &params.layers {
        let (out, cache) = run_layer(l, config, x, &key_bias, &mut dropout);
        layers.push(cache);
        x = out;
    }
    EncoderCache {
        ids: ids.to_vec(),
        emb_drop,
        layers,
        hidden: x,
    }
}

pub(crate) fn check_input(input: &EncodedInput, params: &ParameterSet, config: &ModelConfig) -> Result<()> {
    config.validate()?;
    if input.ids.len() != config.max_seq_len || input.attention_mask.len() != input.ids.len() {
        return Err(Error::Shape(format!(
            "input of length {} (mask {}), model expects {}",
            input.ids.len(),
            input.attention_mask.len(),
            config.max_seq_len
        )));
    }
    if input.attention_mask.first() != Some(&1) {
        return Err(Error::Shape("first position must be attended".into()));
    }
    if let Some(&bad) = input.ids.iter().find(|&&id| id as usize >= config.vocab_size) {
        return Err(Error::InvalidId {
            id: bad,
            size: config.vocab_size,
        });
    }
    params.check_shapes(config)?;
    params.check_finite()
}

fn dropout_for<'a>(
    mode: Mode,
    config: &ModelConfig,
    rng: &'a mut dyn rand::RngCore,
) -> Option<(&'a mut dyn rand::RngCore, f64)> {
    (mode == Mode::Train && config.dropout_rate > 0.0).then_some((rng, config.dropout_rate))
}

/// Hidden states (max_seq_len x hidden_dim) for one prepared input.
///
/// Padding keys are masked out of every attention row. Dropout is applied
/// only in [`Mode::Train`]; eval mode is deterministic and never touches `rng`.
pub fn forward_encoder(
    input: &EncodedInput,
    params: &ParameterSet,
    config: &ModelConfig,
    mode: Mode,
    rng: &mut impl rand::RngCore,
) -> Result<Array2<f64>> {
    check_input(input, params, config)?;
    let valid: Vec<bool> = input.attention_mask.iter().map(|&m| m == 1).collect();
    Ok(run_encoder(params, config, &input.ids, &valid, dropout_for(mode, config, rng)).hidden)
}

/// Eval-mode internals of one forward pass, for inspection.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    pub hidden: Array2<f64>,
    /// `attention[layer][head]` is the (seq x seq) probability matrix.
    pub attention: Vec<Vec<Array2<f64>>>,
    /// Per layer, the two layer-norm outputs before gain and bias.
    pub normalized: Vec<(Array2<f64>, Array2<f64>)>,
}

pub fn trace_encoder(input: &EncodedInput, params: &ParameterSet, config: &ModelConfig) -> Result<EncoderTrace> {
    check_input(input, params, config)?;
    let valid: Vec<bool> = input.attention_mask.iter().map(|&m| m == 1).collect();
    let cache = run_encoder(params, config, &input.ids, &valid, None);
    Ok(EncoderTrace {
        hidden: cache.hidden,
        attention: cache.layers.iter().map(|l| l.probs.clone()).collect(),
        normalized: cache
            .layers
            .into_iter()
            .map(|l| (l.xhat1, l.xhat2))
            .collect(),
    })
}

/// Per-position vocabulary logits through the tied projection; no softmax.
pub fn forward_mlm(hidden: &Array2<f64>, params: &ParameterSet) -> Result<Array2<f64>> {
    let emb = params.mlm_projection();
    if hidden.ncols() != emb.ncols() || params.mlm_bias.len() != emb.nrows() {
        return Err(Error::Shape(format!(
            "hidden width {} does not match embedding width {}",
            hidden.ncols(),
            emb.ncols()
        )));
    }
    Ok(hidden.dot(&emb.t()) + &params.mlm_bias)
}

pub(crate) fn pool(cls: ndarray::ArrayView1<f64>, params: &ParameterSet) -> Array1<f64> {
    (cls.dot(&params.pooler_weight) + &params.pooler_bias).mapv(f64::tanh)
}

/// Two class logits from the hidden state at position 0.
pub fn forward_classify(hidden: &Array2<f64>, params: &ParameterSet) -> Result<Array1<f64>> {
    let d = params.pooler_weight.nrows();
    if hidden.nrows() == 0 || hidden.ncols() != d || params.classifier_weight.dim() != (d, 2) {
        return Err(Error::Shape(format!(
            "hidden {:?} incompatible with pooler width {d}",
            hidden.dim()
        )));
    }
    let pooled = pool(hidden.row(0), params);
    Ok(pooled.dot(&params.classifier_weight) + &params.classifier_bias)
}

pub(crate) fn column_sums(m: &Array2<f64>) -> Array1<f64> {
    m.sum_axis(Axis(0))
}

pub(crate) fn mul_inplace(a: &mut Array2<f64>, b: &Array2<f64>) {
    Zip::from(a).and(b).for_each(|x, &y| *x *= y);
}
