use ndarray::{s, Array1, Array2, Axis, Zip};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{Mode, ModelConfig};
use super::forward::{
    check_input, column_sums, forward_classify, forward_encoder, forward_mlm, gelu_grad, mul_inplace, pool,
    run_encoder, EncoderCache, LayerCache,
};
use super::loss::{cross_entropy, cross_entropy_sum, IGNORE};
use super::params::{LayerParams, ParameterSet};
use crate::error::{Error, Result};
use crate::tokenizer::EncodedInput;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Mlm,
    Classify,
}

/// One optimization batch.
#[derive(Debug, Clone, Copy)]
pub enum Batch<'a> {
    /// Per-position targets ([`IGNORE`] where nothing is predicted).
    Mlm {
        inputs: &'a [EncodedInput],
        targets: &'a [Vec<u32>],
    },
    /// One class label (0 or 1) per input.
    Classify {
        inputs: &'a [EncodedInput],
        labels: &'a [u32],
    },
}

impl Batch<'_> {
    pub fn objective(&self) -> Objective {
        match self {
            Batch::Mlm { .. } => Objective::Mlm,
            Batch::Classify { .. } => Objective::Classify,
        }
    }

    pub fn inputs(&self) -> &[EncodedInput] {
        match self {
            Batch::Mlm { inputs, .. } | Batch::Classify { inputs, .. } => inputs,
        }
    }

    fn validate(&self, params: &ParameterSet, config: &ModelConfig) -> Result<()> {
        let inputs = self.inputs();
        if inputs.is_empty() {
            return Err(Error::EmptyBatch);
        }
        for input in inputs {
            check_input(input, params, config)?;
            if input.attention_mask[..input.real_len].iter().any(|&m| m != 1)
                || input.attention_mask[input.real_len..].iter().any(|&m| m != 0)
            {
                return Err(Error::InvalidInput("attention mask is not a prefix of ones".into()));
            }
        }
        match self {
            Batch::Mlm { targets, .. } => {
                if targets.len() != inputs.len() {
                    return Err(Error::Shape("one target row per input required".into()));
                }
                for (input, t) in inputs.iter().zip(targets.iter()) {
                    if t.len() != input.len() {
                        return Err(Error::Shape("target row length differs from input".into()));
                    }
                    if t[input.real_len..].iter().any(|&x| x != IGNORE) {
                        return Err(Error::InvalidInput("padding position carries a target".into()));
                    }
                }
            }
            Batch::Classify { labels, .. } => {
                if labels.len() != inputs.len() {
                    return Err(Error::Shape("one label per input required".into()));
                }
                if labels.iter().any(|&l| l > 1) {
                    return Err(Error::InvalidInput("class labels must be 0 or 1".into()));
                }
            }
        }
        Ok(())
    }
}

/// Mean batch loss through the full-length, eval-mode forward pass.
///
/// This is the plain composition `forward_encoder` -> head -> `cross_entropy`
/// and shares none of the gradient code, so it can serve as a reference.
pub fn batch_loss(batch: &Batch, params: &ParameterSet, config: &ModelConfig) -> Result<f64> {
    batch.validate(params, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    match batch {
        Batch::Mlm { inputs, targets } => {
            let mut sum = 0.0;
            let mut count = 0usize;
            for (input, t) in inputs.iter().zip(targets.iter()) {
                let h = forward_encoder(input, params, config, Mode::Eval, &mut rng)?;
                let logits = forward_mlm(&h, params)?;
                let n = t.iter().filter(|&&x| x != IGNORE).count();
                if n > 0 {
                    sum += cross_entropy(&logits, t, IGNORE)? * n as f64;
                    count += n;
                }
            }
            if count == 0 {
                return Err(Error::EmptyBatch);
            }
            Ok(sum / count as f64)
        }
        Batch::Classify { inputs, labels } => {
            let mut logits = Array2::zeros((inputs.len(), 2));
            for (input, mut row) in inputs.iter().zip(logits.rows_mut()) {
                let h = forward_encoder(input, params, config, Mode::Eval, &mut rng)?;
                row.assign(&forward_classify(&h, params)?);
            }
            cross_entropy(&logits, labels, IGNORE)
        }
    }
}

/// Mean batch loss and its exact gradient with respect to every parameter.
///
/// Each input is run over its non-padding prefix only; padding keys are
/// masked out of attention and never carry targets, so the loss is identical
/// to the full-length pass. In [`Mode::Train`] each input draws its dropout
/// masks from a generator seeded by `rng`, and the gradient is exact for
/// those masks. Parameters the objective does not reach get zero gradient.
pub fn compute_gradients(
    batch: &Batch,
    params: &ParameterSet,
    config: &ModelConfig,
    mode: Mode,
    rng: &mut impl RngCore,
) -> Result<(f64, ParameterSet)> {
    batch.validate(params, config)?;
    let inputs = batch.inputs();
    let seeds: Vec<u64> = inputs.iter().map(|_| rng.next_u64()).collect();
    let total = match batch {
        Batch::Mlm { targets, .. } => targets
            .iter()
            .map(|t| t.iter().filter(|&&x| x != IGNORE).count())
            .sum::<usize>(),
        Batch::Classify { .. } => inputs.len(),
    };
    if total == 0 {
        return Err(Error::EmptyBatch);
    }
    let norm = 1.0 / total as f64;
    let per_example: Vec<(f64, ParameterSet)> = (0..inputs.len())
        .into_par_iter()
        .map(|i| {
            let mut ex_rng = ChaCha8Rng::seed_from_u64(seeds[i]);
            example_gradients(batch, i, params, config, mode, &mut ex_rng, norm)
        })
        .collect::<Result<_>>()?;

    let mut iter = per_example.into_iter();
    let (mut loss_sum, mut grads) = iter.next().expect("non-empty batch");
    for (l, g) in iter {
        loss_sum += l;
        grads.add_assign(&g);
    }
    let loss = loss_sum * norm;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("loss is {loss}")));
    }
    Ok((loss, grads))
}

fn example_gradients(
    batch: &Batch,
    i: usize,
    params: &ParameterSet,
    config: &ModelConfig,
    mode: Mode,
    rng: &mut ChaCha8Rng,
    norm: f64,
) -> Result<(f64, ParameterSet)> {
    let input = &batch.inputs()[i];
    let n = input.real_len;
    let valid = vec![true; n];
    let dropout =
        (mode == Mode::Train && config.dropout_rate > 0.0).then_some((rng as &mut dyn RngCore, config.dropout_rate));
    let cache = run_encoder(params, config, input.real_ids(), &valid, dropout);
    let mut grads = ParameterSet::zeros(config);
    let mut d_hidden = Array2::zeros((n, config.hidden_dim));

    let loss_sum = match batch {
        Batch::Mlm { targets, .. } => {
            let t = &targets[i][..n];
            let rows: Vec<usize> = (0..n).filter(|&p| t[p] != IGNORE).collect();
            if rows.is_empty() {
                return Ok((0.0, grads));
            }
            let h_sel = cache.hidden.select(Axis(0), &rows);
            let t_sel: Vec<u32> = rows.iter().map(|&p| t[p]).collect();
            let logits = forward_mlm(&h_sel, params)?;
            let (sum, _, d_logits) = cross_entropy_sum(&logits, &t_sel, IGNORE, true)?;
            let d_logits = d_logits.expect("gradient requested") * norm;
            let d_h_sel = d_logits.dot(&params.token_embeddings);
            grads.token_embeddings += &d_logits.t().dot(&h_sel);
            grads.mlm_bias += &column_sums(&d_logits);
            for (k, &p) in rows.iter().enumerate() {
                d_hidden.row_mut(p).assign(&d_h_sel.row(k));
            }
            sum
        }
        Batch::Classify { labels, .. } => {
            let cls = cache.hidden.row(0);
            let pooled = pool(cls, params);
            let logits = (pooled.dot(&params.classifier_weight) + &params.classifier_bias).insert_axis(Axis(0));
            let (sum, _, d_logits) = cross_entropy_sum(&logits, &labels[i..=i], IGNORE, true)?;
            let d_logits = d_logits.expect("gradient requested").row(0).to_owned() * norm;
            let d_pooled = params.classifier_weight.dot(&d_logits);
            outer_add(&mut grads.classifier_weight, &pooled, &d_logits);
            grads.classifier_bias += &d_logits;
            let d_z = &d_pooled * &pooled.mapv(|p| 1.0 - p * p);
            outer_add(&mut grads.pooler_weight, &cls.to_owned(), &d_z);
            grads.pooler_bias += &d_z;
            d_hidden.row_mut(0).assign(&params.pooler_weight.dot(&d_z));
            sum
        }
    };

    backward_encoder(params, &mut grads, &cache, config, d_hidden);
    Ok((loss_sum, grads))
}

fn outer_add(target: &mut Array2<f64>, a: &Array1<f64>, b: &Array1<f64>) {
    for (i, &ai) in a.iter().enumerate() {
        target.row_mut(i).scaled_add(ai, b);
    }
}

/// d(x)/d(input) of the normalization x -> x_hat, given d(x_hat).
fn ln_backward(d_xhat: &Array2<f64>, xhat: &Array2<f64>, inv_std: &Array1<f64>) -> Array2<f64> {
    let d = xhat.ncols() as f64;
    let mut out = Array2::zeros(xhat.dim());
    for r in 0..xhat.nrows() {
        let g = d_xhat.row(r);
        let xh = xhat.row(r);
        let mean_g = g.sum() / d;
        let mean_gx = g.dot(&xh) / d;
        Zip::from(out.row_mut(r))
            .and(g)
            .and(xh)
            .for_each(|o, &gi, &xi| *o = inv_std[r] * (gi - mean_g - xi * mean_gx));
    }
    out
}

fn backward_layer(l: &LayerParams, g: &mut LayerParams, c: &LayerCache, config: &ModelConfig, d_out: Array2<f64>) -> Array2<f64> {
    let dh = config.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    g.ln2_gain += &column_sums(&(&d_out * &c.xhat2));
    g.ln2_bias += &column_sums(&d_out);
    let d_r2 = ln_backward(&(&d_out * &l.ln2_gain), &c.xhat2, &c.inv_std2);

    let mut d_ff = d_r2.clone();
    if let Some(m) = &c.ffn_drop {
        mul_inplace(&mut d_ff, m);
    }
    let mut d_h1 = d_r2;
    g.w2 += &c.ff_act.t().dot(&d_ff);
    g.b2 += &column_sums(&d_ff);
    let mut d_pre = d_ff.dot(&l.w2.t());
    Zip::from(&mut d_pre).and(&c.ff_pre).for_each(|d, &x| *d *= gelu_grad(x));
    g.w1 += &c.h1.t().dot(&d_pre);
    g.b1 += &column_sums(&d_pre);
    d_h1 += &d_pre.dot(&l.w1.t());

    g.ln1_gain += &column_sums(&(&d_h1 * &c.xhat1));
    g.ln1_bias += &column_sums(&d_h1);
    let d_r1 = ln_backward(&(&d_h1 * &l.ln1_gain), &c.xhat1, &c.inv_std1);

    let mut d_attn = d_r1.clone();
    if let Some(m) = &c.attn_drop {
        mul_inplace(&mut d_attn, m);
    }
    let mut d_x = d_r1;
    g.wo += &c.ctx.t().dot(&d_attn);
    g.bo += &column_sums(&d_attn);
    let d_ctx = d_attn.dot(&l.wo.t());

    let mut d_q = Array2::zeros(c.q.dim());
    let mut d_k = Array2::zeros(c.k.dim());
    let mut d_v = Array2::zeros(c.v.dim());
    for (h, p) in c.probs.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        let d_ctx_h = d_ctx.slice(cols);
        d_v.slice_mut(cols).assign(&p.t().dot(&d_ctx_h));
        let d_p = d_ctx_h.dot(&c.v.slice(cols).t());
        // softmax backward: dS = P * (dP - rowsum(dP * P))
        let mut d_s = d_p;
        for (mut ds_row, p_row) in d_s.rows_mut().into_iter().zip(p.rows()) {
            let dot = ds_row.dot(&p_row);
            Zip::from(&mut ds_row).and(&p_row).for_each(|d, &pi| *d = pi * (*d - dot));
        }
        d_q.slice_mut(cols).assign(&(d_s.dot(&c.k.slice(cols)) * scale));
        d_k.slice_mut(cols).assign(&(d_s.t().dot(&c.q.slice(cols)) * scale));
    }
    for (d_proj, w, gw, gb) in [
        (&d_q, &l.wq, &mut g.wq, &mut g.bq),
        (&d_k, &l.wk, &mut g.wk, &mut g.bk),
        (&d_v, &l.wv, &mut g.wv, &mut g.bv),
    ] {
        *gw += &c.x_in.t().dot(d_proj);
        *gb += &column_sums(d_proj);
        d_x += &d_proj.dot(&w.t());
    }
    d_x
}

fn backward_encoder(
    params: &ParameterSet,
    grads: &mut ParameterSet,
    cache: &EncoderCache,
    config: &ModelConfig,
    d_hidden: Array2<f64>,
) {
    let mut d = d_hidden;
    for ((l, g), c) in params
        .layers
        .iter()
        .zip(grads.layers.iter_mut())
        .zip(cache.layers.iter())
        .rev()
    {
        d = backward_layer(l, g, c, config, d);
    }
    if let Some(m) = &cache.emb_drop {
        mul_inplace(&mut d, m);
    }
    for (i, (&id, row)) in cache.ids.iter().zip(d.rows()).enumerate() {
        let mut tok = grads.token_embeddings.row_mut(id as usize);
        tok += &row;
        let mut pos = grads.position_embeddings.row_mut(i);
        pos += &row;
    }
}
