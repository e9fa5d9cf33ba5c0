use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use crate::error::{Error, Result};

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub ln1_gain: Array1<f64>,
    pub ln1_bias: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub ln2_gain: Array1<f64>,
    pub ln2_bias: Array1<f64>,
}

/// Every trainable tensor of the model.
///
/// The MLM output projection is the token embedding matrix itself (weight
/// tying), so there is no separate tensor for it; only its bias is stored.
/// The same struct doubles as a gradient set and as Adam moment storage.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    pub token_embeddings: Array2<f64>,
    pub position_embeddings: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub mlm_bias: Array1<f64>,
    pub pooler_weight: Array2<f64>,
    pub pooler_bias: Array1<f64>,
    pub classifier_weight: Array2<f64>,
    pub classifier_bias: Array1<f64>,
}

fn trunc_normal(rng: &mut impl Rng, shape: (usize, usize)) -> Array2<f64> {
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    Array2::from_shape_simple_fn(shape, || loop {
        let x: f64 = normal.sample(rng);
        if x.abs() <= 2.0 * INIT_STD {
            break x;
        }
    })
}

impl ParameterSet {
    /// Truncated-normal (std 0.02, cut at two std) weights, zero biases,
    /// unit layer-norm gains. Deterministic in `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.hidden_dim;
        let f = config.ffn_dim;
        let token_embeddings = trunc_normal(&mut rng, (config.vocab_size, d));
        let position_embeddings = trunc_normal(&mut rng, (config.max_seq_len, d));
        let layers = (0..config.num_layers)
            .map(|_| LayerParams {
                wq: trunc_normal(&mut rng, (d, d)),
                bq: Array1::zeros(d),
                wk: trunc_normal(&mut rng, (d, d)),
                bk: Array1::zeros(d),
                wv: trunc_normal(&mut rng, (d, d)),
                bv: Array1::zeros(d),
                wo: trunc_normal(&mut rng, (d, d)),
                bo: Array1::zeros(d),
                ln1_gain: Array1::ones(d),
                ln1_bias: Array1::zeros(d),
                w1: trunc_normal(&mut rng, (d, f)),
                b1: Array1::zeros(f),
                w2: trunc_normal(&mut rng, (f, d)),
                b2: Array1::zeros(d),
                ln2_gain: Array1::ones(d),
                ln2_bias: Array1::zeros(d),
            })
            .collect();
        Ok(Self {
            token_embeddings,
            position_embeddings,
            layers,
            mlm_bias: Array1::zeros(config.vocab_size),
            pooler_weight: trunc_normal(&mut rng, (d, d)),
            pooler_bias: Array1::zeros(d),
            classifier_weight: trunc_normal(&mut rng, (d, 2)),
            classifier_bias: Array1::zeros(2),
        })
    }

    /// All-zero tensors with the shapes `config` implies.
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.hidden_dim;
        let f = config.ffn_dim;
        let layer = LayerParams {
            wq: Array2::zeros((d, d)),
            bq: Array1::zeros(d),
            wk: Array2::zeros((d, d)),
            bk: Array1::zeros(d),
            wv: Array2::zeros((d, d)),
            bv: Array1::zeros(d),
            wo: Array2::zeros((d, d)),
            bo: Array1::zeros(d),
            ln1_gain: Array1::zeros(d),
            ln1_bias: Array1::zeros(d),
            w1: Array2::zeros((d, f)),
            b1: Array1::zeros(f),
            w2: Array2::zeros((f, d)),
            b2: Array1::zeros(d),
            ln2_gain: Array1::zeros(d),
            ln2_bias: Array1::zeros(d),
        };
        Self {
            token_embeddings: Array2::zeros((config.vocab_size, d)),
            position_embeddings: Array2::zeros((config.max_seq_len, d)),
            layers: vec![layer; config.num_layers],
            mlm_bias: Array1::zeros(config.vocab_size),
            pooler_weight: Array2::zeros((d, d)),
            pooler_bias: Array1::zeros(d),
            classifier_weight: Array2::zeros((d, 2)),
            classifier_bias: Array1::zeros(2),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, mut t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// The tied MLM projection (vocab_size x hidden_dim), i.e. the token embeddings.
    pub fn mlm_projection(&self) -> &Array2<f64> {
        &self.token_embeddings
    }

    /// Named views over every tensor in a fixed order.
    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = vec![
            ("embeddings.token".to_string(), self.token_embeddings.view().into_dyn()),
            ("embeddings.position".to_string(), self.position_embeddings.view().into_dyn()),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            let p = |n: &str| format!("layers.{i}.{n}");
            out.extend([
                (p("attn.wq"), l.wq.view().into_dyn()),
                (p("attn.bq"), l.bq.view().into_dyn()),
                (p("attn.wk"), l.wk.view().into_dyn()),
                (p("attn.bk"), l.bk.view().into_dyn()),
                (p("attn.wv"), l.wv.view().into_dyn()),
                (p("attn.bv"), l.bv.view().into_dyn()),
                (p("attn.wo"), l.wo.view().into_dyn()),
                (p("attn.bo"), l.bo.view().into_dyn()),
                (p("ln1.gain"), l.ln1_gain.view().into_dyn()),
                (p("ln1.bias"), l.ln1_bias.view().into_dyn()),
                (p("ffn.w1"), l.w1.view().into_dyn()),
                (p("ffn.b1"), l.b1.view().into_dyn()),
                (p("ffn.w2"), l.w2.view().into_dyn()),
                (p("ffn.b2"), l.b2.view().into_dyn()),
                (p("ln2.gain"), l.ln2_gain.view().into_dyn()),
                (p("ln2.bias"), l.ln2_bias.view().into_dyn()),
            ]);
        }
        out.extend([
            ("mlm.bias".to_string(), self.mlm_bias.view().into_dyn()),
            ("pooler.weight".to_string(), self.pooler_weight.view().into_dyn()),
            ("pooler.bias".to_string(), self.pooler_bias.view().into_dyn()),
            ("classifier.weight".to_string(), self.classifier_weight.view().into_dyn()),
            ("classifier.bias".to_string(), self.classifier_bias.view().into_dyn()),
        ]);
        out
    }

    /// Mutable counterpart of [`ParameterSet::tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out = vec![
            ("embeddings.token".to_string(), self.token_embeddings.view_mut().into_dyn()),
            ("embeddings.position".to_string(), self.position_embeddings.view_mut().into_dyn()),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            let p = |n: &str| format!("layers.{i}.{n}");
            out.extend([
                (p("attn.wq"), l.wq.view_mut().into_dyn()),
                (p("attn.bq"), l.bq.view_mut().into_dyn()),
                (p("attn.wk"), l.wk.view_mut().into_dyn()),
                (p("attn.bk"), l.bk.view_mut().into_dyn()),
                (p("attn.wv"), l.wv.view_mut().into_dyn()),
                (p("attn.bv"), l.bv.view_mut().into_dyn()),
                (p("attn.wo"), l.wo.view_mut().into_dyn()),
                (p("attn.bo"), l.bo.view_mut().into_dyn()),
                (p("ln1.gain"), l.ln1_gain.view_mut().into_dyn()),
                (p("ln1.bias"), l.ln1_bias.view_mut().into_dyn()),
                (p("ffn.w1"), l.w1.view_mut().into_dyn()),
                (p("ffn.b1"), l.b1.view_mut().into_dyn()),
                (p("ffn.w2"), l.w2.view_mut().into_dyn()),
                (p("ffn.b2"), l.b2.view_mut().into_dyn()),
                (p("ln2.gain"), l.ln2_gain.view_mut().into_dyn()),
                (p("ln2.bias"), l.ln2_bias.view_mut().into_dyn()),
            ]);
        }
        out.extend([
            ("mlm.bias".to_string(), self.mlm_bias.view_mut().into_dyn()),
            ("pooler.weight".to_string(), self.pooler_weight.view_mut().into_dyn()),
            ("pooler.bias".to_string(), self.pooler_bias.view_mut().into_dyn()),
            ("classifier.weight".to_string(), self.classifier_weight.view_mut().into_dyn()),
            ("classifier.bias".to_string(), self.classifier_bias.view_mut().into_dyn()),
        ]);
        out
    }

    /// Rebuilds a parameter set from named tensors, checking names and shapes
    /// against `config`.
    pub fn from_named(config: &ModelConfig, named: Vec<(String, Vec<usize>, Vec<f64>)>) -> Result<Self> {
        config.validate()?;
        let mut params = Self::zeros(config);
        let mut slots = params.tensors_mut();
        if slots.len() != named.len() {
            return Err(Error::Shape(format!(
                "expected {} tensors, found {}",
                slots.len(),
                named.len()
            )));
        }
        for ((name, slot), (got_name, dims, data)) in slots.iter_mut().zip(named) {
            if *name != got_name {
                return Err(Error::Shape(format!("expected tensor {name}, found {got_name}")));
            }
            if slot.shape() != dims.as_slice() {
                return Err(Error::Shape(format!(
                    "tensor {name}: expected shape {:?}, found {:?}",
                    slot.shape(),
                    dims
                )));
            }
            let src = ndarray::ArrayD::from_shape_vec(IxDyn(&dims), data)
                .map_err(|e| Error::Shape(format!("tensor {name}: {e}")))?;
            slot.assign(&src);
        }
        drop(slots);
        Ok(params)
    }

    /// Checks every tensor's shape against `config`.
    pub fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        let reference = Self::zeros(config);
        let mine = self.tensors();
        let want = reference.tensors();
        if mine.len() != want.len() {
            return Err(Error::Shape(format!(
                "parameter set has {} tensors, config implies {}",
                mine.len(),
                want.len()
            )));
        }
        for ((name, a), (_, b)) in mine.iter().zip(want.iter()) {
            if a.shape() != b.shape() {
                return Err(Error::Shape(format!(
                    "tensor {name}: shape {:?}, config implies {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, t) in self.tensors() {
            if t.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!("tensor {name} has a non-finite entry")));
            }
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Rounds every entry to the nearest 32-bit float, the checkpoint storage precision.
    pub fn round_to_f32(&mut self) {
        for (_, mut t) in self.tensors_mut() {
            t.mapv_inplace(|x| x as f32 as f64);
        }
    }

    /// `self += other`, elementwise over every tensor.
    pub fn add_assign(&mut self, other: &ParameterSet) {
        for ((_, mut a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a += &b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (_, mut t) in self.tensors_mut() {
            t.mapv_inplace(|x| x * s);
        }
    }
}
