//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use esglm::encoder::{batch_loss, Batch, ModelConfig, ParameterSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Gradient entries below this magnitude are compared absolutely.
pub const GRAD_FLOOR: f64 = 1e-6;

pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
    pub worst: String,
}

/// Central differences of `batch_loss` at `samples` random coordinates,
/// compared with the analytic gradient.
pub fn finite_difference_check(
    batch: &Batch,
    params: &ParameterSet,
    config: &ModelConfig,
    analytic: &ParameterSet,
    samples: usize,
    step: f64,
    seed: u64,
) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<(String, usize)> = params.tensors().iter().map(|(n, t)| (n.clone(), t.len())).collect();
    let analytic_flat: Vec<Vec<f64>> = analytic.tensors().iter().map(|(_, t)| t.iter().copied().collect()).collect();
    let mut max_rel_err: f64 = 0.0;
    let mut worst = String::new();
    for _ in 0..samples {
        let ti = rng.random_range(0..names.len());
        let ci = rng.random_range(0..names[ti].1);
        let eval = |delta: f64| {
            let mut p = params.clone();
            let mut views = p.tensors_mut();
            let entry = views[ti].1.iter_mut().nth(ci).unwrap();
            *entry += delta;
            drop(views);
            batch_loss(batch, &p, config).unwrap()
        };
        let numeric = (eval(step) - eval(-step)) / (2.0 * step);
        let a = analytic_flat[ti][ci];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_FLOOR);
        if rel > max_rel_err {
            max_rel_err = rel;
            worst = format!("{}[{}]: analytic {a:e} numeric {numeric:e}", names[ti].0, ci);
        }
    }
    GradCheck {
        max_rel_err,
        checked: samples,
        worst,
    }
}

/// Initialization plus uniform noise, so every sublayer is well away from
/// the near-linear regime of the default small init.
pub fn perturbed_params(config: &ModelConfig, seed: u64, amplitude: f64) -> ParameterSet {
    let mut p = ParameterSet::init(config, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for (_, mut t) in p.tensors_mut() {
        t.mapv_inplace(|x| x + rng.random_range(-amplitude..amplitude));
    }
    p
}

pub fn gradcheck_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 16,
        max_seq_len: 12,
        hidden_dim: 8,
        num_layers: 1,
        num_heads: 2,
        ffn_dim: 16,
        dropout_rate: 0.0,
    }
}
