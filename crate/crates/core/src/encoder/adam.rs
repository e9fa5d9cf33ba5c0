use ndarray::Zip;

use super::config::TrainConfig;
use super::params::ParameterSet;
use crate::error::{Error, Result};

/// First and second moments, shaped like the parameters, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: ParameterSet,
    pub v: ParameterSet,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(params: &ParameterSet) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update. On a non-finite result neither the
/// parameters nor the state are modified.
pub fn adam_step(
    params: &mut ParameterSet,
    grads: &ParameterSet,
    state: &mut OptimizerState,
    tc: &TrainConfig,
) -> Result<()> {
    tc.validate()?;
    let mut next_params = params.clone();
    let mut next = state.clone();
    next.t += 1;
    let (b1, b2) = (tc.adam_beta1, tc.adam_beta2);
    let c1 = 1.0 - b1.powi(next.t as i32);
    let c2 = 1.0 - b2.powi(next.t as i32);
    let lr = tc.learning_rate;
    let eps = tc.adam_epsilon;

    let mut p_all = next_params.tensors_mut();
    let g_all = grads.tensors();
    let mut m_all = next.m.tensors_mut();
    let mut v_all = next.v.tensors_mut();
    if p_all.len() != g_all.len() || m_all.len() != g_all.len() {
        return Err(Error::Shape("gradient set does not mirror the parameters".into()));
    }
    for (((p, g), m), v) in p_all
        .iter_mut()
        .zip(g_all.iter())
        .zip(m_all.iter_mut())
        .zip(v_all.iter_mut())
    {
        if p.1.shape() != g.1.shape() || m.1.shape() != g.1.shape() || v.1.shape() != g.1.shape() {
            return Err(Error::Shape(format!("tensor {} shape differs from its gradient", p.0)));
        }
        Zip::from(&mut p.1)
            .and(&g.1)
            .and(&mut m.1)
            .and(&mut v.1)
            .for_each(|theta, &grad, mi, vi| {
                *mi = b1 * *mi + (1.0 - b1) * grad;
                *vi = b2 * *vi + (1.0 - b2) * grad * grad;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *theta -= lr * m_hat / (v_hat.sqrt() + eps);
            });
    }
    drop((p_all, m_all, v_all));
    next_params
        .check_finite()
        .map_err(|e| Error::Numeric(format!("adam update: {e}")))?;
    *params = next_params;
    *state = next;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::ModelConfig;

    fn cfg() -> ModelConfig {
        ModelConfig {
            vocab_size: 6,
            max_seq_len: 4,
            hidden_dim: 2,
            num_layers: 1,
            num_heads: 1,
            ffn_dim: 2,
            dropout_rate: 0.0,
        }
    }

    /// Scalar Adam recurrence, written out independently.
    fn reference(theta: f64, grads: &[f64], lr: f64) -> Vec<f64> {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut m, mut v, mut th) = (0.0, 0.0, theta);
        let mut out = vec![];
        for (i, g) in grads.iter().enumerate() {
            let t = (i + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            th -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
            out.push(th);
        }
        out
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = ParameterSet::init(&cfg(), 1).unwrap();
        let before = p.clone();
        let g = p.zeros_like();
        let mut s = OptimizerState::new(&p);
        adam_step(&mut p, &g, &mut s, &TrainConfig::default()).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_by_hand() {
        let mut p = ParameterSet::zeros(&cfg());
        p.classifier_bias[0] = 1.0;
        let mut g = p.zeros_like();
        g.classifier_bias[0] = 1.0;
        let mut s = OptimizerState::new(&p);
        let tc = TrainConfig { learning_rate: 0.1, ..Default::default() };
        adam_step(&mut p, &g, &mut s, &tc).unwrap();
        assert!((s.m.classifier_bias[0] - 0.1).abs() < 1e-15);
        assert!((s.v.classifier_bias[0] - 0.001).abs() < 1e-15);
        let expected = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((p.classifier_bias[0] - expected).abs() < 1e-12);
        assert!((p.classifier_bias[0] - 0.9).abs() < 1e-8);
    }

    #[test]
    fn consecutive_steps_follow_the_recurrence() {
        let mut p = ParameterSet::zeros(&cfg());
        p.pooler_bias[1] = 1.0;
        let mut g = p.zeros_like();
        g.pooler_bias[1] = 0.5;
        let mut s = OptimizerState::new(&p);
        let tc = TrainConfig { learning_rate: 0.01, ..Default::default() };
        let expected = reference(1.0, &[0.5, 0.5, -0.25], 0.01);
        let mut got = vec![];
        let mut prev = 1.0;
        let mut steps = vec![];
        for (i, gv) in [0.5, 0.5, -0.25].into_iter().enumerate() {
            g.pooler_bias[1] = gv;
            adam_step(&mut p, &g, &mut s, &tc).unwrap();
            got.push(p.pooler_bias[1]);
            steps.push(prev - p.pooler_bias[1]);
            prev = p.pooler_bias[1];
            assert_eq!(s.t, i as u64 + 1);
        }
        for (a, b) in got.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-14);
        }
        // With a constant gradient the bias-corrected ratio m_hat/sqrt(v_hat) is
        // the same at t=1 and t=2 even though the raw moments differ.
        assert!((steps[0] - steps[1]).abs() < 1e-15);
        let raw = |t: i32| {
            let m = 0.5 * (1.0 - 0.9f64.powi(t));
            let v = 0.25 * (1.0 - 0.999f64.powi(t));
            m / v.sqrt()
        };
        assert!((raw(1) - raw(2)).abs() > 1e-3);
        assert!(s.v.tensors().iter().all(|(_, t)| t.iter().all(|&x| x >= 0.0)));
    }

    #[test]
    fn non_finite_update_is_rejected_atomically() {
        let mut p = ParameterSet::init(&cfg(), 2).unwrap();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.layers[0].w1[[0, 0]] = f64::NAN;
        let mut s = OptimizerState::new(&p);
        assert!(matches!(
            adam_step(&mut p, &g, &mut s, &TrainConfig::default()),
            Err(Error::Numeric(_))
        ));
        assert_eq!(p, before);
        assert_eq!(s.t, 0);
    }
}
