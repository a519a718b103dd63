//! AdamW with decoupled weight decay.

use crate::error::{Error, Result};
use crate::model::{ModelParams, OptimizerState};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

/// One AdamW update of a flat slice at 1-based step `step`:
/// `θ ← θ − lr·wd·θ`, then `θ ← θ − lr·m̂/(√v̂ + ε)`.
pub fn adamw_update<F: Real>(param: &mut [F], grad: &[F], m: &mut [F], v: &mut [F], step: u64, lr: f64, hp: &AdamWConfig) {
    let (b1, b2) = (F::lit(hp.beta1), F::lit(hp.beta2));
    let (one_b1, one_b2) = (F::one() - b1, F::one() - b2);
    let bc1 = F::lit(1.0 - hp.beta1.powf(step as f64));
    let bc2 = F::lit(1.0 - hp.beta2.powf(step as f64));
    let lr_f = F::lit(lr);
    let decay = F::one() - F::lit(lr * hp.weight_decay);
    let eps = F::lit(hp.eps);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + one_b1 * g;
        v[i] = b2 * v[i] + one_b2 * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] = param[i] * decay - lr_f * m_hat / (v_hat.sqrt() + eps);
    }
}

pub fn zero_state<F: Real>(params: &ModelParams<F>) -> OptimizerState<F> {
    OptimizerState {
        step: 0,
        m: params.zeros_like(),
        v: params.zeros_like(),
    }
}

/// Global L2 norm over the trainable gradients.
pub fn grad_norm<F: Real>(grads: &ModelParams<F>, trainable: &dyn Fn(&str) -> bool) -> f64 {
    grads
        .named()
        .iter()
        .filter(|(n, _)| trainable(n))
        .flat_map(|(_, t)| t.data.iter())
        .map(|g| g.f64() * g.f64())
        .sum::<f64>()
        .sqrt()
}

/// Rescales gradients to `max_norm` when above it; returns the pre-clip norm.
pub fn clip_grad_norm<F: Real>(grads: &mut ModelParams<F>, max_norm: f64, trainable: &dyn Fn(&str) -> bool) -> f64 {
    let norm = grad_norm(grads, trainable);
    if max_norm > 0.0 && norm > max_norm {
        let s = F::lit(max_norm / norm);
        for (name, t) in grads.named_mut() {
            if trainable(&name) {
                t.data.iter_mut().for_each(|g| *g *= s);
            }
        }
    }
    norm
}

/// Applies one AdamW step to every trainable tensor. Non-finite gradients
/// abort the step before anything is modified.
pub fn adamw_step<F: Real>(
    params: &mut ModelParams<F>,
    grads: &ModelParams<F>,
    state: &mut OptimizerState<F>,
    lr: f64,
    hp: &AdamWConfig,
    trainable: &dyn Fn(&str) -> bool,
) -> Result<()> {
    let g = grads.named();
    if let Some((name, _)) = g.iter().find(|(n, t)| trainable(n) && !t.is_finite()) {
        return Err(Error::NonFiniteGradient(name.clone()));
    }
    state.step += 1;
    let step = state.step;
    let ms = state.m.named_mut();
    let vs = state.v.named_mut();
    for ((((name, p), (_, gt)), (_, m)), (_, v)) in params.named_mut().into_iter().zip(g).zip(ms).zip(vs) {
        if trainable(&name) {
            adamw_update(&mut p.data, &gt.data, &mut m.data, &mut v.data, step, lr, hp);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        let hp = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut p = [1.5f64, -2.0];
        let mut m = [0.2f64, -0.1];
        let mut v = [0.04f64, 0.01];
        adamw_update(&mut p, &[0.0, 0.0], &mut m, &mut v, 3, 0.0, &hp);
        assert_eq!(p, [1.5, -2.0]);
        assert!((m[0] - 0.18).abs() < 1e-15 && (v[0] - 0.038).abs() < 1e-15);
    }

    #[test]
    fn first_step_unit_gradient() {
        let hp = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let lr = 1e-3;
        let mut p = [0.0f64];
        let (mut m, mut v) = ([0.0f64], [0.0f64]);
        adamw_update(&mut p, &[1.0], &mut m, &mut v, 1, lr, &hp);
        assert!((p[0] - (-lr / (1.0 + hp.eps))).abs() < 1e-18);
    }

    #[test]
    fn weight_decay_is_geometric() {
        let hp = AdamWConfig {
            weight_decay: 0.05,
            ..Default::default()
        };
        let lr = 0.1;
        let mut p = [2.0f64];
        let (mut m, mut v) = ([0.0f64], [0.0f64]);
        for step in 1..=10 {
            adamw_update(&mut p, &[0.0], &mut m, &mut v, step, lr, &hp);
        }
        assert!((p[0] - 2.0 * (1.0f64 - lr * 0.05).powi(10)).abs() < 1e-14);
    }
}
