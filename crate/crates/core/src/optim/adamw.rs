use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 4.5e-4,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Moments are kept in f64 whatever the parameter precision.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Tensor,
    pub v: Tensor,
    pub step: u64,
}

impl AdamState {
    pub fn new(shape: &[usize]) -> Self {
        AdamState {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            step: 0,
        }
    }
}

pub fn adamw_step<S: Scalar>(
    param: &mut Tensor<S>,
    grad: &Tensor<S>,
    state: &mut AdamState,
    cfg: &AdamConfig,
    lr_multiplier: f64,
) -> Result<()> {
    param.same_shape(grad)?;
    let grad64 = grad.cast::<f64>();
    state.m.same_shape(&grad64)?;
    state.step += 1;
    let lr = cfg.lr * lr_multiplier;
    let decay = 1.0 - lr * cfg.weight_decay;
    let bc1 = 1.0 - cfg.beta1.powf(state.step as f64);
    let bc2 = 1.0 - cfg.beta2.powf(state.step as f64);
    let m = state.m.data_mut();
    let v = state.v.data_mut();
    for (i, (p, &g)) in param.data_mut().iter_mut().zip(grad64.data()).enumerate() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let mhat = m[i] / bc1;
        let vhat = v[i] / bc2;
        let x = p.f64() * decay - lr * mhat / (vhat.sqrt() + cfg.eps);
        *p = S::lit(x);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_without_decay_is_identity() {
        let mut p = Tensor::from_rows(&[vec![1.0, -2.0]]);
        let before = p.clone();
        let mut s = AdamState::new(&[1, 2]);
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        for _ in 0..3 {
            adamw_step(&mut p, &Tensor::zeros(&[1, 2]), &mut s, &cfg, 1.0).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_matches_hand_simulation() {
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let g = 0.3;
        let mut p = Tensor::scalar(2.0);
        let mut s = AdamState::new(p.shape());
        adamw_step(&mut p, &Tensor::scalar(g), &mut s, &cfg, 1.0).unwrap();
        // m̂ = g, v̂ = g², step = lr · g / (|g| + ε)
        let m = (1.0 - 0.9) * g / (1.0 - 0.9);
        let v = (1.0 - 0.95) * g * g / (1.0 - 0.95);
        let want = 2.0 - 4.5e-4 * m / (f64::sqrt(v) + 1e-8);
        assert_eq!(p.data()[0], want);
        assert!((p.data()[0] - (2.0 - 4.5e-4)).abs() < 1e-10);

        adamw_step(&mut p, &Tensor::scalar(-g), &mut s, &cfg, 0.5).unwrap();
        let m2 = 0.9 * 0.1 * g - 0.1 * g;
        let v2 = 0.95 * 0.05 * g * g + 0.05 * g * g;
        let want2 =
            want - 0.5 * 4.5e-4 * (m2 / (1.0 - 0.81)) / ((v2 / (1.0 - 0.9025)).sqrt() + 1e-8);
        assert!((p.data()[0] - want2).abs() < 1e-15);
    }

    #[test]
    fn decay_only_shrinks_geometrically() {
        let cfg = AdamConfig::default();
        let mut p = Tensor::scalar(1.0);
        let mut s = AdamState::new(p.shape());
        for k in 1..=4 {
            adamw_step(&mut p, &Tensor::scalar(0.0), &mut s, &cfg, 1.0).unwrap();
            let want = (1.0 - 4.5e-6f64).powi(k);
            assert!((p.data()[0] - want).abs() < 1e-15);
        }
        assert!(s.v.data().iter().all(|&x| x >= 0.0));
    }
}
