use serde::{Deserialize, Serialize};

use super::polar::{
    coefficient_schedule, polar_express_with, Quintic, DEFAULT_ITERS, DEFAULT_LOWER,
};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MuonConfig {
    pub lr: f64,
    pub momentum: f64,
    pub polar_iters: usize,
    /// Lower end of the singular-value interval the coefficients target.
    pub polar_lower: f64,
    pub nesterov: bool,
    /// Per-output-column second-moment normalisation of the polar factor.
    pub normuon: bool,
    pub normuon_beta: f64,
}

impl Default for MuonConfig {
    fn default() -> Self {
        MuonConfig {
            lr: 0.015,
            momentum: 0.95,
            polar_iters: DEFAULT_ITERS,
            polar_lower: DEFAULT_LOWER,
            nesterov: false,
            normuon: false,
            normuon_beta: 0.95,
        }
    }
}

impl MuonConfig {
    pub fn schedule(&self) -> Result<Vec<Quintic>> {
        if self.polar_iters == 0 {
            return Err(Error::Config("polar_iters must be at least 1".into()));
        }
        coefficient_schedule(self.polar_iters, self.polar_lower)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MuonState {
    pub momentum: Tensor,
    /// One entry per output column, present when NorMuon is on.
    pub col_v: Option<Tensor>,
}

impl MuonState {
    pub fn new(shape: &[usize]) -> Self {
        MuonState {
            momentum: Tensor::zeros(shape),
            col_v: None,
        }
    }
}

/// `√(n_out / n_in)` for a weight applied as `x · W`, `W: [n_in × n_out]`.
pub fn spectral_scale(shape: &[usize]) -> f64 {
    (shape[1] as f64 / shape[0] as f64).sqrt()
}

/// Advance the momentum and return the update before the learning rate:
/// the polar factor of the buffer times the spectral scale.
pub fn muon_update(
    grad: &Tensor,
    state: &mut MuonState,
    cfg: &MuonConfig,
    schedule: &[Quintic],
) -> Result<Tensor> {
    if grad.ndim() != 2 {
        return Err(Error::Routing(format!(
            "Muon handles matrices only, got shape {:?}",
            grad.shape()
        )));
    }
    state.momentum.same_shape(grad)?;
    let mut buf = state.momentum.scale(cfg.momentum);
    buf.add_assign(grad);
    state.momentum = buf;
    let dir = if cfg.nesterov {
        let mut d = grad.clone();
        d.axpy(cfg.momentum, &state.momentum);
        d
    } else {
        state.momentum.clone()
    };
    let mut o: Tensor = polar_express_with(&dir.cast::<f32>(), schedule)?.cast();
    if cfg.normuon {
        normalise_columns(&mut o, state, cfg.normuon_beta);
    }
    Ok(o.scale(spectral_scale(grad.shape())))
}

fn normalise_columns(o: &mut Tensor, state: &mut MuonState, beta: f64) {
    let (rows, cols) = (o.shape()[0], o.shape()[1]);
    let norm = o.frobenius();
    let v = state.col_v.get_or_insert_with(|| Tensor::zeros(&[cols]));
    let mut ms = vec![0.0; cols];
    for r in 0..rows {
        for (c, x) in o.row(r).iter().enumerate() {
            ms[c] += x * x / rows as f64;
        }
    }
    for (vc, m) in v.data_mut().iter_mut().zip(&ms) {
        *vc = beta * *vc + (1.0 - beta) * m;
    }
    let inv: Vec<f64> = v.data().iter().map(|x| 1.0 / (x + 1e-8).sqrt()).collect();
    for r in 0..rows {
        for (x, s) in o.row_mut(r).iter_mut().zip(&inv) {
            *x *= s;
        }
    }
    let after = o.frobenius();
    if after > 0.0 {
        *o = o.scale(norm / after);
    }
}

pub fn muon_step<S: Scalar>(
    param: &mut Tensor<S>,
    grad: &Tensor<S>,
    state: &mut MuonState,
    cfg: &MuonConfig,
    schedule: &[Quintic],
    lr_multiplier: f64,
) -> Result<()> {
    param.same_shape(grad)?;
    let u = muon_update(&grad.cast(), state, cfg, schedule)?;
    let lr = cfg.lr * lr_multiplier;
    for (p, d) in param.data_mut().iter_mut().zip(u.data()) {
        *p = S::lit(p.f64() - lr * d);
    }
    Ok(())
}
