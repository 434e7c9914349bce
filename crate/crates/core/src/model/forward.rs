use std::sync::Arc;

use super::config::ModelConfig;
use super::weights::{Layer, Weights};
use crate::error::Result;
use crate::tensor::{tape::AttnSpec, Scalar, SeqLayout, Tape, Var};

/// Handles recorded while building one forward pass.
pub struct Trace {
    /// Residual stream after the post-embedding norm, then after every block.
    pub residuals: Vec<Var>,
    /// Residual stream between the attention and FFN halves of each block.
    pub mids: Vec<Var>,
    /// Attention op of every layer (carries the saved probabilities).
    pub attention: Vec<Var>,
    /// Layer 0's values, which every later layer mixes into its own.
    pub v0: Option<Var>,
    pub logits: Var,
}

/// Put every parameter on the tape, as trainable leaves or as constants.
pub fn load<S: Scalar>(
    tape: &mut Tape<S>,
    weights: &Weights<crate::tensor::Tensor<S>>,
    trainable: bool,
) -> Weights<Var> {
    weights.map(|_, t| {
        if trainable {
            tape.param(t.clone())
        } else {
            tape.constant(t.clone())
        }
    })
}

/// Record the full forward pass for `ids` laid out by `layout`.
pub fn build<S: Scalar>(
    tape: &mut Tape<S>,
    config: &ModelConfig,
    p: &Weights<Var>,
    ids: &[usize],
    layout: &Arc<SeqLayout>,
) -> Result<Trace> {
    let e = tape.embed(p.embed, ids)?;
    let h = tape.rmsnorm(e, p.embed_norm)?;
    build_from(tape, config, p, 0, false, h, None, layout)
}

/// Record the pass from layer `first` on, given the residual stream `h`
/// entering it (or, with `mid`, entering its FFN half) and layer 0's values
/// (`None` when `first` is 0). Handles cover only the recorded part.
pub fn build_from<S: Scalar>(
    tape: &mut Tape<S>,
    config: &ModelConfig,
    p: &Weights<Var>,
    first: usize,
    mid: bool,
    mut h: Var,
    mut v0: Option<Var>,
    layout: &Arc<SeqLayout>,
) -> Result<Trace> {
    let mut residuals = vec![h];
    let mut mids = Vec::with_capacity(config.n_layers);
    let mut attention = Vec::with_capacity(config.n_layers);
    for (i, layer) in p.layers.iter().enumerate().skip(first) {
        if !(mid && i == first) {
            let (m, att, v) = attention_half(tape, config, layer, h, v0, layout)?;
            if v0.is_none() {
                v0 = Some(v);
            }
            h = m;
            attention.push(att);
        }
        mids.push(h);
        h = ffn_half(tape, config, layer, h, layout)?;
        residuals.push(h);
    }
    let logits = head(tape, p, h)?;
    Ok(Trace {
        residuals,
        mids,
        attention,
        v0,
        logits,
    })
}

/// Final norm and output projection.
pub fn head<S: Scalar>(tape: &mut Tape<S>, p: &Weights<Var>, h: Var) -> Result<Var> {
    let n = tape.rmsnorm(h, p.final_norm)?;
    tape.matmul(n, p.head)
}

fn canon<S: Scalar>(
    tape: &mut Tape<S>,
    x: Var,
    kernel: Option<Var>,
    layout: &Arc<SeqLayout>,
) -> Result<Var> {
    match kernel {
        Some(k) => {
            let c = tape.causal_conv(x, k, layout)?;
            tape.add(x, c)
        }
        None => Ok(x),
    }
}

/// Attention half of a decoder block. Returns the residual stream after it,
/// the attention node and the values used by this layer (layer 0's become V₀
/// for the rest).
fn attention_half<S: Scalar>(
    tape: &mut Tape<S>,
    config: &ModelConfig,
    l: &Layer<Var>,
    h: Var,
    v0: Option<Var>,
    layout: &Arc<SeqLayout>,
) -> Result<(Var, Var, Var)> {
    let dh = config.d_head();
    let (nope, rope) = (config.d_head_nope, config.d_head_rope);
    let base = config.rope_base;
    let gamma = S::lit(config.branch_scale());

    let x = tape.rmsnorm(h, l.attn_norm)?;
    let x = canon(tape, x, l.canon_a, layout)?;
    let q = tape.matmul(x, l.q)?;
    let kv = tape.matmul(x, l.kv)?;
    let q = tape.rope(q, layout, dh, nope, rope, 1.0, base)?;
    let kv = tape.rope(kv, layout, dh, nope, rope, 1.0, base)?;
    let k = if config.key_offset {
        tape.shift_nope(kv, layout, dh, nope)?
    } else {
        kv
    };
    let v = match (v0, l.lambda1, l.lambda2) {
        (Some(v0), Some(l1), Some(l2)) => {
            let a = tape.sigmoid_scale(kv, l1)?;
            let b = tape.sigmoid_scale(v0, l2)?;
            tape.add(a, b)?
        }
        _ => kv,
    };
    let spec = AttnSpec {
        n_q_heads: config.n_q_heads,
        n_kv_heads: config.n_kv_heads,
        head_dim: dh,
        scale: config.attn_scale(),
    };
    let att = tape.attention(q, k, v, spec, layout)?;
    let out = tape.rope(att, layout, dh, nope, rope, -1.0, base)?;
    let out = tape.matmul(out, l.o)?;
    let out = tape.rmsnorm(out, l.attn_post_norm)?;
    let out = tape.scale(out, gamma);
    let h = tape.add(h, out)?;
    Ok((h, att, v))
}

fn ffn_half<S: Scalar>(
    tape: &mut Tape<S>,
    config: &ModelConfig,
    l: &Layer<Var>,
    h: Var,
    layout: &Arc<SeqLayout>,
) -> Result<Var> {
    let gamma = S::lit(config.branch_scale());
    let x = tape.rmsnorm(h, l.ffn_norm)?;
    let x = canon(tape, x, l.canon_c, layout)?;
    let u = tape.matmul(x, l.up)?;
    let u = canon(tape, u, l.canon_d, layout)?;
    let u = tape.relu_sq(u);
    let f = tape.matmul(u, l.down)?;
    let f = tape.rmsnorm(f, l.ffn_post_norm)?;
    let f = tape.scale(f, gamma);
    tape.add(h, f)
}
