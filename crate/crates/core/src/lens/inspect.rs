use std::sync::Arc;

use crate::data::{TokenSequence, VOCAB_SIZE};
use crate::error::{Error, Result};
use crate::model::{forward, Model};
use crate::tensor::{softmax_in_place, AttentionProbs, Scalar, SeqLayout, Tensor};

/// Everything the analyses read from one forward pass over one sequence.
#[derive(Clone, Debug)]
pub struct Inspection {
    pub ids: Vec<u8>,
    /// `[T × 21]` next-token distributions from each residual stream through
    /// the final norm and head: index 0 is the post-embedding stream, the last
    /// is the model output.
    pub layer_probs: Vec<Tensor>,
    /// Distributions from the negated final stream.
    pub inverse_probs: Tensor,
    /// Attention weights, one entry per layer.
    pub attention: Vec<AttentionProbs>,
}

impl Inspection {
    pub fn final_probs(&self) -> &Tensor {
        self.layer_probs
            .last()
            .expect("at least the embedding stream")
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Softmax over the 21 real tokens of each padded logit row.
pub fn vocab_probs<S: Scalar>(logits: &Tensor<S>) -> Tensor {
    let t = logits.rows();
    let mut out = Tensor::zeros(&[t, VOCAB_SIZE]);
    for r in 0..t {
        let row = out.row_mut(r);
        for (o, x) in row.iter_mut().zip(&logits.row(r)[..VOCAB_SIZE]) {
            *o = x.f64();
        }
        softmax_in_place(row);
    }
    out
}

pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in p.iter().enumerate() {
        if x > p[best] {
            best = i;
        }
    }
    best
}

pub fn inspect<S: Scalar>(model: &Model<S>, seq: &TokenSequence) -> Result<Inspection> {
    if seq.is_empty() {
        return Err(Error::Input("cannot inspect an empty sequence".into()));
    }
    let ids = seq.as_usize();
    let mut r = model.record(&ids, Arc::new(SeqLayout::single(ids.len())))?;
    let mut layer_probs = Vec::with_capacity(r.trace.residuals.len());
    for &h in &r.trace.residuals.clone() {
        let logits = forward::head(&mut r.tape, &r.params, h)?;
        layer_probs.push(vocab_probs(r.tape.value(logits)));
    }
    let last = *r.trace.residuals.last().expect("non-empty");
    let neg = r.tape.scale(last, S::lit(-1.0));
    let inv = forward::head(&mut r.tape, &r.params, neg)?;
    let inverse_probs = vocab_probs(r.tape.value(inv));
    let attention = r
        .trace
        .attention
        .iter()
        .map(|&a| {
            r.tape
                .attention_probs(a)
                .map(|p| p.cast())
                .ok_or_else(|| Error::Evaluation("attention weights were not saved".into()))
        })
        .collect::<Result<_>>()?;
    Ok(Inspection {
        ids: seq.ids().to_vec(),
        layer_probs,
        inverse_probs,
        attention,
    })
}
