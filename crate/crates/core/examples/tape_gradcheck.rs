//! Record a small computation on the tape, take its gradient and check it
//! against central differences, then spot-check the full model loss.

use std::sync::Arc;

use proust::tensor::{grad_check, tape::Tape, SeqLayout, Tensor};
use proust::{Model, ModelConfig, Result};

fn main() -> Result<()> {
    // f(x) = Σ softmax(x ⊙ x)₀ over rows, a nonlinear scalar of a 3×4 input
    let x = Tensor::from_fn(&[3, 4], |i| 0.3 * i as f64 - 1.0);
    let f = |p: &Tensor| -> Result<(f64, Tensor)> {
        let mut tape = Tape::new();
        let v = tape.param(p.clone());
        let sq = tape.mul(v, v)?;
        let s = tape.softmax_rows(sq);
        let w = tape.constant(Tensor::from_fn(&[3, 4], |i| (i % 4 == 0) as u8 as f64));
        let picked = tape.mul(s, w)?;
        let out = tape.sum(picked);
        let g = tape.backward(out)?;
        Ok((tape.value(out).data()[0], g.get(v).expect("param").clone()))
    };
    let r = grad_check(f, &x, 1e-5)?;
    println!(
        "softmax toy: max rel error {:.2e} over {} coords",
        r.max_rel_error, r.coords_checked
    );

    let model: Model = Model::new(ModelConfig::toy(2, 32), 3)?;
    let ids: Vec<usize> = "MKTAYIAKQRQISFVK"
        .chars()
        .map(|c| c as usize % 20)
        .collect();
    let targets: Vec<Option<usize>> = (0..ids.len()).map(|t| ids.get(t + 1).copied()).collect();
    let layout = Arc::new(SeqLayout::single(ids.len()));
    let (loss, grads) = model.loss_and_grads(&ids, &targets, layout.clone())?;
    println!("toy model loss {loss:.6} (ln 21 = {:.6})", 21f64.ln());

    // a few head coordinates by hand
    for i in [0, 17, 300] {
        let eps = 1e-5;
        let mut m = model.clone();
        m.weights.head.data_mut()[i] += eps;
        let up = m.loss(&ids, &targets, layout.clone())?;
        m.weights.head.data_mut()[i] -= 2.0 * eps;
        let down = m.loss(&ids, &targets, layout.clone())?;
        let numeric = (up - down) / (2.0 * eps);
        println!(
            "head[{i}]: analytic {:+.6e} numeric {numeric:+.6e}",
            grads.head.data()[i]
        );
    }
    Ok(())
}
