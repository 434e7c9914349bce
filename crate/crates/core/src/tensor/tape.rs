//! Define-by-run reverse-mode differentiation.
//!
//! Every op appends a node holding its output and enough saved state to run
//! its vector-Jacobian product. [`Tape::backward`] walks the nodes in exact
//! reverse order and accumulates gradients additively at fan-out.

use std::sync::Arc;

use super::{conv_forward, inv_rms, relu_sq, rope_rows, sigmoid, softmax_in_place, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-row position and segment information for a (possibly packed) stream.
///
/// `starts[t]` is the index of the first row of the sequence that row `t`
/// belongs to; attention, convolution and key shifting never reach before it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeqLayout {
    positions: Vec<usize>,
    starts: Vec<usize>,
}

impl SeqLayout {
    pub fn single(len: usize) -> Self {
        SeqLayout {
            positions: (0..len).collect(),
            starts: vec![0; len],
        }
    }

    /// Block-diagonal layout: every sequence restarts at position 0.
    pub fn packed(lengths: &[usize]) -> Self {
        let mut positions = Vec::new();
        let mut starts = Vec::new();
        let mut off = 0;
        for &n in lengths {
            positions.extend(0..n);
            starts.extend(std::iter::repeat_n(off, n));
            off += n;
        }
        SeqLayout { positions, starts }
    }

    /// Layout for rows `offset..offset+len` of a single unbroken sequence.
    pub fn suffix(offset: usize, len: usize) -> Self {
        SeqLayout {
            positions: (offset..offset + len).collect(),
            starts: vec![0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    /// True when row `t` is the first row of its sequence.
    pub fn is_start(&self, t: usize) -> bool {
        self.starts[t] == t
    }
}

/// Shape information for the fused grouped-query attention op.
#[derive(Clone, Copy, Debug)]
pub struct AttnSpec {
    pub n_q_heads: usize,
    pub n_kv_heads: usize,
    pub head_dim: usize,
    pub scale: f64,
}

/// Post-softmax attention weights saved by the forward pass.
///
/// Rows are ragged: query `t` stores weights for keys `starts[t]..=t`.
#[derive(Clone, Debug)]
pub struct AttentionProbs<S = f64> {
    pub n_heads: usize,
    row_offsets: Vec<usize>,
    starts: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> AttentionProbs<S> {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn cast<T: Scalar>(&self) -> AttentionProbs<T> {
        AttentionProbs {
            n_heads: self.n_heads,
            row_offsets: self.row_offsets.clone(),
            starts: self.starts.clone(),
            data: self.data.iter().map(|x| T::lit(x.f64())).collect(),
        }
    }

    /// `(first key index, weights)` for head `h`, query `t`.
    pub fn row(&self, h: usize, t: usize) -> (usize, &[S]) {
        let total = *self.row_offsets.last().unwrap();
        let a = h * total + self.row_offsets[t];
        let b = h * total + self.row_offsets[t + 1];
        (self.starts[t], &self.data[a..b])
    }
}

#[derive(Clone, Copy, Debug)]
struct RopeSpec {
    head_dim: usize,
    rope_start: usize,
    rope_dim: usize,
    sign: f64,
    base: f64,
}

enum Op<S: Scalar> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    Sum(Var),
    SigmoidScale(Var, Var),
    RmsNorm {
        x: Var,
        gain: Var,
        inv: Vec<S>,
    },
    Conv {
        x: Var,
        kernel: Var,
        layout: Arc<SeqLayout>,
    },
    ReluSq(Var),
    Rope {
        x: Var,
        spec: RopeSpec,
        layout: Arc<SeqLayout>,
    },
    ShiftNope {
        x: Var,
        head_dim: usize,
        nope_dim: usize,
        layout: Arc<SeqLayout>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        spec: AttnSpec,
        probs: AttentionProbs<S>,
    },
    Embed {
        table: Var,
        ids: Vec<usize>,
    },
    SoftmaxRows(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Tensor<S>,
        count: usize,
    },
}

struct Node<S: Scalar> {
    value: Tensor<S>,
    op: Op<S>,
    needs_grad: bool,
}

/// The recording tape.
pub struct Tape<S: Scalar = f64> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients indexed by [`Var`]; `None` where no gradient reached the node.
pub struct Gradients<S = f64> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<S>> {
        self.grads[v.0].take()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Differentiable leaf (a parameter or an input under test).
    pub fn param(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, c: S) -> Var {
        let out = self.value(a).scale(c);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, c), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let ng = self.ng(a);
        self.push(out, Op::Sum(a), ng)
    }

    /// `σ(lambda) · x` for a one-element `lambda`.
    pub fn sigmoid_scale(&mut self, x: Var, lambda: Var) -> Result<Var> {
        if self.value(lambda).numel() != 1 {
            return Err(Error::Dimension("sigmoid_scale wants a scalar".into()));
        }
        let s = sigmoid(self.value(lambda).data()[0]);
        let out = self.value(x).scale(s);
        let ng = self.ng(x) || self.ng(lambda);
        Ok(self.push(out, Op::SigmoidScale(x, lambda), ng))
    }

    pub fn rmsnorm(&mut self, x: Var, gain: Var) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.last_dim();
        let g = self.value(gain);
        if g.numel() != d {
            return Err(Error::Dimension(format!(
                "rmsnorm gain {} vs width {d}",
                g.numel()
            )));
        }
        let mut out = xv.clone();
        let mut inv = Vec::with_capacity(xv.rows());
        for row in out.data_mut().chunks_mut(d) {
            let r = inv_rms(row);
            inv.push(r);
            for (v, &gg) in row.iter_mut().zip(g.data()) {
                *v = *v * r * gg;
            }
        }
        let ng = self.ng(x) || self.ng(gain);
        Ok(self.push(out, Op::RmsNorm { x, gain, inv }, ng))
    }

    /// Depthwise causal convolution that restarts at every sequence boundary.
    pub fn causal_conv(&mut self, x: Var, kernel: Var, layout: &Arc<SeqLayout>) -> Result<Var> {
        let xv = self.value(x);
        let kv = self.value(kernel);
        let (t_len, d) = (xv.rows(), xv.last_dim());
        if kv.ndim() != 2 || kv.last_dim() != d || t_len != layout.len() {
            return Err(Error::Dimension(format!(
                "conv: input {:?}, kernel {:?}, layout {}",
                xv.shape(),
                kv.shape(),
                layout.len()
            )));
        }
        let mut out = vec![S::zero(); t_len * d];
        conv_forward(
            xv.data(),
            kv.data(),
            kv.shape()[0],
            d,
            layout.starts(),
            &mut out,
        );
        let out = Tensor::new(xv.shape().to_vec(), out)?;
        let ng = self.ng(x) || self.ng(kernel);
        Ok(self.push(
            out,
            Op::Conv {
                x,
                kernel,
                layout: layout.clone(),
            },
            ng,
        ))
    }

    pub fn relu_sq(&mut self, x: Var) -> Var {
        let out = self.value(x).map(relu_sq);
        let ng = self.ng(x);
        self.push(out, Op::ReluSq(x), ng)
    }

    /// Rotary embedding on the `[rope_start, rope_start + rope_dim)` slice of
    /// each `head_dim` block. `sign = -1.0` rotates backwards.
    #[allow(clippy::too_many_arguments)]
    pub fn rope(
        &mut self,
        x: Var,
        layout: &Arc<SeqLayout>,
        head_dim: usize,
        rope_start: usize,
        rope_dim: usize,
        sign: f64,
        base: f64,
    ) -> Result<Var> {
        let xv = self.value(x);
        let w = xv.last_dim();
        if !rope_dim.is_multiple_of(2)
            || !w.is_multiple_of(head_dim)
            || rope_start + rope_dim > head_dim
        {
            return Err(Error::Config(format!(
                "rope slice {rope_start}+{rope_dim} in head {head_dim}, width {w}"
            )));
        }
        if xv.rows() != layout.len() {
            return Err(Error::Dimension("rope: layout length".into()));
        }
        let mut out = xv.clone();
        let spec = RopeSpec {
            head_dim,
            rope_start,
            rope_dim,
            sign,
            base,
        };
        rope_rows(
            out.data_mut(),
            w,
            layout.positions(),
            head_dim,
            rope_start,
            rope_dim,
            sign,
            base,
        );
        let ng = self.ng(x);
        Ok(self.push(
            out,
            Op::Rope {
                x,
                spec,
                layout: layout.clone(),
            },
            ng,
        ))
    }

    /// Key offset: the first `nope_dim` columns of each head block take the
    /// previous row's values; the first row of a sequence receives zeros.
    pub fn shift_nope(
        &mut self,
        x: Var,
        layout: &Arc<SeqLayout>,
        head_dim: usize,
        nope_dim: usize,
    ) -> Result<Var> {
        let xv = self.value(x);
        let w = xv.last_dim();
        if !w.is_multiple_of(head_dim) || nope_dim > head_dim || xv.rows() != layout.len() {
            return Err(Error::Dimension("shift_nope".into()));
        }
        let heads = w / head_dim;
        let mut out = xv.clone();
        let src = xv.data();
        let dst = out.data_mut();
        for t in 0..layout.len() {
            for h in 0..heads {
                let a = t * w + h * head_dim;
                if layout.is_start(t) {
                    dst[a..a + nope_dim].iter_mut().for_each(|v| *v = S::zero());
                } else {
                    dst[a..a + nope_dim].copy_from_slice(&src[a - w..a - w + nope_dim]);
                }
            }
        }
        let ng = self.ng(x);
        Ok(self.push(
            out,
            Op::ShiftNope {
                x,
                head_dim,
                nope_dim,
                layout: layout.clone(),
            },
            ng,
        ))
    }

    /// Causal grouped-query attention. `q` is `[T × n_q·d]`, `k` and `v` are
    /// `[T × n_kv·d]`; query head `i` reads kv head `i / (n_q / n_kv)`.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        spec: AttnSpec,
        layout: &Arc<SeqLayout>,
    ) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let AttnSpec {
            n_q_heads,
            n_kv_heads,
            head_dim: dh,
            scale,
        } = spec;
        let t_len = layout.len();
        if n_kv_heads == 0 || n_q_heads % n_kv_heads != 0 {
            return Err(Error::Config(
                "query heads not divisible by kv heads".into(),
            ));
        }
        if qv.shape() != [t_len, n_q_heads * dh]
            || kv.shape() != [t_len, n_kv_heads * dh]
            || vv.shape() != kv.shape()
        {
            return Err(Error::Dimension(format!(
                "attention q {:?} k {:?} v {:?}",
                qv.shape(),
                kv.shape(),
                vv.shape()
            )));
        }
        let group = n_q_heads / n_kv_heads;
        let scale = S::lit(scale);
        let (qw, kw) = (n_q_heads * dh, n_kv_heads * dh);
        let starts = layout.starts().to_vec();
        let mut row_offsets = Vec::with_capacity(t_len + 1);
        row_offsets.push(0);
        for t in 0..t_len {
            let prev = *row_offsets.last().unwrap();
            row_offsets.push(prev + t + 1 - starts[t]);
        }
        let total = row_offsets[t_len];
        let mut probs = vec![S::zero(); n_q_heads * total];
        let mut out = vec![S::zero(); t_len * qw];
        let (qd, kd, vd) = (qv.data(), kv.data(), vv.data());
        for h in 0..n_q_heads {
            let g = h / group;
            for t in 0..t_len {
                let qrow = &qd[t * qw + h * dh..t * qw + (h + 1) * dh];
                let p = &mut probs[h * total + row_offsets[t]..h * total + row_offsets[t + 1]];
                for (slot, j) in p.iter_mut().zip(starts[t]..=t) {
                    let krow = &kd[j * kw + g * dh..j * kw + (g + 1) * dh];
                    *slot = dot(qrow, krow) * scale;
                }
                softmax_in_place(p);
                let o = &mut out[t * qw + h * dh..t * qw + (h + 1) * dh];
                for (&pj, j) in p.iter().zip(starts[t]..=t) {
                    let vrow = &vd[j * kw + g * dh..j * kw + (g + 1) * dh];
                    for (oc, &vc) in o.iter_mut().zip(vrow) {
                        *oc += pj * vc;
                    }
                }
            }
        }
        let probs = AttentionProbs {
            n_heads: n_q_heads,
            row_offsets,
            starts,
            data: probs,
        };
        let out = Tensor::new(vec![t_len, qw], out)?;
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                spec,
                probs,
            },
            ng,
        ))
    }

    pub fn attention_probs(&self, v: Var) -> Option<&AttentionProbs<S>> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Row gather from an embedding table.
    pub fn embed(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (rows, d) = (tv.rows(), tv.last_dim());
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= rows {
                return Err(Error::Input(format!(
                    "token id {id} outside table of {rows}"
                )));
            }
            out.extend_from_slice(tv.row(id));
        }
        let out = Tensor::new(vec![ids.len(), d], out)?;
        let ng = self.ng(table);
        Ok(self.push(
            out,
            Op::Embed {
                table,
                ids: ids.to_vec(),
            },
            ng,
        ))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let out = self.value(x).softmax_rows();
        let ng = self.ng(x);
        self.push(out, Op::SoftmaxRows(x), ng)
    }

    /// Mean next-token negative log-likelihood. Columns at or beyond `valid`
    /// are treated as `-inf`; rows whose target is `None` are skipped.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[Option<usize>],
        valid: usize,
    ) -> Result<Var> {
        let lv = self.value(logits);
        let (rows, w) = (lv.rows(), lv.last_dim());
        if targets.len() != rows || valid == 0 || valid > w {
            return Err(Error::Dimension("cross_entropy targets".into()));
        }
        let mut probs = Tensor::zeros(&[rows, w]);
        let mut total = S::zero();
        let mut count = 0usize;
        for (t, tgt) in targets.iter().enumerate() {
            let p = &mut probs.row_mut(t)[..valid];
            p.copy_from_slice(&lv.row(t)[..valid]);
            softmax_in_place(p);
            if let Some(y) = *tgt {
                if y >= valid {
                    return Err(Error::Input(format!("target {y} in padded vocabulary")));
                }
                total -= log_softmax_at(&lv.row(t)[..valid], y);
                count += 1;
            }
        }
        let loss = if count == 0 {
            S::zero()
        } else {
            total / S::from_usize(count).unwrap()
        };
        let ng = self.ng(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
            ng,
        ))
    }

    /// Reverse sweep from a one-element output.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Dimension("backward needs a scalar loss".into()));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(S::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else {
                continue;
            };
            self.node_backward(&node.op, &node.value, &dy, &mut grads)?;
            grads[i] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    fn node_backward(
        &self,
        op: &Op<S>,
        y: &Tensor<S>,
        dy: &Tensor<S>,
        grads: &mut [Option<Tensor<S>>],
    ) -> Result<()> {
        let acc = |v: Var, g: Tensor<S>, grads: &mut [Option<Tensor<S>>]| {
            if !self.ng(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        };
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    acc(*a, dy.matmul_nt(self.value(*b))?, grads);
                }
                if self.ng(*b) {
                    acc(*b, self.value(*a).matmul_tn(dy)?, grads);
                }
            }
            Op::Add(a, b) => {
                acc(*a, dy.clone(), grads);
                acc(*b, dy.clone(), grads);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, dy.zip_map(bv, |g, x| g * x)?, grads);
                acc(*b, dy.zip_map(av, |g, x| g * x)?, grads);
            }
            Op::Scale(a, c) => acc(*a, dy.scale(*c), grads),
            Op::Sum(a) => {
                let g = dy.data()[0];
                acc(*a, Tensor::full(self.value(*a).shape(), g), grads);
            }
            Op::SigmoidScale(x, lambda) => {
                let xv = self.value(*x);
                let s = sigmoid(self.value(*lambda).data()[0]);
                acc(*x, dy.scale(s), grads);
                let inner: S = dy.data().iter().zip(xv.data()).map(|(&g, &v)| g * v).sum();
                acc(
                    *lambda,
                    Tensor::new(
                        self.value(*lambda).shape().to_vec(),
                        vec![s * (S::one() - s) * inner],
                    )?,
                    grads,
                );
            }
            Op::RmsNorm { x, gain, inv } => {
                let xv = self.value(*x);
                let gv = self.value(*gain);
                let d = xv.last_dim();
                let dn = S::from_usize(d).unwrap();
                let mut dx = Tensor::zeros(xv.shape());
                let mut dg = vec![S::zero(); d];
                for (t, &r) in inv.iter().enumerate() {
                    let xr = xv.row(t);
                    let gr = dy.row(t);
                    let mut inner = S::zero();
                    for c in 0..d {
                        dg[c] += gr[c] * xr[c] * r;
                        inner += gr[c] * gv.data()[c] * xr[c];
                    }
                    let k = r * r * r * inner / dn;
                    let out = dx.row_mut(t);
                    for c in 0..d {
                        out[c] = r * gv.data()[c] * gr[c] - xr[c] * k;
                    }
                }
                acc(*x, dx, grads);
                acc(*gain, Tensor::new(gv.shape().to_vec(), dg)?, grads);
            }
            Op::Conv { x, kernel, layout } => {
                let xv = self.value(*x);
                let kv = self.value(*kernel);
                let (d, width) = (xv.last_dim(), kv.shape()[0]);
                let mut dx = vec![S::zero(); xv.numel()];
                let mut dk = vec![S::zero(); kv.numel()];
                let (xd, kd, gd) = (xv.data(), kv.data(), dy.data());
                for (t, &start) in layout.starts().iter().enumerate() {
                    for j in 0..width {
                        if t < j || t - j < start {
                            break;
                        }
                        let s = t - j;
                        for c in 0..d {
                            let g = gd[t * d + c];
                            dx[s * d + c] += kd[j * d + c] * g;
                            dk[j * d + c] += xd[s * d + c] * g;
                        }
                    }
                }
                acc(*x, Tensor::new(xv.shape().to_vec(), dx)?, grads);
                acc(*kernel, Tensor::new(kv.shape().to_vec(), dk)?, grads);
            }
            Op::ReluSq(x) => {
                let xv = self.value(*x);
                let two = S::lit(2.0);
                acc(
                    *x,
                    dy.zip_map(xv, |g, v| g * two * v.max(S::zero()))?,
                    grads,
                );
            }
            Op::Rope { x, spec, layout } => {
                let mut dx = dy.clone();
                let w = dx.last_dim();
                rope_rows(
                    dx.data_mut(),
                    w,
                    layout.positions(),
                    spec.head_dim,
                    spec.rope_start,
                    spec.rope_dim,
                    -spec.sign,
                    spec.base,
                );
                acc(*x, dx, grads);
            }
            Op::ShiftNope {
                x,
                head_dim,
                nope_dim,
                layout,
            } => {
                let w = dy.last_dim();
                let heads = w / head_dim;
                let mut dx = dy.clone();
                {
                    let g = dy.data();
                    let out = dx.data_mut();
                    for t in 0..layout.len() {
                        for h in 0..heads {
                            let a = t * w + h * head_dim;
                            out[a..a + nope_dim].iter_mut().for_each(|v| *v = S::zero());
                        }
                    }
                    for t in 0..layout.len() {
                        if layout.is_start(t) {
                            continue;
                        }
                        for h in 0..heads {
                            let a = t * w + h * head_dim;
                            for c in 0..*nope_dim {
                                out[a - w + c] += g[a + c];
                            }
                        }
                    }
                }
                acc(*x, dx, grads);
            }
            Op::Attention {
                q,
                k,
                v,
                spec,
                probs,
            } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let dh = spec.head_dim;
                let group = spec.n_q_heads / spec.n_kv_heads;
                let (qw, kw) = (spec.n_q_heads * dh, spec.n_kv_heads * dh);
                let scale = S::lit(spec.scale);
                let mut dq = vec![S::zero(); qv.numel()];
                let mut dk = vec![S::zero(); kv.numel()];
                let mut dv = vec![S::zero(); vv.numel()];
                let (qd, kd, vd, gd) = (qv.data(), kv.data(), vv.data(), dy.data());
                let mut dp: Vec<S> = Vec::new();
                for h in 0..spec.n_q_heads {
                    let g = h / group;
                    for t in 0..probs.len() {
                        let (start, p) = probs.row(h, t);
                        let go = &gd[t * qw + h * dh..t * qw + (h + 1) * dh];
                        dp.clear();
                        for (&pj, j) in p.iter().zip(start..=t) {
                            let vrow = &vd[j * kw + g * dh..j * kw + (g + 1) * dh];
                            dp.push(dot(go, vrow));
                            let dvr = &mut dv[j * kw + g * dh..j * kw + (g + 1) * dh];
                            for (a, &b) in dvr.iter_mut().zip(go) {
                                *a += pj * b;
                            }
                        }
                        let mean: S = p.iter().zip(&dp).map(|(&a, &b)| a * b).sum();
                        let qrow = &qd[t * qw + h * dh..t * qw + (h + 1) * dh];
                        for ((&pj, &dpj), j) in p.iter().zip(&dp).zip(start..=t) {
                            let ds = pj * (dpj - mean) * scale;
                            if ds == S::zero() {
                                continue;
                            }
                            let krow = &kd[j * kw + g * dh..j * kw + (g + 1) * dh];
                            let dqr = &mut dq[t * qw + h * dh..t * qw + (h + 1) * dh];
                            for (a, &b) in dqr.iter_mut().zip(krow) {
                                *a += ds * b;
                            }
                            let dkr = &mut dk[j * kw + g * dh..j * kw + (g + 1) * dh];
                            for (a, &b) in dkr.iter_mut().zip(qrow) {
                                *a += ds * b;
                            }
                        }
                    }
                }
                acc(*q, Tensor::new(qv.shape().to_vec(), dq)?, grads);
                acc(*k, Tensor::new(kv.shape().to_vec(), dk)?, grads);
                acc(*v, Tensor::new(vv.shape().to_vec(), dv)?, grads);
            }
            Op::Embed { table, ids } => {
                let tv = self.value(*table);
                let mut dt = Tensor::zeros(tv.shape());
                for (t, &id) in ids.iter().enumerate() {
                    let src = dy.row(t);
                    for (a, &b) in dt.row_mut(id).iter_mut().zip(src) {
                        *a += b;
                    }
                }
                acc(*table, dt, grads);
            }
            Op::SoftmaxRows(x) => {
                let mut dx = dy.clone();
                let d = y.last_dim();
                for t in 0..y.rows() {
                    let yr = y.row(t);
                    let inner: S = yr.iter().zip(dy.row(t)).map(|(&a, &b)| a * b).sum();
                    for (c, o) in dx.row_mut(t).iter_mut().enumerate().take(d) {
                        *o = yr[c] * (*o - inner);
                    }
                }
                acc(*x, dx, grads);
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                let mut dl = Tensor::zeros(probs.shape());
                if *count > 0 {
                    let k = dy.data()[0] / S::from_usize(*count).unwrap();
                    for (t, tgt) in targets.iter().enumerate() {
                        if let Some(y) = tgt {
                            let p = probs.row(t);
                            let out = dl.row_mut(t);
                            for (o, &pc) in out.iter_mut().zip(p) {
                                *o = pc * k;
                            }
                            out[*y] -= k;
                        }
                    }
                }
                acc(*logits, dl, grads);
            }
        }
        Ok(())
    }
}

pub(crate) fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut s = S::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// `log softmax(row)[y]`, max-subtracted.
pub(crate) fn log_softmax_at<S: Scalar>(row: &[S], y: usize) -> S {
    let m = row.iter().copied().fold(S::neg_infinity(), S::max);
    let z: S = row.iter().map(|&x| (x - m).exp()).sum();
    row[y] - m - z.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_visits_in_reverse_and_accumulates_fan_out() {
        // f(x) = sum(x * x + x): gradient 2x + 1, x used three times
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let xx = tape.mul(x, x).unwrap();
        let y = tape.add(xx, x).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[3.0, 5.0, 7.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let c = tape.constant(Tensor::ones(&[2, 2]));
        let w = tape.param(Tensor::eye(2));
        let y = tape.matmul(c, w).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(w).unwrap().data(), &[2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn packed_layout_starts() {
        let l = SeqLayout::packed(&[2, 3]);
        assert_eq!(l.positions(), &[0, 1, 0, 1, 2]);
        assert_eq!(l.starts(), &[0, 0, 2, 2, 2]);
        assert!(l.is_start(2) && !l.is_start(3));
    }

    #[test]
    fn cross_entropy_masks_padding() {
        let mut tape = Tape::<f64>::new();
        let mut logits = Tensor::zeros(&[1, 4]);
        logits.data_mut()[3] = 50.0;
        let l = tape.param(logits);
        let loss = tape.cross_entropy(l, &[Some(0)], 3).unwrap();
        assert!((tape.value(loss).data()[0] - 3f64.ln()).abs() < 1e-15);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(l).unwrap().data()[3], 0.0);
    }
}
