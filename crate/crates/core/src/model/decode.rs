//! Incremental decoding with a per-layer cache. This path uses plain tensor
//! arithmetic, independent of the tape, one token per step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::weights::{Layer, ModelWeights};
use crate::data::{TokenSequence, EOS};
use crate::error::{Error, Result};
use crate::tensor::{inv_rms, relu_sq, rope_rows, sigmoid, softmax_in_place, Scalar, Tensor};

/// Last `kernel - 1` inputs of one Canon convolution, oldest first.
#[derive(Clone, Debug, Default)]
struct ConvTail<S> {
    rows: Vec<Vec<S>>,
}

impl<S: Scalar> ConvTail<S> {
    /// `x + conv(x)` for the newest row, then remember it.
    fn apply(&mut self, x: Vec<S>, kernel: &Tensor<S>) -> Vec<S> {
        let width = kernel.rows();
        let mut conv = vec![S::zero(); x.len()];
        for j in 0..width {
            let src = if j == 0 {
                &x
            } else if j <= self.rows.len() {
                &self.rows[self.rows.len() - j]
            } else {
                break;
            };
            for ((o, &k), &s) in conv.iter_mut().zip(kernel.row(j)).zip(src) {
                *o += k * s;
            }
        }
        let out = x.iter().zip(&conv).map(|(&a, &b)| a + b).collect();
        self.rows.push(x);
        if self.rows.len() >= width {
            self.rows.remove(0);
        }
        out
    }
}

#[derive(Clone, Debug, Default)]
struct LayerCache<S> {
    /// Post-RoPE shared key/value rows, `len × kv_width`.
    kv: Vec<S>,
    canon_a: ConvTail<S>,
    canon_c: ConvTail<S>,
    canon_d: ConvTail<S>,
}

/// Decoding state of one generation session.
#[derive(Clone, Debug)]
pub struct DecodeCache<S = f64> {
    layers: Vec<LayerCache<S>>,
    /// Layer-0 values for every cached position.
    v0: Vec<S>,
    len: usize,
    kv_width: usize,
}

impl<S: Scalar> DecodeCache<S> {
    pub fn new(config: &ModelConfig) -> Self {
        DecodeCache {
            layers: (0..config.n_layers)
                .map(|_| LayerCache::default())
                .collect(),
            v0: Vec::new(),
            len: 0,
            kv_width: config.kv_width(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Floats held per token per layer (the shared KV row) plus V₀.
    pub fn floats_per_token(&self) -> (usize, usize) {
        (self.kv_width, self.kv_width)
    }

    /// Feed one token and return its next-token logits (padded width).
    pub fn step(
        &mut self,
        config: &ModelConfig,
        w: &ModelWeights<S>,
        token: usize,
    ) -> Result<Vec<S>> {
        if self.layers.len() != config.n_layers || self.kv_width != config.kv_width() {
            return Err(Error::State("cache built for a different config".into()));
        }
        if self.len >= config.max_seq_len {
            return Err(Error::State(format!(
                "cache holds {} tokens, the context limit",
                self.len
            )));
        }
        if token >= config.vocab_size {
            return Err(Error::Input(format!("token id {token} outside vocabulary")));
        }
        let pos = self.len;
        let mut h = norm(w.embed.row(token), &w.embed_norm);
        for li in 0..config.n_layers {
            h = self.layer_step(config, &w.layers[li], li, h, pos)?;
        }
        self.len += 1;
        let hn = Tensor::new(vec![1, config.d_model], norm(&h, &w.final_norm))?;
        Ok(hn.matmul(&w.head)?.into_data())
    }

    fn layer_step(
        &mut self,
        config: &ModelConfig,
        l: &Layer<Tensor<S>>,
        li: usize,
        h: Vec<S>,
        pos: usize,
    ) -> Result<Vec<S>> {
        let dh = config.d_head();
        let (nope, rope) = (config.d_head_nope, config.d_head_rope);
        let kw = self.kv_width;
        let qw = config.q_width();
        let gamma = S::lit(config.branch_scale());
        let cache = &mut self.layers[li];

        let mut x = norm(&h, &l.attn_norm);
        if let Some(k) = &l.canon_a {
            x = cache.canon_a.apply(x, k);
        }
        let x = Tensor::new(vec![1, config.d_model], x)?;
        let mut q = x.matmul(&l.q)?.into_data();
        let mut kv = x.matmul(&l.kv)?.into_data();
        rope_rows(&mut q, qw, &[pos], dh, nope, rope, 1.0, config.rope_base);
        rope_rows(&mut kv, kw, &[pos], dh, nope, rope, 1.0, config.rope_base);
        cache.kv.extend_from_slice(&kv);
        if li == 0 {
            self.v0.extend_from_slice(&kv);
        }
        let mix = match (&l.lambda1, &l.lambda2) {
            (Some(a), Some(b)) if li > 0 => Some((sigmoid(a.data()[0]), sigmoid(b.data()[0]))),
            _ => None,
        };

        let t_len = pos + 1;
        let group = config.n_q_heads / config.n_kv_heads;
        let scale = S::lit(config.attn_scale());
        let mut out = vec![S::zero(); qw];
        let mut key = vec![S::zero(); dh];
        let mut val = vec![S::zero(); dh];
        let mut p = vec![S::zero(); t_len];
        for hq in 0..config.n_q_heads {
            let g = hq / group;
            let qrow = &q[hq * dh..(hq + 1) * dh];
            for (j, pj) in p.iter_mut().enumerate() {
                let cur = &cache.kv[j * kw + g * dh..j * kw + (g + 1) * dh];
                key.copy_from_slice(cur);
                if config.key_offset {
                    if j == 0 {
                        key[..nope].iter_mut().for_each(|v| *v = S::zero());
                    } else {
                        let prev = &cache.kv[(j - 1) * kw + g * dh..];
                        key[..nope].copy_from_slice(&prev[..nope]);
                    }
                }
                *pj = crate::tensor::tape::dot(qrow, &key) * scale;
            }
            softmax_in_place(&mut p);
            let o = &mut out[hq * dh..(hq + 1) * dh];
            for (j, &pj) in p.iter().enumerate() {
                let cur = &cache.kv[j * kw + g * dh..j * kw + (g + 1) * dh];
                match mix {
                    Some((s1, s2)) => {
                        let base = &self.v0[j * kw + g * dh..j * kw + (g + 1) * dh];
                        for ((v, &a), &b) in val.iter_mut().zip(cur).zip(base) {
                            *v = a * s1 + b * s2;
                        }
                    }
                    None => val.copy_from_slice(cur),
                }
                for (oc, &vc) in o.iter_mut().zip(&val) {
                    *oc += pj * vc;
                }
            }
        }
        rope_rows(&mut out, qw, &[pos], dh, nope, rope, -1.0, config.rope_base);
        let a = Tensor::new(vec![1, qw], out)?.matmul(&l.o)?.into_data();
        let a = norm(&a, &l.attn_post_norm);
        let h: Vec<S> = h.iter().zip(&a).map(|(&x, &y)| x + y * gamma).collect();

        let mut x = norm(&h, &l.ffn_norm);
        if let Some(k) = &l.canon_c {
            x = cache.canon_c.apply(x, k);
        }
        let mut u = Tensor::new(vec![1, config.d_model], x)?
            .matmul(&l.up)?
            .into_data();
        if let Some(k) = &l.canon_d {
            u = cache.canon_d.apply(u, k);
        }
        let u: Vec<S> = u.into_iter().map(relu_sq).collect();
        let f = Tensor::new(vec![1, config.d_ffn()], u)?
            .matmul(&l.down)?
            .into_data();
        let f = norm(&f, &l.ffn_post_norm);
        Ok(h.iter().zip(&f).map(|(&x, &y)| x + y * gamma).collect())
    }
}

fn norm<S: Scalar>(x: &[S], gain: &Tensor<S>) -> Vec<S> {
    let r = inv_rms(x);
    x.iter()
        .zip(gain.data())
        .map(|(&v, &g)| v * r * g)
        .collect()
}

/// Sampling controls for [`generate`].
#[derive(Clone, Debug)]
pub struct GenerateOptions {
    pub max_new: usize,
    /// 0 is greedy.
    pub temperature: f64,
    pub seed: u64,
    /// When false EOS is masked out and generation always runs `max_new` steps.
    pub allow_eos: bool,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        GenerateOptions {
            max_new: 256,
            temperature: 1.0,
            seed: 0,
            allow_eos: true,
        }
    }
}

/// Output of [`generate`]: the full sequence and the logits that chose each
/// new token.
#[derive(Clone, Debug)]
pub struct Generation<S = f64> {
    pub sequence: TokenSequence,
    pub step_logits: Vec<Vec<S>>,
}

/// Extend `prefix` token by token. The prefix must hold at least one residue
/// since there is no start token to condition on.
pub fn generate<S: Scalar>(
    config: &ModelConfig,
    w: &ModelWeights<S>,
    prefix: &TokenSequence,
    opts: &GenerateOptions,
) -> Result<Generation<S>> {
    if !(opts.temperature >= 0.0 && opts.temperature.is_finite()) {
        return Err(Error::Range(format!(
            "temperature {} must be >= 0",
            opts.temperature
        )));
    }
    let prefix = prefix.residues();
    if prefix.is_empty() {
        return Err(Error::Input("generation needs a non-empty prefix".into()));
    }
    if prefix.len() > config.max_seq_len {
        return Err(Error::Input(format!(
            "prefix of {} tokens exceeds max_seq_len {}",
            prefix.len(),
            config.max_seq_len
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut cache = DecodeCache::new(config);
    let mut ids = prefix.to_vec();
    let mut logits = Vec::new();
    for &t in &ids {
        logits = cache.step(config, w, t as usize)?;
    }
    let mut step_logits = Vec::new();
    for _ in 0..opts.max_new {
        let next = choose(&logits, config.vocab_size, opts, &mut rng);
        step_logits.push(std::mem::take(&mut logits));
        ids.push(next as u8);
        if next == EOS as usize || cache.len() >= config.max_seq_len {
            break;
        }
        logits = cache.step(config, w, next)?;
    }
    Ok(Generation {
        sequence: TokenSequence::from_ids(ids)?,
        step_logits,
    })
}

fn choose<S: Scalar>(
    logits: &[S],
    valid: usize,
    opts: &GenerateOptions,
    rng: &mut impl Rng,
) -> usize {
    let n = if opts.allow_eos { valid } else { EOS as usize };
    let row: Vec<f64> = logits[..n].iter().map(|x| x.f64()).collect();
    if opts.temperature == 0.0 {
        let mut best = 0;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        return best;
    }
    let mut p: Vec<f64> = row.iter().map(|&v| v / opts.temperature).collect();
    softmax_in_place(&mut p);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    n - 1
}
