use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// One decoder block's parameters. Generic so the same layout holds tensors,
/// tape handles or optimizer buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    pub attn_norm: T,
    pub canon_a: Option<T>,
    pub q: T,
    pub kv: T,
    pub o: T,
    pub lambda1: Option<T>,
    pub lambda2: Option<T>,
    pub attn_post_norm: T,
    pub ffn_norm: T,
    pub canon_c: Option<T>,
    pub up: T,
    pub canon_d: Option<T>,
    pub down: T,
    pub ffn_post_norm: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Weights<T> {
    pub embed: T,
    pub embed_norm: T,
    pub layers: Vec<Layer<T>>,
    pub final_norm: T,
    pub head: T,
}

pub type ModelWeights<S = f64> = Weights<Tensor<S>>;

impl<T> Layer<T> {
    fn for_each<'a>(&'a self, i: usize, f: &mut impl FnMut(String, &'a T)) {
        let p = |s: &str| format!("layers.{i}.{s}");
        f(p("attn_norm"), &self.attn_norm);
        if let Some(x) = &self.canon_a {
            f(p("canon_a"), x);
        }
        f(p("attn.q"), &self.q);
        f(p("attn.kv"), &self.kv);
        f(p("attn.o"), &self.o);
        if let Some(x) = &self.lambda1 {
            f(p("attn.lambda1"), x);
        }
        if let Some(x) = &self.lambda2 {
            f(p("attn.lambda2"), x);
        }
        f(p("attn_post_norm"), &self.attn_post_norm);
        f(p("ffn_norm"), &self.ffn_norm);
        if let Some(x) = &self.canon_c {
            f(p("canon_c"), x);
        }
        f(p("ffn.up"), &self.up);
        if let Some(x) = &self.canon_d {
            f(p("ffn.canon_d"), x);
        }
        f(p("ffn.down"), &self.down);
        f(p("ffn_post_norm"), &self.ffn_post_norm);
    }

    fn push_mut<'a>(&'a mut self, out: &mut Vec<&'a mut T>) {
        out.push(&mut self.attn_norm);
        out.extend(self.canon_a.as_mut());
        out.push(&mut self.q);
        out.push(&mut self.kv);
        out.push(&mut self.o);
        out.extend(self.lambda1.as_mut());
        out.extend(self.lambda2.as_mut());
        out.push(&mut self.attn_post_norm);
        out.push(&mut self.ffn_norm);
        out.extend(self.canon_c.as_mut());
        out.push(&mut self.up);
        out.extend(self.canon_d.as_mut());
        out.push(&mut self.down);
        out.push(&mut self.ffn_post_norm);
    }

    fn map<U>(&self, i: usize, f: &mut impl FnMut(&str, &T) -> U) -> Layer<U> {
        let p = |s: &str| format!("layers.{i}.{s}");
        let mut g = |s: &str, x: &T| f(&p(s), x);
        Layer {
            attn_norm: g("attn_norm", &self.attn_norm),
            canon_a: self.canon_a.as_ref().map(|x| g("canon_a", x)),
            q: g("attn.q", &self.q),
            kv: g("attn.kv", &self.kv),
            o: g("attn.o", &self.o),
            lambda1: self.lambda1.as_ref().map(|x| g("attn.lambda1", x)),
            lambda2: self.lambda2.as_ref().map(|x| g("attn.lambda2", x)),
            attn_post_norm: g("attn_post_norm", &self.attn_post_norm),
            ffn_norm: g("ffn_norm", &self.ffn_norm),
            canon_c: self.canon_c.as_ref().map(|x| g("canon_c", x)),
            up: g("ffn.up", &self.up),
            canon_d: self.canon_d.as_ref().map(|x| g("ffn.canon_d", x)),
            down: g("ffn.down", &self.down),
            ffn_post_norm: g("ffn_post_norm", &self.ffn_post_norm),
        }
    }
}

impl<T> Weights<T> {
    /// Every parameter with its canonical name, in a fixed order.
    pub fn named(&self) -> Vec<(String, &T)> {
        let mut out = Vec::new();
        out.push(("embed".to_string(), &self.embed));
        out.push(("embed_norm".to_string(), &self.embed_norm));
        for (i, l) in self.layers.iter().enumerate() {
            l.for_each(i, &mut |n, x| out.push((n, x)));
        }
        out.push(("final_norm".to_string(), &self.final_norm));
        out.push(("head".to_string(), &self.head));
        out
    }

    /// Mutable references in [`Weights::named`] order.
    pub fn values_mut(&mut self) -> Vec<&mut T> {
        let mut out = vec![&mut self.embed, &mut self.embed_norm];
        for l in &mut self.layers {
            l.push_mut(&mut out);
        }
        out.push(&mut self.final_norm);
        out.push(&mut self.head);
        out
    }

    pub fn names(&self) -> Vec<String> {
        self.named().into_iter().map(|(n, _)| n).collect()
    }

    pub fn map<U>(&self, mut f: impl FnMut(&str, &T) -> U) -> Weights<U> {
        Weights {
            embed: f("embed", &self.embed),
            embed_norm: f("embed_norm", &self.embed_norm),
            layers: self
                .layers
                .iter()
                .enumerate()
                .map(|(i, l)| l.map(i, &mut f))
                .collect(),
            final_norm: f("final_norm", &self.final_norm),
            head: f("head", &self.head),
        }
    }

    /// Same layout filled from a list in [`Weights::named`] order.
    pub fn rebuild<U: Clone>(&self, values: &[U]) -> Result<Weights<U>> {
        let n = self.named().len();
        if values.len() != n {
            return Err(Error::Dimension(format!(
                "{} values for {n} parameters",
                values.len()
            )));
        }
        let mut it = values.iter();
        Ok(self.map(|_, _| it.next().expect("counted").clone()))
    }
}

/// What a parameter is, from its canonical name.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Embedding,
    Head,
    NormGain,
    Canon,
    Lambda1,
    Lambda2,
    /// Attention or FFN projection matrix.
    Projection,
}

impl ParamKind {
    pub fn of(name: &str) -> Result<Self> {
        let last = name.rsplit('.').next().unwrap_or(name);
        Ok(match last {
            "embed" => ParamKind::Embedding,
            "head" => ParamKind::Head,
            "embed_norm" | "final_norm" | "attn_norm" | "attn_post_norm" | "ffn_norm"
            | "ffn_post_norm" => ParamKind::NormGain,
            "canon_a" | "canon_c" | "canon_d" => ParamKind::Canon,
            "lambda1" => ParamKind::Lambda1,
            "lambda2" => ParamKind::Lambda2,
            "q" | "kv" | "o" | "up" | "down" => ParamKind::Projection,
            _ => return Err(Error::Config(format!("unclassified parameter {name}"))),
        })
    }
}

impl Weights<Vec<usize>> {
    /// Parameter shapes implied by a config.
    pub fn shapes(config: &ModelConfig) -> Self {
        let d = config.d_model;
        let k = config.canon_kernel;
        let layers = (0..config.n_layers)
            .map(|i| {
                let mix = config.value_residual && i > 0;
                Layer {
                    attn_norm: vec![d],
                    canon_a: config.canon_a.then(|| vec![k, d]),
                    q: vec![d, config.q_width()],
                    kv: vec![d, config.kv_width()],
                    o: vec![config.q_width(), d],
                    lambda1: mix.then(|| vec![1]),
                    lambda2: mix.then(|| vec![1]),
                    attn_post_norm: vec![d],
                    ffn_norm: vec![d],
                    canon_c: config.canon_c.then(|| vec![k, d]),
                    up: vec![d, config.d_ffn()],
                    canon_d: config.canon_d.then(|| vec![k, config.d_ffn()]),
                    down: vec![config.d_ffn(), d],
                    ffn_post_norm: vec![d],
                }
            })
            .collect();
        Weights {
            embed: vec![config.vocab_padded, d],
            embed_norm: vec![d],
            layers,
            final_norm: vec![d],
            head: vec![d, config.vocab_padded],
        }
    }
}

impl<S: Scalar> Weights<Tensor<S>> {
    /// Fresh parameters: truncated normal (±2σ) for embedding, projections and
    /// head; zero Canon kernels; unit norm gains; λ₁ = 0.5, λ₂ = -0.5.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = config.init_std;
        Ok(Weights::shapes(config).map(|name, shape| {
            match ParamKind::of(name).expect("canonical name") {
                ParamKind::NormGain => Tensor::ones(shape),
                ParamKind::Canon => Tensor::zeros(shape),
                ParamKind::Lambda1 => Tensor::full(shape, S::lit(0.5)),
                ParamKind::Lambda2 => Tensor::full(shape, S::lit(-0.5)),
                ParamKind::Embedding | ParamKind::Head | ParamKind::Projection => {
                    Tensor::from_fn(shape, |_| S::lit(std * truncated_normal(&mut rng)))
                }
            }
        }))
    }

    pub fn numel(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn cast<T: Scalar>(&self) -> Weights<Tensor<T>> {
        self.map(|_, t| t.cast())
    }

    /// Check every tensor against the shapes `config` implies.
    pub fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        let want = Weights::shapes(config);
        let want = want.named();
        let have = self.named();
        if have.len() != want.len() {
            return Err(Error::Format(format!(
                "{} tensors where the config implies {}",
                have.len(),
                want.len()
            )));
        }
        for ((hn, ht), (wn, ws)) in have.iter().zip(&want) {
            if hn != wn || ht.shape() != ws.as_slice() {
                return Err(Error::Format(format!(
                    "tensor {hn} {:?} does not match config ({wn} {ws:?})",
                    ht.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Standard normal truncated to ±2 by rejection.
fn truncated_normal(rng: &mut impl Rng) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            return z;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_matches_count_and_contract() {
        for c in [ModelConfig::toy(2, 64), ModelConfig::toy(3, 32)] {
            let w = ModelWeights::<f64>::init(&c, 1).unwrap();
            assert_eq!(w.numel(), c.count_params());
            w.check_shapes(&c).unwrap();
            assert!(w.layers[0].lambda1.is_none());
            let l1 = &w.layers[1];
            assert_eq!(l1.lambda1.as_ref().unwrap().data(), &[0.5]);
            assert_eq!(l1.lambda2.as_ref().unwrap().data(), &[-0.5]);
            assert!(l1
                .canon_a
                .as_ref()
                .unwrap()
                .data()
                .iter()
                .all(|&x| x == 0.0));
            assert!(w.head.data().iter().all(|&x| x.abs() <= 0.04));
            assert_ne!(w.embed, w.head.transpose().unwrap());
        }
    }

    #[test]
    fn names_are_unique_and_rebuild_round_trips() {
        let w = ModelWeights::<f64>::init(&ModelConfig::toy(2, 16), 0).unwrap();
        let mut names = w.names();
        let n = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), n);
        let flat: Vec<Tensor> = w.named().into_iter().map(|(_, t)| t.clone()).collect();
        assert_eq!(w.rebuild(&flat).unwrap(), w);
        let mut w2 = w.clone();
        for (k, t) in w2.values_mut().into_iter().enumerate() {
            *t = Tensor::full(t.shape(), k as f64);
        }
        for (k, (_, t)) in w2.named().into_iter().enumerate() {
            assert_eq!(t.data()[0], k as f64);
        }
    }

    #[test]
    fn every_name_is_classified() {
        let w = Weights::shapes(&ModelConfig::full());
        for n in w.names() {
            ParamKind::of(&n).unwrap();
        }
        assert!(ParamKind::of("layers.0.mystery").is_err());
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let c = ModelConfig::toy(1, 16);
        assert_eq!(
            ModelWeights::<f64>::init(&c, 5).unwrap(),
            ModelWeights::<f64>::init(&c, 5).unwrap()
        );
    }
}
