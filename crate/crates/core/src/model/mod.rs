//! The decoder: embedding, post-embedding norm, sandwich-normed blocks with
//! shared-KV grouped attention and Canon convolutions, final norm, untied head.

pub mod checkpoint;
pub mod config;
pub mod decode;
pub mod forward;
pub mod weights;

use std::fs;
use std::path::Path;
use std::sync::Arc;

pub use config::{count_params, ModelConfig};
pub use decode::{generate, DecodeCache, GenerateOptions, Generation};
pub use forward::Trace;
pub use weights::{Layer, ModelWeights, ParamKind, Weights};

use crate::data::{PackedBatch, PackingMode, TokenSequence};
use crate::error::{Error, Result};
use crate::tensor::{tape::log_softmax_at, Scalar, SeqLayout, Tape, Tensor};
use checkpoint::Dtype;

#[derive(Clone, Debug, PartialEq)]
pub struct Model<S: Scalar = f64> {
    pub config: ModelConfig,
    pub weights: ModelWeights<S>,
}

/// State entering layer `first` of a pass over fixed ids (its FFN half when
/// `mid` is set), from which the rest of the pass can be replayed after
/// changing only later weights. The replayed loss is bit-identical to a full
/// pass.
#[derive(Clone, Debug)]
pub struct ResumePoint<S: Scalar> {
    pub first: usize,
    pub mid: bool,
    pub residual: Tensor<S>,
    pub v0: Option<Tensor<S>>,
}

/// A recorded inference pass, kept for analyses that read intermediate state.
pub struct Recorded<S: Scalar> {
    pub tape: Tape<S>,
    pub params: Weights<crate::tensor::Var>,
    pub trace: Trace,
    pub layout: Arc<SeqLayout>,
}

impl<S: Scalar> Model<S> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let weights = ModelWeights::init(&config, seed)?;
        Ok(Model { config, weights })
    }

    pub fn from_parts(config: ModelConfig, weights: ModelWeights<S>) -> Result<Self> {
        config.validate()?;
        weights.check_shapes(&config)?;
        Ok(Model { config, weights })
    }

    pub fn n_params(&self) -> usize {
        self.weights.numel()
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::Input("empty token sequence".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.config.vocab_size) {
            return Err(Error::Input(format!("token id {bad} outside vocabulary")));
        }
        Ok(())
    }

    fn check_layout(&self, layout: &SeqLayout) -> Result<()> {
        if let Some(&p) = layout.positions().iter().max() {
            if p >= self.config.max_seq_len {
                return Err(Error::Input(format!(
                    "position {p} beyond max_seq_len {}",
                    self.config.max_seq_len
                )));
            }
        }
        Ok(())
    }

    /// Inference pass over `ids` that keeps the tape for inspection.
    pub fn record(&self, ids: &[usize], layout: Arc<SeqLayout>) -> Result<Recorded<S>> {
        self.check_ids(ids)?;
        self.check_layout(&layout)?;
        let mut tape = Tape::new();
        let params = forward::load(&mut tape, &self.weights, false);
        let trace = forward::build(&mut tape, &self.config, &params, ids, &layout)?;
        Ok(Recorded {
            tape,
            params,
            trace,
            layout,
        })
    }

    /// Padded-width logits for a single sequence.
    pub fn forward(&self, seq: &TokenSequence) -> Result<Tensor<S>> {
        self.forward_ids(&seq.as_usize())
    }

    pub fn forward_ids(&self, ids: &[usize]) -> Result<Tensor<S>> {
        self.forward_layout(ids, Arc::new(SeqLayout::single(ids.len())))
    }

    pub fn forward_layout(&self, ids: &[usize], layout: Arc<SeqLayout>) -> Result<Tensor<S>> {
        let r = self.record(ids, layout)?;
        Ok(r.tape.value(r.trace.logits).clone())
    }

    pub fn forward_packed(&self, batch: &PackedBatch, mode: PackingMode) -> Result<Tensor<S>> {
        self.forward_layout(&batch.token_ids(), batch.layout(mode))
    }

    /// Natural-log probability of every token after the first, EOS included.
    pub fn token_logprobs(&self, seq: &TokenSequence) -> Result<Vec<f64>> {
        if seq.len() < 2 {
            return Err(Error::Input("scoring needs at least two tokens".into()));
        }
        let logits = self.forward(seq)?;
        Ok(self.logprobs_from(&logits, 0, seq.ids()))
    }

    fn logprobs_from(&self, logits: &Tensor<S>, row0: usize, ids: &[u8]) -> Vec<f64> {
        let v = self.config.vocab_size;
        (1..ids.len())
            .map(|t| log_softmax_at(&logits.row(row0 + t - 1)[..v], ids[t] as usize).f64())
            .collect()
    }

    pub fn sequence_logprob(&self, seq: &TokenSequence) -> Result<f64> {
        Ok(self.token_logprobs(seq)?.iter().sum())
    }

    /// Score several sequences in one packed pass (strict reset).
    pub fn sequence_logprobs(&self, seqs: &[TokenSequence]) -> Result<Vec<f64>> {
        if seqs.iter().any(|s| s.len() < 2) {
            return Err(Error::Input("scoring needs at least two tokens".into()));
        }
        let batch = PackedBatch::from_sequences(seqs);
        let logits = self.forward_packed(&batch, PackingMode::StrictReset)?;
        Ok((0..batch.n_seqs())
            .map(|i| {
                self.logprobs_from(&logits, batch.offsets()[i], batch.sequence(i))
                    .iter()
                    .sum()
            })
            .collect())
    }

    /// Mean next-token loss and its gradient for every parameter.
    pub fn loss_and_grads(
        &self,
        ids: &[usize],
        targets: &[Option<usize>],
        layout: Arc<SeqLayout>,
    ) -> Result<(f64, ModelWeights<S>)> {
        self.check_ids(ids)?;
        self.check_layout(&layout)?;
        let mut tape = Tape::new();
        let params = forward::load(&mut tape, &self.weights, true);
        let trace = forward::build(&mut tape, &self.config, &params, ids, &layout)?;
        let loss = tape.cross_entropy(trace.logits, targets, self.config.vocab_size)?;
        let mut grads = tape.backward(loss)?;
        let g = params.map(|_, v| {
            grads
                .take(*v)
                .unwrap_or_else(|| Tensor::zeros(tape.value(*v).shape()))
        });
        Ok((tape.value(loss).data()[0].f64(), g))
    }

    /// Capture the residual stream entering layer `first`, or its FFN half
    /// with `mid` (`n_layers` without `mid` means the head).
    pub fn resume_point(
        &self,
        ids: &[usize],
        layout: Arc<SeqLayout>,
        first: usize,
        mid: bool,
    ) -> Result<ResumePoint<S>> {
        let n = self.config.n_layers;
        if first > n || (mid && first == n) {
            return Err(Error::Config(format!(
                "resume point {first} beyond {n} layers"
            )));
        }
        let r = self.record(ids, layout)?;
        let t = &r.trace;
        let h = if mid {
            t.mids[first]
        } else {
            t.residuals[first]
        };
        Ok(ResumePoint {
            first,
            mid,
            residual: r.tape.value(h).clone(),
            v0: (first > 0 || mid).then(|| r.tape.value(t.v0.expect("layer 0 ran")).clone()),
        })
    }

    /// Mean next-token loss replayed from `from`; earlier weights are ignored.
    pub fn loss_from(
        &self,
        from: &ResumePoint<S>,
        targets: &[Option<usize>],
        layout: Arc<SeqLayout>,
    ) -> Result<f64> {
        let mut tape = Tape::new();
        let p = forward::load(&mut tape, &self.weights, false);
        let h = tape.constant(from.residual.clone());
        let v0 = from.v0.as_ref().map(|v| tape.constant(v.clone()));
        let trace = forward::build_from(
            &mut tape,
            &self.config,
            &p,
            from.first,
            from.mid,
            h,
            v0,
            &layout,
        )?;
        let loss = tape.cross_entropy(trace.logits, targets, self.config.vocab_size)?;
        Ok(tape.value(loss).data()[0].f64())
    }

    /// Mean next-token loss without gradients.
    pub fn loss(
        &self,
        ids: &[usize],
        targets: &[Option<usize>],
        layout: Arc<SeqLayout>,
    ) -> Result<f64> {
        let mut r = self.record(ids, layout)?;
        let loss = r
            .tape
            .cross_entropy(r.trace.logits, targets, self.config.vocab_size)?;
        Ok(r.tape.value(loss).data()[0].f64())
    }

    pub fn generate(
        &self,
        prefix: &TokenSequence,
        opts: &GenerateOptions,
    ) -> Result<Generation<S>> {
        generate(&self.config, &self.weights, prefix, opts)
    }

    /// Write `dir/model.bin` (named tensors) and `dir/config.toml`.
    pub fn save(&self, dir: &Path, dtype: Dtype) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let cfg = toml::to_string(&self.config)
            .map_err(|e| Error::Format(format!("config serialisation: {e}")))?;
        let cpath = dir.join("config.toml");
        fs::write(&cpath, cfg).map_err(|e| Error::io(&cpath, e))?;
        let meta = serde_json::json!({ "n_params": self.n_params() });
        checkpoint::write_file(&dir.join("model.bin"), &self.weights.named(), dtype, meta)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let cpath = dir.join("config.toml");
        let text = fs::read_to_string(&cpath).map_err(|e| Error::io(&cpath, e))?;
        let config: ModelConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", cpath.display())))?;
        let (tensors, _) = checkpoint::read_file::<S>(&dir.join("model.bin"))?;
        Self::from_named(config, tensors)
    }

    pub fn from_named(config: ModelConfig, tensors: Vec<(String, Tensor<S>)>) -> Result<Self> {
        config.validate()?;
        let layout = Weights::shapes(&config);
        let names = layout.names();
        if tensors.len() != names.len() || tensors.iter().zip(&names).any(|((a, _), b)| a != b) {
            return Err(Error::Format(format!(
                "checkpoint tensors do not match the config ({} stored, {} expected)",
                tensors.len(),
                names.len()
            )));
        }
        let vals: Vec<Tensor<S>> = tensors.into_iter().map(|(_, t)| t).collect();
        Self::from_parts(config, layout.rebuild(&vals)?)
    }
}
