//! The training loop: corpus loading, per-epoch crop/shuffle/pack, the
//! optimizer loop, holdout evaluation, checkpoints and resumption.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::data::synthetic::{letters, ProteinHmm};
use crate::data::{
    crop, filter_short, pack_sequences, parse_fasta, partition_records, split_holdout, tokenize,
    unigram_nll, PackedBatch, PackingMode, RejectedRecord, TokenSequence,
};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::optim::Optimizer;

/// Tokenised corpus after filtering and the holdout split.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub train: Vec<TokenSequence>,
    /// Cropped once, deterministically, so evaluation is fixed.
    pub holdout: Vec<TokenSequence>,
    pub rejected: Vec<RejectedRecord>,
    pub n_too_short: usize,
}

impl Corpus {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let d = &cfg.data;
        let (seqs, rejected) = match (&d.train_fasta, d.synthetic_tokens) {
            (Some(path), _) => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let (records, rejected) = partition_records(parse_fasta(&text)?);
                let seqs = records
                    .iter()
                    .map(|r| tokenize(&r.sequence))
                    .collect::<Result<Vec<_>>>()?;
                (seqs, rejected)
            }
            (None, Some(n)) => {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.data_seed);
                (ProteinHmm::default().corpus(n, &mut rng), Vec::new())
            }
            (None, None) => return Err(Error::Config("no training data configured".into())),
        };
        Self::from_sequences(cfg, seqs, rejected)
    }

    pub fn from_sequences(
        cfg: &RunConfig,
        seqs: Vec<TokenSequence>,
        rejected: Vec<RejectedRecord>,
    ) -> Result<Self> {
        let n = seqs.len();
        let seqs = filter_short(seqs);
        let n_too_short = n - seqs.len();
        let (train, holdout) =
            split_holdout(&seqs, cfg.data.holdout_fraction, cfg.train.data_seed)?;
        if train.is_empty() {
            return Err(Error::Input("no training sequences after filtering".into()));
        }
        let mut rng = stream_rng(cfg.train.data_seed, u64::MAX);
        let holdout = holdout
            .iter()
            .map(|s| crop(s, cfg.data.crop_len, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Corpus {
            train,
            holdout,
            rejected,
            n_too_short,
        })
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// The batches of one epoch: a shuffle and fresh crops drawn from
/// `(data_seed, epoch)` alone, then greedy packing.
pub fn epoch_batches(
    cfg: &RunConfig,
    train: &[TokenSequence],
    epoch: usize,
) -> Result<Vec<PackedBatch>> {
    let mut rng = stream_rng(cfg.train.data_seed, epoch as u64);
    let mut order: Vec<usize> = (0..train.len()).collect();
    if cfg.data.shuffle {
        order.shuffle(&mut rng);
    }
    let seqs = order
        .iter()
        .map(|&i| crop(&train[i], cfg.data.crop_len, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    pack_sequences(&seqs, cfg.data.token_budget, cfg.data.max_seqs)
}

/// Token-weighted mean next-token loss over `seqs`, packed with strict reset.
pub fn holdout_loss(
    model: &Model,
    seqs: &[TokenSequence],
    token_budget: usize,
) -> Result<Option<HoldoutEval>> {
    let mode = PackingMode::StrictReset;
    let mut total = 0.0;
    let mut n = 0usize;
    for b in pack_sequences(seqs, token_budget, usize::MAX)? {
        let tg = b.targets(mode);
        let k = tg.iter().filter(|t| t.is_some()).count();
        if k == 0 {
            continue;
        }
        total += model.loss(&b.token_ids(), &tg, b.layout(mode))? * k as f64;
        n += k;
    }
    Ok((n > 0).then(|| HoldoutEval::new(total / n as f64, n)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoldoutEval {
    pub loss: f64,
    pub perplexity: f64,
    pub n_tokens: usize,
}

impl HoldoutEval {
    pub fn new(loss: f64, n_tokens: usize) -> Self {
        HoldoutEval {
            loss,
            perplexity: loss.exp(),
            n_tokens,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub muon_multiplier: f64,
    pub adam_multiplier: f64,
    pub batch_tokens: usize,
    pub holdout: Option<HoldoutEval>,
}

const METRICS_HEADER: &str =
    "step,epoch,loss,muon_lr_mult,adam_lr_mult,batch_tokens,holdout_loss,holdout_ppl";

impl StepRecord {
    fn csv_row(&self) -> String {
        let (hl, hp) = match self.holdout {
            Some(h) => (format!("{:.17e}", h.loss), format!("{:.17e}", h.perplexity)),
            None => (String::new(), String::new()),
        };
        format!(
            "{},{},{:.17e},{:.17e},{:.17e},{},{hl},{hp}",
            self.step,
            self.epoch,
            self.loss,
            self.muon_multiplier,
            self.adam_multiplier,
            self.batch_tokens
        )
    }
}

/// Position in the data stream, saved with each checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cursor {
    pub step: usize,
    pub epoch: usize,
    pub batch: usize,
    pub tokens_seen: u64,
}

pub struct Trainer {
    pub cfg: RunConfig,
    pub model: Model,
    pub opt: Optimizer,
    pub corpus: Corpus,
    batches: Vec<PackedBatch>,
    cursor: Cursor,
}

impl Trainer {
    pub fn new(cfg: RunConfig, corpus: Corpus) -> Result<Self> {
        cfg.validate()?;
        let model = Model::new(cfg.model.clone(), cfg.train.init_seed)?;
        let batches = epoch_batches(&cfg, &corpus.train, 0)?;
        let total = if cfg.train.steps == 0 {
            batches.len()
        } else {
            cfg.train.steps
        };
        let opt = Optimizer::new(cfg.optim, &model.weights, total)?;
        Ok(Trainer {
            cfg,
            model,
            opt,
            corpus,
            batches,
            cursor: Cursor {
                step: 0,
                epoch: 0,
                batch: 0,
                tokens_seen: 0,
            },
        })
    }

    /// Continue from a checkpoint directory written by [`Trainer::save`].
    pub fn resume(cfg: RunConfig, corpus: Corpus, dir: &Path) -> Result<Self> {
        let mut t = Self::new(cfg, corpus)?;
        let model = Model::load(dir)?;
        if model.config != t.cfg.model {
            return Err(Error::Config(format!(
                "{}: checkpoint model config differs from the run config",
                dir.display()
            )));
        }
        t.model = model;
        t.opt.load(&dir.join("optim.bin"))?;
        let cpath = dir.join("cursor.json");
        let text = fs::read_to_string(&cpath).map_err(|e| Error::io(&cpath, e))?;
        let cursor: Cursor = serde_json::from_str(&text)?;
        if cursor.step != t.opt.step_count() {
            return Err(Error::State(format!(
                "{}: cursor step {} but optimizer step {}",
                dir.display(),
                cursor.step,
                t.opt.step_count()
            )));
        }
        if cursor.epoch != 0 {
            t.batches = epoch_batches(&t.cfg, &t.corpus.train, cursor.epoch)?;
        }
        t.cursor = cursor;
        Ok(t)
    }

    pub fn cursor(&self) -> Cursor {
        self.cursor
    }

    pub fn total_steps(&self) -> usize {
        self.opt.total_steps()
    }

    pub fn done(&self) -> bool {
        self.cursor.step >= self.total_steps()
    }

    fn next_batch(&mut self) -> Result<PackedBatch> {
        if self.cursor.batch >= self.batches.len() {
            self.cursor.epoch += 1;
            self.cursor.batch = 0;
            self.batches = epoch_batches(&self.cfg, &self.corpus.train, self.cursor.epoch)?;
        }
        let b = self.batches[self.cursor.batch].clone();
        self.cursor.batch += 1;
        Ok(b)
    }

    /// One optimizer step. A non-finite loss or gradient aborts with a dump
    /// of the offending batch under `dump_dir`.
    pub fn step(&mut self, dump_dir: Option<&Path>) -> Result<StepRecord> {
        let step = self.cursor.step;
        let b = self.next_batch()?;
        let mode = self.cfg.data.packing;
        let tg = b.targets(mode);
        let (loss, grads) = self
            .model
            .loss_and_grads(&b.token_ids(), &tg, b.layout(mode))?;
        let bad: Vec<String> = grads
            .named()
            .into_iter()
            .filter(|(_, g)| !g.all_finite())
            .map(|(n, _)| n)
            .collect();
        if !loss.is_finite() || !bad.is_empty() {
            let detail = format!("loss {loss}, non-finite gradients in {bad:?}");
            if let Some(dir) = dump_dir {
                dump_batch(
                    dir,
                    step,
                    self.cursor.epoch,
                    self.cursor.batch - 1,
                    loss,
                    &bad,
                    &b,
                )?;
            }
            return Err(Error::NonFinite { step, detail });
        }
        let info = self.opt.step(&mut self.model.weights, &grads)?;
        self.cursor.step += 1;
        self.cursor.tokens_seen += b.n_tokens() as u64;
        Ok(StepRecord {
            step,
            epoch: self.cursor.epoch,
            loss,
            muon_multiplier: info.muon_multiplier,
            adam_multiplier: info.adam_multiplier,
            batch_tokens: b.n_tokens(),
            holdout: None,
        })
    }

    pub fn evaluate(&self) -> Result<Option<HoldoutEval>> {
        holdout_loss(
            &self.model,
            &self.corpus.holdout,
            self.cfg.data.token_budget,
        )
    }

    /// Unigram baseline on the holdout, from training-split counts.
    pub fn unigram_baseline(&self) -> Option<HoldoutEval> {
        let n: usize = self.corpus.holdout.iter().map(|s| s.len() - 1).sum();
        (n > 0).then(|| HoldoutEval::new(unigram_nll(&self.corpus.train, &self.corpus.holdout), n))
    }

    /// Model in the configured dtype plus optimizer state and data cursor.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.model.save(dir, self.cfg.train.checkpoint_dtype)?;
        self.opt.save(&dir.join("optim.bin"))?;
        let cpath = dir.join("cursor.json");
        let text = serde_json::to_string_pretty(&self.cursor)?;
        fs::write(&cpath, text).map_err(|e| Error::io(&cpath, e))
    }
}

fn dump_batch(
    dir: &Path,
    step: usize,
    epoch: usize,
    batch: usize,
    loss: f64,
    bad: &[String],
    b: &PackedBatch,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let seqs: Vec<String> = (0..b.n_seqs())
        .map(|i| {
            TokenSequence::from_ids(b.sequence(i).to_vec())
                .map(|s| letters(&s))
                .unwrap_or_default()
        })
        .collect();
    let dump = serde_json::json!({
        "step": step,
        "epoch": epoch,
        "batch": batch,
        "loss": format!("{loss}"),
        "non_finite_gradients": bad,
        "offsets": b.offsets(),
        "sequences": seqs,
    });
    let path = dir.join(format!("nonfinite_step{step:06}.json"));
    fs::write(&path, serde_json::to_string_pretty(&dump)?).map_err(|e| Error::io(&path, e))
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainSummary {
    pub steps: usize,
    pub tokens_seen: u64,
    pub final_loss: Option<f64>,
    pub holdout: Option<HoldoutEval>,
    pub unigram: Option<HoldoutEval>,
    pub n_train_seqs: usize,
    pub n_holdout_seqs: usize,
    pub n_rejected: usize,
    pub n_too_short: usize,
    pub n_params: usize,
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Keep the header and rows whose leading step field is below `step`.
fn truncate_log(path: &Path, header: &str, step: usize) -> Result<String> {
    let mut out = format!("{header}\n");
    if let Ok(text) = fs::read_to_string(path) {
        for line in text.lines().skip(1) {
            let s: Option<usize> = line.split(',').next().and_then(|f| f.parse().ok());
            if s.is_some_and(|s| s < step) {
                out.push_str(line);
                out.push('\n');
            }
        }
    }
    Ok(out)
}

struct Log {
    path: PathBuf,
    file: fs::File,
}

impl Log {
    fn open(path: PathBuf, initial: &str) -> Result<Self> {
        write_file(&path, initial)?;
        let file = fs::OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Log { path, file })
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.file, "{s}").map_err(|e| Error::io(&self.path, e))
    }
}

pub fn checkpoint_dir(out: &Path, step: usize) -> PathBuf {
    out.join("checkpoints").join(format!("step{step:06}"))
}

/// A whole training run under `cfg.out_dir`:
///
/// - `run.toml`: the resolved config
/// - `metrics.csv`: deterministic per-step log
/// - `throughput.csv`: wall-clock timings, kept apart so metrics stay bitwise reproducible
/// - `checkpoints/stepNNNNNN/` and `final/`: model, optimizer state, data cursor
/// - `summary.json`, and `rejected.csv` when FASTA records were dropped
pub fn train(cfg: &RunConfig, resume: Option<&Path>) -> Result<TrainSummary> {
    let corpus = Corpus::load(cfg)?;
    train_on(cfg, corpus, resume)
}

pub fn train_on(cfg: &RunConfig, corpus: Corpus, resume: Option<&Path>) -> Result<TrainSummary> {
    let out = cfg.out_dir.as_path();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_file(&out.join("run.toml"), &cfg.to_toml()?)?;
    if !corpus.rejected.is_empty() {
        let mut text = String::from("id,line,reason\n");
        for r in &corpus.rejected {
            text.push_str(&format!(
                "{},{},{}\n",
                csv_field(&r.id),
                r.line,
                csv_field(&r.reason)
            ));
        }
        write_file(&out.join("rejected.csv"), &text)?;
    }
    let mut t = match resume {
        Some(dir) => Trainer::resume(cfg.clone(), corpus, dir)?,
        None => Trainer::new(cfg.clone(), corpus)?,
    };
    let start = t.cursor().step;
    let mpath = out.join("metrics.csv");
    let tpath = out.join("throughput.csv");
    let theader = "step,seconds,tokens_per_sec";
    let mut metrics = Log::open(mpath.clone(), &truncate_log(&mpath, METRICS_HEADER, start)?)?;
    let mut through = Log::open(tpath.clone(), &truncate_log(&tpath, theader, start)?)?;

    let total = t.total_steps();
    let tc = cfg.train.clone();
    let mut last_loss = None;
    let mut holdout = None;
    while !t.done() {
        let clock = Instant::now();
        let mut rec = t.step(Some(out))?;
        let secs = clock.elapsed().as_secs_f64();
        let k = rec.step + 1;
        if k == total || (tc.eval_every > 0 && k % tc.eval_every == 0) {
            rec.holdout = t.evaluate()?;
            holdout = rec.holdout;
        }
        metrics.line(&rec.csv_row())?;
        through.line(&format!(
            "{},{secs:.6},{:.1}",
            rec.step,
            rec.batch_tokens as f64 / secs.max(1e-12)
        ))?;
        if tc.log_every > 0 && (rec.step % tc.log_every == 0 || k == total) {
            eprintln!(
                "step {}/{total} loss {:.4} lr x{:.3}/{:.3} {:.0} tok/s",
                rec.step,
                rec.loss,
                rec.muon_multiplier,
                rec.adam_multiplier,
                rec.batch_tokens as f64 / secs.max(1e-12)
            );
        }
        if tc.checkpoint_every > 0 && k % tc.checkpoint_every == 0 && k < total {
            t.save(&checkpoint_dir(out, k))?;
        }
        last_loss = Some(rec.loss);
    }
    t.save(&out.join("final"))?;
    if holdout.is_none() {
        holdout = t.evaluate()?;
    }
    let summary = TrainSummary {
        steps: t.cursor().step,
        tokens_seen: t.cursor().tokens_seen,
        final_loss: last_loss,
        holdout,
        unigram: t.unigram_baseline(),
        n_train_seqs: t.corpus.train.len(),
        n_holdout_seqs: t.corpus.holdout.len(),
        n_rejected: t.corpus.rejected.len(),
        n_too_short: t.corpus.n_too_short,
        n_params: t.model.n_params(),
    };
    write_file(
        &out.join("summary.json"),
        &serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(summary)
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
