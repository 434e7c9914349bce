//! Train a toy model for a few dozen steps on the built-in synthetic corpus,
//! compare its holdout loss with the unigram baseline, and reload the
//! checkpoint it writes.

use proust::model::checkpoint::Dtype;
use proust::run::{Corpus, RunConfig, Trainer};
use proust::{Model, ModelConfig, Result};

fn main() -> Result<()> {
    let out = std::env::temp_dir().join("proust-train-tiny");
    let mut cfg = RunConfig {
        out_dir: out.clone(),
        model: ModelConfig::toy(1, 32),
        ..RunConfig::default()
    };
    cfg.data.synthetic_tokens = Some(60_000);
    cfg.data.holdout_fraction = 0.05;
    cfg.data.crop_len = 512;
    cfg.data.token_budget = 2048;
    cfg.train.steps = 40;
    cfg.train.log_every = 0;
    cfg.optim.muon.lr = 0.02;
    cfg.optim.adam.lr = 2e-3;
    cfg.validate()?;

    let corpus = Corpus::load(&cfg)?;
    println!(
        "{} train / {} holdout sequences",
        corpus.train.len(),
        corpus.holdout.len()
    );
    let mut trainer = Trainer::new(cfg, corpus)?;
    if let Some(u) = trainer.unigram_baseline() {
        println!(
            "unigram baseline: loss {:.4}, ppl {:.2}",
            u.loss, u.perplexity
        );
    }
    while !trainer.done() {
        let r = trainer.step(None)?;
        if r.step % 10 == 0 {
            println!(
                "step {:>3}: loss {:.4} (muon ×{:.2})",
                r.step, r.loss, r.muon_multiplier
            );
        }
    }
    if let Some(h) = trainer.evaluate()? {
        println!("holdout: loss {:.4}, ppl {:.2}", h.loss, h.perplexity);
    }

    trainer.save(&out)?;
    let ckpt = out.join("final");
    trainer.model.save(&ckpt, Dtype::F32)?;
    let back: Model = Model::load(&ckpt)?;
    let diff = back.weights.head.max_abs_diff(&trainer.model.weights.head);
    println!("f32 checkpoint reloaded, head max |diff| {diff:.2e}");
    Ok(())
}
