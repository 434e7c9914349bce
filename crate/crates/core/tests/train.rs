use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use proust::data::synthetic::{letters, ProteinHmm};
use proust::data::{write_fasta, FastaRecord};
use proust::run::{train, Corpus, RunConfig, Trainer};
use proust::{Error, ModelConfig, Tensor};

fn write_corpus(dir: &Path, n: usize) -> std::path::PathBuf {
    let hmm = ProteinHmm::new(30, 60);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let records: Vec<FastaRecord> = (0..n)
        .map(|i| FastaRecord {
            id: format!("seq{i}"),
            sequence: letters(&hmm.sample(&mut rng)),
        })
        .collect();
    let path = dir.join("corpus.fasta");
    fs::write(&path, write_fasta(&records, 60)).unwrap();
    path
}

fn toy_config(out: &Path, fasta: &Path, steps: usize) -> RunConfig {
    let mut cfg = RunConfig {
        out_dir: out.to_path_buf(),
        model: ModelConfig::toy(2, 32),
        ..Default::default()
    };
    cfg.data.train_fasta = Some(fasta.to_path_buf());
    cfg.data.holdout_fraction = 0.1;
    cfg.data.crop_len = 48;
    cfg.data.token_budget = 256;
    cfg.train.steps = steps;
    cfg.train.log_every = 0;
    cfg
}

fn losses(out: &Path) -> Vec<f64> {
    fs::read_to_string(out.join("metrics.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn toy_run_learns_and_reports_perplexity() {
    let dir = tempfile::tempdir().unwrap();
    let fasta = write_corpus(dir.path(), 100);
    let out = dir.path().join("run");
    let s = train(&toy_config(&out, &fasta, 200), None).unwrap();
    let l = losses(&out);
    assert_eq!(l.len(), 200);
    assert!(l[199] < l[0], "{} vs {}", l[199], l[0]);
    let h = s.holdout.unwrap();
    assert_eq!(h.perplexity, h.loss.exp());
    assert_eq!(s.n_train_seqs + s.n_holdout_seqs, 100);
    for f in [
        "run.toml",
        "metrics.csv",
        "throughput.csv",
        "summary.json",
        "final/model.bin",
        "final/optim.bin",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let saved = RunConfig::load(&out.join("run.toml")).unwrap();
    assert_eq!(saved, toy_config(&out, &fasta, 200));
}

#[test]
fn resume_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let fasta = write_corpus(dir.path(), 60);
    let a = dir.path().join("a");
    let mut cfg = toy_config(&a, &fasta, 24);
    cfg.train.checkpoint_every = 10;
    cfg.train.eval_every = 8;
    train(&cfg, None).unwrap();

    // a second run stopped early, then resumed from its step-10 checkpoint
    let b = dir.path().join("b");
    let mut cfg_b = cfg.clone();
    cfg_b.out_dir = b.clone();
    train(&cfg_b, None).unwrap();
    let ckpt = b.join("checkpoints/step000010");
    assert!(ckpt.join("cursor.json").exists());
    fs::remove_dir_all(b.join("final")).unwrap();
    train(&cfg_b, Some(&ckpt)).unwrap();

    let read = |p: &Path| fs::read(p).unwrap();
    assert_eq!(read(&a.join("metrics.csv")), read(&b.join("metrics.csv")));
    assert_eq!(
        read(&a.join("final/model.bin")),
        read(&b.join("final/model.bin"))
    );
    assert_eq!(
        read(&a.join("final/optim.bin")),
        read(&b.join("final/optim.bin"))
    );
}

#[test]
fn resume_crosses_epochs() {
    let dir = tempfile::tempdir().unwrap();
    let fasta = write_corpus(dir.path(), 30);
    let cfg = toy_config(&dir.path().join("r"), &fasta, 12);
    let corpus = Corpus::load(&cfg).unwrap();
    let mut t = Trainer::new(cfg.clone(), corpus.clone()).unwrap();
    let mut reference = Vec::new();
    for _ in 0..12 {
        reference.push(t.step(None).unwrap());
    }
    assert!(
        reference.last().unwrap().epoch >= 1,
        "corpus too large for this test"
    );

    let mut t = Trainer::new(cfg.clone(), corpus.clone()).unwrap();
    for _ in 0..7 {
        t.step(None).unwrap();
    }
    let ck = dir.path().join("ck");
    t.save(&ck).unwrap();
    let mut r = Trainer::resume(cfg, corpus, &ck).unwrap();
    for want in &reference[7..] {
        let got = r.step(None).unwrap();
        assert_eq!(got.loss.to_bits(), want.loss.to_bits());
        assert_eq!(got.epoch, want.epoch);
    }
}

#[test]
fn reruns_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let fasta = write_corpus(dir.path(), 40);
    let mut outs = Vec::new();
    for name in ["x", "y"] {
        let out = dir.path().join(name);
        train(&toy_config(&out, &fasta, 6), None).unwrap();
        outs.push(out);
    }
    for f in ["metrics.csv", "final/model.bin", "summary.json"] {
        assert_eq!(
            fs::read(outs[0].join(f)).unwrap(),
            fs::read(outs[1].join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn non_finite_loss_aborts_with_dump() {
    let dir = tempfile::tempdir().unwrap();
    let fasta = write_corpus(dir.path(), 30);
    let cfg = toy_config(&dir.path().join("r"), &fasta, 5);
    let mut t = Trainer::new(cfg.clone(), Corpus::load(&cfg).unwrap()).unwrap();
    t.step(None).unwrap();
    let shape = t.model.weights.head.shape().to_vec();
    t.model.weights.head = Tensor::full(&shape, f64::NAN);
    let dump = dir.path().join("dump");
    match t.step(Some(&dump)) {
        Err(Error::NonFinite { step, .. }) => assert_eq!(step, 1),
        other => panic!("expected a non-finite error, got {other:?}"),
    }
    let text = fs::read_to_string(dump.join("nonfinite_step000001.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["step"], 1);
    assert!(!v["sequences"].as_array().unwrap().is_empty());
}

#[test]
fn missing_corpus_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path(), &dir.path().join("nope.fasta"), 5);
    assert!(matches!(train(&cfg, None), Err(Error::Io { .. })));
}
