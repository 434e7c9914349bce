use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use proust::data::{tokenize, write_fasta, FastaRecord};
use proust::lens::context::ContextWindow;
use proust::lens::EntropyBase;
use proust::model::checkpoint::Dtype;
use proust::run::commands::default_motifs;
use proust::run::{cmd_analyze, cmd_pssm, cmd_score, Analysis, AnalyzeArgs, ScoreArgs};
use proust::scoring::{zscores, AugmentOptions};
use proust::{Error, Model, ModelConfig};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/score")
}

fn toy_checkpoint(dir: &Path) -> PathBuf {
    let m: Model = Model::new(ModelConfig::toy(1, 32), 7).unwrap();
    let p = dir.join("ckpt");
    m.save(&p, Dtype::F64).unwrap();
    p
}

fn score_args(ckpt: &Path, out: &Path, a3m: bool, threads: usize) -> ScoreArgs {
    let f = fixtures();
    ScoreArgs {
        checkpoint: ckpt.to_path_buf(),
        assay: f.join("assay.csv"),
        wt_fasta: f.join("wt.fasta"),
        a3m: a3m.then(|| f.join("alignment.a3m")),
        out_dir: out.to_path_buf(),
        augment: AugmentOptions::default(),
        sweep: if a3m { vec![0, 5, 10, 40] } else { Vec::new() },
        threads,
    }
}

/// Compare against the committed files; `PROUST_BLESS=1` rewrites them.
fn check_golden(out: &Path, names: &[&str]) {
    let expected = fixtures().join("expected");
    for name in names {
        let got = fs::read(out.join(name)).unwrap_or_else(|_| panic!("{name} missing"));
        let want_path = expected.join(name);
        if std::env::var_os("PROUST_BLESS").is_some() {
            fs::write(&want_path, &got).unwrap();
            continue;
        }
        let want = fs::read(&want_path).unwrap();
        assert!(got == want, "{name} differs from its fixture");
    }
}

#[test]
fn score_matches_golden_files() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = toy_checkpoint(dir.path());
    let out = dir.path().join("score");
    let report = cmd_score(&score_args(&ckpt, &out, true, 1)).unwrap();
    assert_eq!(report.scores.len(), 20);
    let lines: Vec<usize> = report.rejected.iter().map(|r| r.line).collect();
    assert_eq!(lines, vec![6, 10, 15]);
    assert!(report.summary.rho_ll.is_some() && report.summary.rho_combined.is_some());
    assert_eq!(report.summary.depth, 30);
    check_golden(
        &out,
        &[
            "scores.csv",
            "summary.csv",
            "rejected.csv",
            "depth_sweep.csv",
        ],
    );

    let pssm_out = dir.path().join("pssm");
    let n = cmd_pssm(
        &fixtures().join("alignment.a3m"),
        &pssm_out,
        &AugmentOptions::default(),
    )
    .unwrap();
    assert_eq!(n, 30);
    check_golden(&pssm_out, &["pssm.csv", "frequencies.csv"]);
}

#[test]
fn score_is_deterministic_across_threads() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = toy_checkpoint(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    cmd_score(&score_args(&ckpt, &a, true, 1)).unwrap();
    cmd_score(&score_args(&ckpt, &b, true, 3)).unwrap();
    for f in ["scores.csv", "summary.csv", "depth_sweep.csv"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn without_alignment_combined_is_half_the_ll_zscore() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = toy_checkpoint(dir.path());
    let out = dir.path().join("s");
    let r = cmd_score(&score_args(&ckpt, &out, false, 1)).unwrap();
    let ll: Vec<f64> = r.scores.iter().map(|s| s.ll).collect();
    for (s, z) in r.scores.iter().zip(zscores(&ll)) {
        assert_eq!(s.combined, 0.5 * z);
        assert!(s.pssm.is_none());
    }
    assert_eq!(r.summary.rho_ll, r.summary.rho_combined);
    assert!(!out.join("depth_sweep.csv").exists());
}

#[test]
fn mismatched_alignment_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = toy_checkpoint(dir.path());
    let a3m = dir.path().join("other.a3m");
    fs::write(&a3m, ">q\nMKTAYIAKQR\n>h\nMKTAYIAKQR\n").unwrap();
    let mut args = score_args(&ckpt, &dir.path().join("s"), true, 1);
    args.a3m = Some(a3m);
    assert!(matches!(cmd_score(&args), Err(Error::Validation(_))));
}

fn analyze_args(ckpt: &Path, fasta: &Path, out: &Path) -> AnalyzeArgs {
    AnalyzeArgs {
        checkpoint: ckpt.to_path_buf(),
        fasta: fasta.to_path_buf(),
        analyses: Analysis::parse_list("all").unwrap(),
        out_dir: out.to_path_buf(),
        base: EntropyBase::Nats,
        n_bins: 10,
        threshold: None,
        window: ContextWindow::Preceding,
        motifs: default_motifs(),
        threads: 2,
    }
}

fn three_sequences(dir: &Path) -> PathBuf {
    let records: Vec<FastaRecord> = [
        "MKTAYIAKQRQISFVKSHFSRQLEERLGLIEVQAPILSRVGDGTQDNLSGAEKAVQVKVKALPDAQ",
        "MSTNPKPQRKTKRNTNRRPQDVKFPGGGQIVGGVYLLPRRGPRLGVRATRKTSERSQPRGRRQPIP",
        "MACDCAAGKKGPAKPCWWCGHHLLVVAACCEECC",
    ]
    .iter()
    .enumerate()
    .map(|(i, s)| {
        tokenize(s).unwrap();
        FastaRecord {
            id: format!("s{i}"),
            sequence: s.to_string(),
        }
    })
    .collect();
    let p = dir.join("three.fasta");
    fs::write(&p, write_fasta(&records, 60)).unwrap();
    p
}

/// Sums of columns `cols` over all data rows.
fn column_sums(path: &Path, cols: std::ops::Range<usize>) -> Vec<f64> {
    let text = fs::read_to_string(path).unwrap();
    let mut sums: Vec<f64> = Vec::new();
    for line in text.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        let vals: Vec<f64> = cells[cols.clone()]
            .iter()
            .map(|v| v.parse().unwrap())
            .collect();
        sums.resize(vals.len(), 0.0);
        for (s, v) in sums.iter_mut().zip(vals) {
            *s += v;
        }
    }
    sums
}

fn row_sums(path: &Path, skip_cols: usize) -> Vec<f64> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            l.split(',')
                .skip(skip_cols)
                .map(|v| v.parse::<f64>().unwrap())
                .sum()
        })
        .collect()
}

#[test]
fn analyze_all_emits_every_file_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = toy_checkpoint(dir.path());
    let fasta = three_sequences(dir.path());
    let a = dir.path().join("a");
    cmd_analyze(&analyze_args(&ckpt, &fasta, &a)).unwrap();
    let files = [
        "layer_accuracy.csv",
        "layer_mean_probs.csv",
        "suppression.csv",
        "entropy_positions.csv",
        "entropy_sequences.csv",
        "entropy_bins.csv",
        "attention_bands.csv",
        "attention_groups.csv",
        "hydrophobic_context.csv",
        "motif_entropy.csv",
        "prediction_bias.csv",
        "summary.json",
    ];
    for f in files {
        assert!(a.join(f).exists(), "{f}");
    }

    // every emitted distribution sums to one
    let mut sums = row_sums(&a.join("layer_mean_probs.csv"), 1);
    sums.extend(column_sums(&a.join("suppression.csv"), 1..2));
    sums.extend(column_sums(&a.join("attention_bands.csv"), 1..2));
    sums.extend(column_sums(&a.join("prediction_bias.csv"), 1..3));
    // two lens rows for one layer, one column each, two bias columns
    assert_eq!(sums.len(), 2 + 1 + 1 + 2);
    for s in sums {
        assert!((s - 1.0).abs() < 1e-9, "{s}");
    }

    let b = dir.path().join("b");
    cmd_analyze(&analyze_args(&ckpt, &fasta, &b)).unwrap();
    for f in files {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn unknown_analysis_lists_the_valid_names() {
    match Analysis::parse_list("lens,bogus") {
        Err(Error::Config(msg)) => {
            assert!(
                msg.contains("bogus") && msg.contains("entropy") && msg.contains("all"),
                "{msg}"
            );
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(
        Analysis::parse_list("bias, lens,bias").unwrap(),
        vec![Analysis::Bias, Analysis::Lens]
    );
}

fn proust(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_proust"))
        .args(args)
        .env("PROUST_THREADS", "1")
        .output()
        .unwrap()
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = toy_checkpoint(dir.path());
    let fasta = three_sequences(dir.path());
    let s = |p: &Path| p.to_str().unwrap().to_string();

    assert_eq!(proust(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(proust(&["--help"]).status.code(), Some(0));
    assert_eq!(proust(&["train"]).status.code(), Some(1));
    let out = proust(&[
        "analyze",
        "--checkpoint",
        &s(&ckpt),
        "--fasta",
        &s(&fasta),
        "--out",
        &s(dir.path()),
        "--analyses",
        "bogus",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("valid names"));
    let missing = dir.path().join("missing");
    assert_eq!(
        proust(&["generate", "--checkpoint", &s(&missing)])
            .status
            .code(),
        Some(1)
    );

    let out = proust(&[
        "generate",
        "--checkpoint",
        &s(&ckpt),
        "-n",
        "2",
        "--max-new",
        "12",
        "--seed",
        "3",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with('>')).count(), 2);

    let out = proust(&["selftest", "--only", "8,10,12"]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    assert_eq!(
        String::from_utf8_lossy(&out.stdout).matches("PASS").count(),
        3
    );
    assert_eq!(proust(&["selftest", "--only", "4"]).status.code(), Some(2));
}

#[test]
fn train_print_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = proust(&[
        "train",
        "--synthetic-tokens",
        "5000",
        "--toy",
        "1,16",
        "--out",
        dir.path().to_str().unwrap(),
        "--packing",
        "eos-separator",
        "--token-budget",
        "512",
        "--crop-len",
        "256",
        "--adam-warmup",
        "0.05",
        "--print-config",
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let cfg = proust::run::RunConfig::from_toml(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(cfg.data.packing, proust::data::PackingMode::EosSeparator);
    assert_eq!(cfg.optim.adam_warmup, 0.05);
    assert_eq!(cfg.model, ModelConfig::toy(1, 16));
}
