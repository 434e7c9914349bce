//! What each subcommand does, minus argument parsing. Every command writes
//! only under its output directory and never touches its inputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use super::train::csv_field;
use crate::data::synthetic::letters;
use crate::data::{
    parse_fasta, partition_records, tokenize, write_fasta, FastaRecord, TokenSequence, ALPHABET,
    VOCAB_SIZE,
};
use crate::error::{Error, Result};
use crate::lens::{
    attention_stats, hydrophobic_context_correlation, inspect, layer_accuracy, median_threshold,
    motif_entropy_ratio, positional_entropy_bins, prediction_bias, retrieval_heuristic,
    suppression_frequencies, ContextWindow, EntropyBase, EntropyProfile, Inspection, Motif,
    ResidueGroup, BAND_LABELS, BUILTIN_MOTIFS,
};
use crate::model::decode::GenerateOptions;
use crate::model::Model;
use crate::scoring::assay::{fmt_num, write_scores, write_summary};
use crate::scoring::{
    build_pssm, combine_scores, depth_sweep, filter_homologs, parse_a3m, pssm_scores, read_assay,
    score_variants, spearman, AssaySummary, AugmentOptions, DepthRow, Msa, RowError, ScoredVariant,
    VariantSpec,
};

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn make_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Full-precision number for analysis tables, so column sums survive the
/// round trip.
fn fmt_full(x: f64) -> String {
    format!("{x:.17e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_full).unwrap_or_default()
}

/// Named sequences from a FASTA file, each tokenised with EOS. Records that
/// fail to parse are an input error naming the line.
pub fn read_sequences(path: &Path) -> Result<Vec<(String, TokenSequence)>> {
    let (records, rejected) = partition_records(parse_fasta(&read_text(path)?)?);
    if let Some(r) = rejected.first() {
        return Err(Error::Input(format!(
            "{}: record {:?} at line {}: {}",
            path.display(),
            r.id,
            r.line,
            r.reason
        )));
    }
    records
        .into_iter()
        .map(|r| Ok((r.id, tokenize(&r.sequence)?)))
        .collect()
}

#[derive(Clone, Debug)]
pub struct GenerateArgs {
    pub checkpoint: PathBuf,
    pub prefix: String,
    pub n: usize,
    pub options: GenerateOptions,
}

/// FASTA text of `n` samples; sample `i` uses seed `options.seed + i`.
pub fn cmd_generate(args: &GenerateArgs) -> Result<String> {
    let model: Model = Model::load(&args.checkpoint)?;
    let prefix = tokenize(&args.prefix)?;
    let mut records = Vec::with_capacity(args.n);
    for i in 0..args.n {
        let opts = GenerateOptions {
            seed: args.options.seed.wrapping_add(i as u64),
            ..args.options.clone()
        };
        let g = model.generate(&prefix, &opts)?;
        records.push(FastaRecord {
            id: format!("sample{i} seed={} eos={}", opts.seed, g.sequence.has_eos()),
            sequence: letters(&g.sequence),
        });
    }
    Ok(write_fasta(&records, 60))
}

#[derive(Clone, Debug)]
pub struct ScoreArgs {
    pub checkpoint: PathBuf,
    pub assay: PathBuf,
    pub wt_fasta: PathBuf,
    pub a3m: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub augment: AugmentOptions,
    /// Homolog depths for the sweep table; empty skips the sweep.
    pub sweep: Vec<usize>,
    pub threads: usize,
}

#[derive(Clone, Debug)]
pub struct ScoreReport {
    pub scores: Vec<ScoredVariant>,
    pub summary: AssaySummary,
    pub rejected: Vec<RowError>,
    pub sweep: Option<Vec<DepthRow>>,
}

fn first_sequence(path: &Path) -> Result<TokenSequence> {
    read_sequences(path)?
        .into_iter()
        .next()
        .map(|(_, s)| s)
        .ok_or_else(|| Error::Input(format!("{}: no sequence", path.display())))
}

fn read_msa(path: &Path, wt: &TokenSequence) -> Result<Msa> {
    let msa = parse_a3m(&read_text(path)?)?;
    if msa.query != wt.residues() {
        return Err(Error::Validation(format!(
            "{}: alignment query differs from the wild type",
            path.display()
        )));
    }
    Ok(msa)
}

/// Score an assay. Outputs `scores.csv`, `summary.csv`, and when relevant
/// `rejected.csv` and `depth_sweep.csv`.
pub fn cmd_score(args: &ScoreArgs) -> Result<ScoreReport> {
    let model: Model = Model::load(&args.checkpoint)?;
    let wt = first_sequence(&args.wt_fasta)?;
    if wt.len() > model.config.max_seq_len {
        return Err(Error::Input(format!(
            "wild type has {} tokens, over max_seq_len {}",
            wt.len(),
            model.config.max_seq_len
        )));
    }
    let file = fs::File::open(&args.assay).map_err(|e| Error::io(&args.assay, e))?;
    let table = read_assay(file)?;
    let mut rejected = table.rejected;
    let mut records = Vec::with_capacity(table.records.len());
    for r in table.records {
        let check = match &r.variant {
            VariantSpec::Substitution(_) => r.variant.validate(&wt),
            VariantSpec::Indel(s) if s.len() > model.config.max_seq_len => {
                Err(Error::Input(format!(
                    "variant has {} tokens, over max_seq_len {}",
                    s.len(),
                    model.config.max_seq_len
                )))
            }
            VariantSpec::Indel(_) => Ok(()),
        };
        match check {
            Ok(()) => records.push(r),
            Err(e) => rejected.push(RowError {
                line: r.line,
                reason: e.to_string(),
            }),
        }
    }
    rejected.sort_by_key(|r| r.line);
    if records.is_empty() {
        return Err(Error::Input(format!(
            "{}: no usable variants",
            args.assay.display()
        )));
    }
    let msa = args.a3m.as_deref().map(|p| read_msa(p, &wt)).transpose()?;

    let variants: Vec<VariantSpec> = records.iter().map(|r| r.variant.clone()).collect();
    let ll = score_variants(&model, &wt, &variants, args.threads)?;
    let pssm = pssm_scores(&variants, msa.as_ref(), &args.augment)?;
    let zeros = vec![0.0; ll.len()];
    let combined = combine_scores(&ll, pssm.as_ref().map_or(&zeros, |(s, _)| s))?;
    let scores: Vec<ScoredVariant> = records
        .iter()
        .enumerate()
        .map(|(i, r)| ScoredVariant {
            label: r.label.clone(),
            ll: ll[i],
            pssm: pssm.as_ref().map(|(s, _)| s[i]),
            combined: combined[i],
        })
        .collect();

    let fitness: Option<Vec<f64>> = records.iter().map(|r| r.fitness).collect();
    let rho = |x: &[f64]| -> Result<Option<f64>> {
        match &fitness {
            Some(f) if f.len() >= 3 => spearman(x, f),
            _ => Ok(None),
        }
    };
    let summary = AssaySummary {
        assay: args
            .assay
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        n: scores.len(),
        rho_ll: rho(&ll)?,
        rho_combined: rho(&combined)?,
        depth: pssm.as_ref().map_or(0, |(_, n)| *n),
    };

    let sweep = if args.sweep.is_empty() {
        None
    } else {
        let msa = msa
            .as_ref()
            .ok_or_else(|| Error::Config("a depth sweep needs an alignment".into()))?;
        let f = fitness
            .as_ref()
            .ok_or_else(|| Error::Input("a depth sweep needs fitness for every variant".into()))?;
        Some(depth_sweep(
            &ll,
            &variants,
            f,
            msa,
            &args.sweep,
            &args.augment,
        )?)
    };

    make_dir(&args.out_dir)?;
    let open = |name: &str| {
        let p = args.out_dir.join(name);
        fs::File::create(&p).map_err(|e| Error::io(&p, e))
    };
    write_scores(&scores, open("scores.csv")?)?;
    write_summary(std::slice::from_ref(&summary), open("summary.csv")?)?;
    let rpath = args.out_dir.join("rejected.csv");
    if rejected.is_empty() {
        if rpath.exists() {
            fs::remove_file(&rpath).map_err(|e| Error::io(&rpath, e))?;
        }
    } else {
        let mut text = String::from("line,reason\n");
        for r in &rejected {
            text.push_str(&format!("{},{}\n", r.line, csv_field(&r.reason)));
        }
        write_text(&rpath, &text)?;
    }
    if let Some(rows) = &sweep {
        let mut text = String::from("depth,rho,n_variants,n_homologs,skipped\n");
        for r in rows {
            text.push_str(&format!(
                "{},{},{},{},{}\n",
                r.depth,
                r.rho.map(fmt_num).unwrap_or_default(),
                r.n_variants,
                r.n_homologs,
                r.skipped
            ));
        }
        write_text(&args.out_dir.join("depth_sweep.csv"), &text)?;
    }
    Ok(ScoreReport {
        scores,
        summary,
        rejected,
        sweep,
    })
}

/// Build the PSSM of an alignment after filtering, write `pssm.csv` (scores)
/// and `frequencies.csv`, and return the number of homologs used.
pub fn cmd_pssm(a3m: &Path, out_dir: &Path, opts: &AugmentOptions) -> Result<usize> {
    let msa = parse_a3m(&read_text(a3m)?)?;
    let kept = filter_homologs(&msa, &opts.filter)?;
    let p = build_pssm(&kept, opts.pseudocount)?;
    make_dir(out_dir)?;
    let header: String = std::iter::once("position,query".to_string())
        .chain(ALPHABET.chars().map(|c| c.to_string()))
        .collect::<Vec<_>>()
        .join(",");
    for (name, table) in [("pssm.csv", &p.scores), ("frequencies.csv", &p.freq)] {
        let mut text = format!("{header}\n");
        for (i, row) in table.iter().enumerate() {
            let q = ALPHABET.as_bytes()[msa.query[i] as usize] as char;
            let cells: Vec<String> = row.iter().map(|&x| fmt_num(x)).collect();
            text.push_str(&format!("{},{q},{}\n", i + 1, cells.join(",")));
        }
        write_text(&out_dir.join(name), &text)?;
    }
    Ok(p.n_homologs)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Analysis {
    Lens,
    Inverse,
    Entropy,
    Attention,
    Hydrophobic,
    Motifs,
    Bias,
}

impl Analysis {
    pub const ALL: [Analysis; 7] = [
        Analysis::Lens,
        Analysis::Inverse,
        Analysis::Entropy,
        Analysis::Attention,
        Analysis::Hydrophobic,
        Analysis::Motifs,
        Analysis::Bias,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Analysis::Lens => "lens",
            Analysis::Inverse => "inverse",
            Analysis::Entropy => "entropy",
            Analysis::Attention => "attention",
            Analysis::Hydrophobic => "hydrophobic",
            Analysis::Motifs => "motifs",
            Analysis::Bias => "bias",
        }
    }

    /// Comma-separated names, or `all`.
    pub fn parse_list(text: &str) -> Result<Vec<Analysis>> {
        let mut out = Vec::new();
        for part in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            if part == "all" {
                return Ok(Self::ALL.to_vec());
            }
            let a = Self::ALL
                .into_iter()
                .find(|a| a.name() == part)
                .ok_or_else(|| {
                    let names: Vec<&str> = Self::ALL.iter().map(|a| a.name()).collect();
                    Error::Config(format!(
                        "unknown analysis {part:?}; valid names: all, {}",
                        names.join(", ")
                    ))
                })?;
            if !out.contains(&a) {
                out.push(a);
            }
        }
        if out.is_empty() {
            return Err(Error::Config("no analyses selected".into()));
        }
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct AnalyzeArgs {
    pub checkpoint: PathBuf,
    pub fasta: PathBuf,
    pub analyses: Vec<Analysis>,
    pub out_dir: PathBuf,
    pub base: EntropyBase,
    pub n_bins: usize,
    /// Retrieval threshold on the entropy std; the corpus median when unset.
    pub threshold: Option<f64>,
    pub window: ContextWindow,
    pub motifs: Vec<String>,
    pub threads: usize,
}

/// Run the selected analyses, one CSV family each, plus `summary.json`.
/// Returns the summary.
pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<serde_json::Value> {
    let model: Model = Model::load(&args.checkpoint)?;
    let seqs = read_sequences(&args.fasta)?;
    if seqs.is_empty() {
        return Err(Error::Input(format!(
            "{}: no sequences",
            args.fasta.display()
        )));
    }
    let motifs = args
        .motifs
        .iter()
        .map(|m| Motif::parse(m))
        .collect::<Result<Vec<_>>>()?;
    for (id, s) in &seqs {
        if s.len() > model.config.max_seq_len {
            return Err(Error::Input(format!(
                "sequence {id:?} has {} tokens, over max_seq_len {}",
                s.len(),
                model.config.max_seq_len
            )));
        }
    }
    let ins: Vec<Inspection> =
        crate::par::map_ordered(&seqs, args.threads, |(_, s)| inspect(&model, s))?;
    make_dir(&args.out_dir)?;
    let out = |name: &str| args.out_dir.join(name);
    let mut summary = serde_json::Map::new();
    summary.insert("n_sequences".into(), json!(seqs.len()));

    for a in &args.analyses {
        match a {
            Analysis::Lens => {
                let acc = layer_accuracy(&ins);
                let mut text = String::from("layer,accuracy\n");
                for (l, x) in acc.iter().enumerate() {
                    text.push_str(&format!("{l},{}\n", fmt_opt(*x)));
                }
                write_text(&out("layer_accuracy.csv"), &text)?;
                // mean next-token distribution per layer
                let mut text = String::from("layer");
                for t in 0..VOCAB_SIZE {
                    text.push(',');
                    text.push_str(&token_name(t));
                }
                text.push('\n');
                for l in 0..ins[0].layer_probs.len() {
                    let mut mean = [0.0f64; VOCAB_SIZE];
                    let mut n = 0usize;
                    for i in &ins {
                        let p = &i.layer_probs[l];
                        for t in 0..p.rows() {
                            for (m, &x) in mean.iter_mut().zip(p.row(t)) {
                                *m += x;
                            }
                            n += 1;
                        }
                    }
                    let cells: Vec<String> = mean.iter().map(|m| fmt_full(m / n as f64)).collect();
                    text.push_str(&format!("{l},{}\n", cells.join(",")));
                }
                write_text(&out("layer_mean_probs.csv"), &text)?;
                summary.insert("layer_accuracy".into(), json!(acc));
            }
            Analysis::Inverse => {
                let f = suppression_frequencies(&ins);
                let mut text = String::from("token,frequency\n");
                for (t, x) in f.iter().enumerate() {
                    text.push_str(&format!("{},{}\n", token_name(t), fmt_full(*x)));
                }
                write_text(&out("suppression.csv"), &text)?;
                let top = crate::lens::argmax(&f);
                summary.insert(
                    "suppression".into(),
                    json!({ "most_suppressed": token_name(top), "frequency": f[top] }),
                );
            }
            Analysis::Entropy => {
                let profiles: Vec<EntropyProfile> = ins
                    .iter()
                    .map(|i| EntropyProfile::from_probs(i.final_probs(), args.base))
                    .collect();
                let threshold = match args.threshold {
                    Some(t) => t,
                    None => median_threshold(&profiles).unwrap_or(0.0),
                };
                let mut per_pos = String::from("sequence,position,residue,entropy\n");
                let mut per_seq = String::from("sequence,length,mean,std,retrieve\n");
                for ((id, s), p) in seqs.iter().zip(&profiles) {
                    for (t, h) in p.entropies.iter().enumerate() {
                        per_pos.push_str(&format!(
                            "{},{t},{},{}\n",
                            csv_field(id),
                            token_name(s.ids()[t] as usize),
                            fmt_full(*h)
                        ));
                    }
                    let adv = retrieval_heuristic(p, threshold);
                    per_seq.push_str(&format!(
                        "{},{},{},{},{}\n",
                        csv_field(id),
                        s.len(),
                        fmt_full(p.mean),
                        fmt_full(p.std),
                        adv.retrieve
                    ));
                }
                write_text(&out("entropy_positions.csv"), &per_pos)?;
                write_text(&out("entropy_sequences.csv"), &per_seq)?;
                let usable: Vec<EntropyProfile> = profiles
                    .iter()
                    .filter(|p| p.entropies.len() >= args.n_bins)
                    .cloned()
                    .collect();
                let bins = positional_entropy_bins(&usable, args.n_bins)?;
                let mut text = String::from("bin,range,mean_entropy,count\n");
                for (b, (m, c)) in bins.mean.iter().zip(&bins.counts).enumerate() {
                    let lo = 100 * b / args.n_bins;
                    let hi = 100 * (b + 1) / args.n_bins;
                    text.push_str(&format!("{b},{lo}-{hi}%,{},{c}\n", fmt_opt(*m)));
                }
                write_text(&out("entropy_bins.csv"), &text)?;
                summary.insert(
                    "entropy".into(),
                    json!({
                        "base": args.base,
                        "threshold": threshold,
                        "bins": bins.mean,
                        "sequences_binned": usable.len(),
                        "mean": profiles.iter().map(|p| p.mean).sum::<f64>() / profiles.len() as f64,
                    }),
                );
            }
            Analysis::Attention => {
                let st = attention_stats(&ins);
                let mut text = String::from("band,fraction\n");
                for (l, f) in BAND_LABELS.iter().zip(st.bands) {
                    text.push_str(&format!("{l},{}\n", fmt_full(f)));
                }
                write_text(&out("attention_bands.csv"), &text)?;
                let mut text = String::from("group,residues,mean_received\n");
                for g in ResidueGroup::ALL {
                    text.push_str(&format!(
                        "{},{},{}\n",
                        g.name(),
                        g.letters(),
                        fmt_opt(st.group_received[g as usize])
                    ));
                }
                write_text(&out("attention_groups.csv"), &text)?;
                summary.insert("attention".into(), serde_json::to_value(st)?);
            }
            Analysis::Hydrophobic => {
                let c = hydrophobic_context_correlation(&ins, args.window)?;
                write_text(
                    &out("hydrophobic_context.csv"),
                    &format!(
                        "window,rho,n\n{},{},{}\n",
                        window_name(args.window),
                        fmt_opt(c.rho),
                        c.n
                    ),
                )?;
                summary.insert("hydrophobic_context".into(), serde_json::to_value(c)?);
            }
            Analysis::Motifs => {
                let mut text =
                    String::from("motif,matches,motif_entropy,background_entropy,ratio\n");
                let mut rows = Vec::new();
                for m in &motifs {
                    let r = motif_entropy_ratio(&ins, m, args.base);
                    text.push_str(&format!(
                        "{},{},{},{},{}\n",
                        r.motif,
                        r.n_matches,
                        fmt_opt(r.motif_mean),
                        fmt_opt(r.background_mean),
                        fmt_opt(r.ratio)
                    ));
                    rows.push(r);
                }
                write_text(&out("motif_entropy.csv"), &text)?;
                summary.insert("motifs".into(), serde_json::to_value(rows)?);
            }
            Analysis::Bias => {
                let rows = prediction_bias(&ins);
                let mut text = String::from("residue,predicted,empirical,ratio\n");
                for r in &rows {
                    text.push_str(&format!(
                        "{},{},{},{}\n",
                        r.residue,
                        fmt_full(r.predicted),
                        fmt_full(r.empirical),
                        fmt_opt(r.ratio)
                    ));
                }
                write_text(&out("prediction_bias.csv"), &text)?;
                summary.insert("prediction_bias".into(), serde_json::to_value(rows)?);
            }
        }
    }
    let summary = serde_json::Value::Object(summary);
    write_text(
        &out("summary.json"),
        &serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(summary)
}

pub fn default_motifs() -> Vec<String> {
    BUILTIN_MOTIFS.iter().map(|s| s.to_string()).collect()
}

fn token_name(t: usize) -> String {
    ALPHABET
        .chars()
        .nth(t)
        .map_or_else(|| "EOS".to_string(), |c| c.to_string())
}

fn window_name(w: ContextWindow) -> &'static str {
    match w {
        ContextWindow::Preceding => "preceding",
        ContextWindow::Symmetric => "symmetric",
    }
}
