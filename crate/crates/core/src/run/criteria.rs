//! The acceptance suite behind `proust selftest` and the `acceptance` test
//! target. Each criterion measures one quantity and compares it with a fixed
//! tolerance.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::RunConfig;
use super::train::{Corpus, Trainer};
use crate::data::synthetic::bigram_recall;
use crate::data::{residue_id, tokenize, PackedBatch, PackingMode, TokenSequence, N_RESIDUES};
use crate::error::{Error, Result};
use crate::lens::{
    attention_stats, entropy_profile, inspect, logit_lens, uniform_band_oracle, vocab_probs,
    EntropyBase,
};
use crate::model::{GenerateOptions, Model, ModelConfig};
use crate::optim::linalg::{polar_factor_svd, spectral_norm};
use crate::optim::muon::{muon_update, spectral_scale, MuonConfig, MuonState};
use crate::optim::polar::polar_express;
use crate::optim::schedule::LrSchedule;
use crate::optim::{OptimConfig, Optimizer};
use crate::scoring::msa::parse_a3m;
use crate::scoring::pssm::{build_pssm, log_odds, pssm_score};
use crate::scoring::variant::{Mutation, VariantSpec};
use crate::scoring::{augment, score_variants, spearman, AugmentOptions, SyntheticAssay};
use crate::tensor::check::grad_check_coords;
use crate::tensor::{SeqLayout, Tape, Tensor};

/// Criteria that cannot pass at their stated tolerances. They still run and
/// report their measurement; see the README for the analysis.
pub const KNOWN_UNATTAINABLE: &[usize] = &[4];

pub const NAMES: [&str; 12] = [
    "gradient integrity",
    "cache parity",
    "rope algebra",
    "polar factor",
    "spectral scaling",
    "induction capability",
    "desk-scale training",
    "parameter count",
    "scoring oracle",
    "pssm algebra",
    "lens contracts",
    "wsd schedule",
];

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub measured: String,
    pub tolerance: String,
    pub seconds: f64,
}

impl Report {
    pub fn expected_failure(&self) -> bool {
        !self.passed && KNOWN_UNATTAINABLE.contains(&self.id)
    }

    /// One table line: verdict, id, name, measurement, tolerance, time.
    pub fn line(&self) -> String {
        let verdict = match (self.passed, self.expected_failure()) {
            (true, _) => "PASS",
            (false, true) => "FAIL (expected)",
            (false, false) => "FAIL",
        };
        format!(
            "{verdict:<15} {:>2} {:<22} measured {} | tolerance {} | {:.1} s",
            self.id, self.name, self.measured, self.tolerance, self.seconds
        )
    }
}

struct Outcome {
    passed: bool,
    measured: String,
    tolerance: String,
}

fn outcome(passed: bool, measured: String, tolerance: &str) -> Result<Outcome> {
    Ok(Outcome {
        passed,
        measured,
        tolerance: tolerance.to_string(),
    })
}

/// Run one criterion (1-based id). Internal errors become failures.
pub fn run(id: usize) -> Result<Report> {
    let name = *NAMES
        .get(id.wrapping_sub(1))
        .ok_or_else(|| Error::Config(format!("no criterion {id}; valid ids are 1-12")))?;
    let t0 = Instant::now();
    let res = match id {
        1 => gradient_integrity(),
        2 => cache_parity(),
        3 => rope_algebra(),
        4 => polar_factor(),
        5 => spectral_scaling(),
        6 => induction(),
        7 => desk_training(),
        8 => parameter_count(),
        9 => scoring_oracle(),
        10 => pssm_algebra(),
        11 => lens_contracts(),
        _ => wsd_schedule(),
    };
    let seconds = t0.elapsed().as_secs_f64();
    let o = res.unwrap_or_else(|e| Outcome {
        passed: false,
        measured: format!("error: {e}"),
        tolerance: "-".into(),
    });
    let mut passed = o.passed;
    // Runtime limits are part of criteria 1, 6 and 7.
    let limit = match id {
        1 => Some(120.0),
        6 => Some(300.0),
        7 => Some(1800.0),
        _ => None,
    };
    let mut tolerance = o.tolerance;
    if let Some(l) = limit {
        passed &= seconds < l;
        tolerance = format!("{tolerance}, < {l:.0} s");
    }
    Ok(Report {
        id,
        name,
        passed,
        measured: o.measured,
        tolerance,
        seconds,
    })
}

/// Run `ids` in order, calling `each` as every report completes.
pub fn run_all(ids: &[usize], mut each: impl FnMut(&Report)) -> Result<Vec<Report>> {
    let mut out = Vec::with_capacity(ids.len());
    for &id in ids {
        let r = run(id)?;
        each(&r);
        out.push(r);
    }
    Ok(out)
}

fn gaussian(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.sample(StandardNormal))
}

fn random_ids(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..N_RESIDUES)).collect()
}

/// A model with every parameter moved off its initial value by up to
/// `±scale / 2`, so zero-init projections and Canon kernels carry gradient.
fn busy_model(config: ModelConfig, seed: u64, scale: f64) -> Result<Model> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Model::new(config, seed)?;
    m.weights = m.weights.map(|name, t| {
        let scale = if name.contains("canon") {
            scale.max(0.3)
        } else {
            scale
        };
        let mut t = t.clone();
        for x in t.data_mut() {
            *x += scale * (rng.random::<f64>() - 0.5);
        }
        t
    });
    Ok(m)
}

fn next_token_targets(ids: &[usize]) -> Vec<Option<usize>> {
    (0..ids.len()).map(|t| ids.get(t + 1).copied()).collect()
}

fn gradient_integrity() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    // Weights of order one lift the smallest gradients clear of the quotient's
    // roundoff; at eps 1e-4 the truncation error from the ReLU² kinks still
    // stays below it. Smaller steps lose to roundoff, larger ones to the kinks.
    let m = busy_model(ModelConfig::toy(2, 64), 1, 0.4)?;
    let ids = random_ids(32, &mut rng);
    let targets = next_token_targets(&ids);
    let layout = Arc::new(SeqLayout::single(ids.len()));
    let (_, grads) = m.loss_and_grads(&ids, &targets, layout.clone())?;
    let grads: Vec<Tensor> = grads.named().into_iter().map(|(_, g)| g.clone()).collect();
    let values: Vec<Tensor> = m
        .weights
        .named()
        .into_iter()
        .map(|(_, t)| t.clone())
        .collect();
    let names = m.weights.names();

    // A weight cannot change anything upstream of where it is read, so each
    // perturbed pass replays from there (the start of its layer, or of the
    // layer's FFN half); the loss is bit-identical.
    let n_layers = m.config.n_layers;
    let mut resume = Vec::with_capacity(n_layers + 1);
    let mut resume_mid = Vec::with_capacity(n_layers);
    for first in 0..=n_layers {
        resume.push(m.resume_point(&ids, layout.clone(), first, false)?);
        if first < n_layers {
            resume_mid.push(m.resume_point(&ids, layout.clone(), first, true)?);
        }
    }
    let mut probe = m.clone();
    let (mut worst, mut worst_at, mut n) = (0.0f64, String::new(), 0usize);
    for (pi, x) in values.iter().enumerate() {
        let from = if names[pi].starts_with("embed") {
            None
        } else if let Some(rest) = names[pi].strip_prefix("layers.") {
            let (i, local) = rest.split_once('.').expect("layer parameter");
            let i: usize = i.parse().expect("layer index");
            if local.starts_with("ffn") || local == "canon_c" {
                Some(&resume_mid[i])
            } else {
                Some(&resume[i])
            }
        } else {
            Some(&resume[n_layers])
        };
        let r = grad_check_coords(
            |p| {
                probe.weights.values_mut()[pi]
                    .data_mut()
                    .copy_from_slice(p.data());
                match from {
                    Some(r) => probe.loss_from(r, &targets, layout.clone()),
                    None => probe.loss(&ids, &targets, layout.clone()),
                }
            },
            x,
            &grads[pi],
            1e-4,
            None,
        )?;
        *probe.weights.values_mut()[pi] = x.clone();
        n += r.coords_checked;
        if r.max_rel_error > worst {
            worst = r.max_rel_error;
            worst_at = format!("{}[{}]", names[pi], r.worst_index);
        }
    }
    outcome(
        worst < 1e-4,
        format!("max rel error {worst:.3e} at {worst_at} over {n} coords"),
        "< 1e-4",
    )
}

fn cache_parity() -> Result<Outcome> {
    let m = busy_model(ModelConfig::toy(2, 64), 2, 0.02)?;
    let prefix = tokenize("M")?;
    let opts = GenerateOptions {
        max_new: 64,
        temperature: 0.0,
        seed: 0,
        allow_eos: false,
    };
    let g = m.generate(&prefix, &opts)?;
    if g.step_logits.len() != 64 {
        return Err(Error::State(format!(
            "{} decode steps, wanted 64",
            g.step_logits.len()
        )));
    }
    let full = m.forward(&g.sequence)?;
    let mut worst = 0.0f64;
    for (i, step) in g.step_logits.iter().enumerate() {
        for (a, b) in step.iter().zip(full.row(prefix.residues().len() - 1 + i)) {
            worst = worst.max((a - b).abs());
        }
    }
    outcome(
        worst < 1e-8,
        format!("max |cached - full| {worst:.3e} over 64 steps"),
        "< 1e-8",
    )
}

/// RoPE-slice dot products between every query row and every key row.
fn rope_scores(q: &Tensor, k: &Tensor, layout: &Arc<SeqLayout>, c: &ModelConfig) -> Result<Tensor> {
    let (dh, nope, rope) = (c.d_head(), c.d_head_nope, c.d_head_rope);
    let mut tape: Tape = Tape::new();
    let qv = tape.constant(q.clone());
    let kv = tape.constant(k.clone());
    let qr = tape.rope(qv, layout, dh, nope, rope, 1.0, c.rope_base)?;
    let kr = tape.rope(kv, layout, dh, nope, rope, 1.0, c.rope_base)?;
    let (qr, kr) = (tape.value(qr), tape.value(kr));
    let t = q.rows();
    Ok(Tensor::from_fn(&[t, t], |i| {
        let (a, b) = (qr.row(i / t), kr.row(i % t));
        (nope..dh).map(|j| a[j] * b[j]).sum()
    }))
}

fn rope_algebra() -> Result<Outcome> {
    let c = ModelConfig::full();
    let dh = c.d_head();
    let mut rng = ChaCha8Rng::seed_from_u64(103);

    let t = 64;
    let x = gaussian(&[t, c.n_q_heads * dh], &mut rng);
    let layout = Arc::new(SeqLayout::suffix(c.max_seq_len - t, t));
    let mut tape: Tape = Tape::new();
    let xv = tape.constant(x.clone());
    let fwd = tape.rope(
        xv,
        &layout,
        dh,
        c.d_head_nope,
        c.d_head_rope,
        1.0,
        c.rope_base,
    )?;
    let back = tape.rope(
        fwd,
        &layout,
        dh,
        c.d_head_nope,
        c.d_head_rope,
        -1.0,
        c.rope_base,
    )?;
    let round_trip = tape.value(back).max_abs_diff(&x);

    let q = gaussian(&[t, dh], &mut rng);
    let k = gaussian(&[t, dh], &mut rng);
    let base = rope_scores(&q, &k, &Arc::new(SeqLayout::single(t)), &c)?;
    let mut shift = 0.0f64;
    for off in [1, 100, 1000] {
        let s = rope_scores(&q, &k, &Arc::new(SeqLayout::suffix(off, t)), &c)?;
        shift = shift.max(s.max_abs_diff(&base));
    }

    // whole-model logits once key offset is off
    let mut cfg = ModelConfig::toy(2, 64);
    cfg.key_offset = false;
    let m = busy_model(cfg, 3, 0.02)?;
    let ids = random_ids(40, &mut rng);
    let a = m.forward_layout(&ids, Arc::new(SeqLayout::single(40)))?;
    let b = m.forward_layout(&ids, Arc::new(SeqLayout::suffix(500, 40)))?;
    let model_shift = a.max_abs_diff(&b);

    outcome(
        round_trip < 1e-12 && shift < 1e-10 && model_shift < 1e-10,
        format!("+θ/-θ {round_trip:.3e}, score shift {shift:.3e}, logit shift {model_shift:.3e}"),
        "< 1e-12, < 1e-10, < 1e-10",
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn polar_factor() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let eye = Tensor::eye(64);
    let (mut orth, mut dist, mut ok) = (Vec::new(), Vec::new(), 0);
    for _ in 0..20 {
        let g = gaussian(&[64, 64], &mut rng);
        let p = polar_express(&g, 5)?;
        let o = p.matmul_tn(&p)?.sub(&eye)?.frobenius() / 8.0;
        let exact = polar_factor_svd(&g)?;
        let d = p.sub(&exact)?.frobenius() / exact.frobenius();
        ok += usize::from(o < 1e-2 && d < 2e-2);
        orth.push(o);
        dist.push(d);
    }
    let worst_o = orth.iter().cloned().fold(0.0, f64::max);
    let worst_d = dist.iter().cloned().fold(0.0, f64::max);
    outcome(
        ok == 20,
        format!(
            "{ok}/20 within both; orthogonality median {:.3e} max {worst_o:.3e}; svd distance median {:.3e} max {worst_d:.3e}",
            median(orth),
            median(dist)
        ),
        "< 1e-2 and < 2e-2 on all 20",
    )
}

fn spectral_scaling() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let cfg = MuonConfig::default();
    let schedule = cfg.schedule()?;
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for shape in [[64, 64], [64, 256], [1024, 256]] {
        let mut state = MuonState::new(&shape);
        let want = cfg.lr * spectral_scale(&shape);
        let mut shape_worst = 0.0f64;
        for _ in 0..3 {
            let g = gaussian(&shape, &mut rng);
            let u = muon_update(&g, &mut state, &cfg, &schedule)?.scale(cfg.lr);
            let got = spectral_norm(&u, 200)?;
            shape_worst = shape_worst.max((got / want - 1.0).abs());
        }
        parts.push(format!("{}x{} {shape_worst:.2e}", shape[0], shape[1]));
        worst = worst.max(shape_worst);
    }
    outcome(
        worst < 0.05,
        format!("relative deviation {}", parts.join(", ")),
        "< 5% per shape",
    )
}

fn recall_batch(n: usize, rng: &mut impl Rng) -> (PackedBatch, Vec<Option<usize>>) {
    let mut seqs = Vec::with_capacity(n);
    let mut recall = Vec::new();
    for _ in 0..n {
        let q = rng.random_range(10..=16);
        let r = bigram_recall(10, q, rng);
        recall.extend(r.targets);
        seqs.push(r.seq);
    }
    (PackedBatch::from_sequences(&seqs), recall)
}

/// Train a 1-layer model on bigram recall and return its loss on the
/// repeated values of a fixed evaluation set.
fn recall_loss(key_offset: bool, canon_a: bool) -> Result<f64> {
    let mut c = ModelConfig::toy(1, 64);
    c.key_offset = key_offset;
    c.canon_a = canon_a;
    let mut m: Model = Model::new(c, 1)?;
    let steps = 1000;
    let mut oc = OptimConfig::default();
    oc.muon.lr = 0.03;
    oc.adam.lr = 2e-3;
    let mut opt = Optimizer::new(oc, &m.weights, steps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mode = PackingMode::StrictReset;
    for _ in 0..steps {
        let (b, _) = recall_batch(32, &mut rng);
        let (_, g) = m.loss_and_grads(&b.token_ids(), &b.targets(mode), b.layout(mode))?;
        opt.step(&mut m.weights, &g)?;
    }
    let (b, recall) = recall_batch(200, &mut ChaCha8Rng::seed_from_u64(99));
    m.loss(&b.token_ids(), &recall, b.layout(mode))
}

fn induction() -> Result<Outcome> {
    let full = recall_loss(true, true)?;
    let ablated = recall_loss(false, false)?;
    outcome(
        full < 0.2 && ablated >= 2.5,
        format!("recall loss {full:.4} nats, ablated {ablated:.4} nats"),
        "< 0.2 and >= 2.5",
    )
}

/// Means of consecutive non-overlapping windows; a partial tail is dropped.
pub fn window_means(x: &[f64], window: usize) -> Vec<f64> {
    x.chunks_exact(window)
        .map(|c| c.iter().sum::<f64>() / window as f64)
        .collect()
}

fn desk_training() -> Result<Outcome> {
    let mut cfg = RunConfig {
        model: ModelConfig::toy(2, 128),
        ..Default::default()
    };
    cfg.data.synthetic_tokens = Some(2_000_000);
    cfg.data.holdout_fraction = 0.02;
    cfg.data.crop_len = 1024;
    cfg.data.token_budget = 4096;
    cfg.train.log_every = 0;
    let corpus = Corpus::load(&cfg)?;
    let mut t = Trainer::new(cfg, corpus)?;
    let mut losses = Vec::new();
    while !t.done() {
        losses.push(t.step(None)?.loss);
    }
    let held = t
        .evaluate()?
        .ok_or_else(|| Error::State("empty holdout split".into()))?;
    let uni = t
        .unigram_baseline()
        .ok_or_else(|| Error::State("empty holdout split".into()))?;
    let means = window_means(&losses, 100);
    let monotone = means.windows(2).all(|w| w[1] <= w[0]);
    let shown: Vec<String> = means.iter().map(|m| format!("{m:.4}")).collect();
    outcome(
        held.perplexity < uni.perplexity && monotone,
        format!(
            "holdout ppl {:.3} vs unigram {:.3} after {} steps; 100-step means [{}]",
            held.perplexity,
            uni.perplexity,
            losses.len(),
            shown.join(", ")
        ),
        "ppl below unigram, means non-increasing",
    )
}

fn parameter_count() -> Result<Outcome> {
    let n = ModelConfig::full().count_params();
    let dev = (n as f64 / 309e6 - 1.0).abs();
    outcome(
        dev < 0.05,
        format!("{n} params ({:.2}% from 309M)", 100.0 * dev),
        "within 5%",
    )
}

/// Naive average ranks: 1 + (number below) + (ties - 1) / 2.
fn naive_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&a| {
            let below = x.iter().filter(|&&b| b < a).count() as f64;
            let equal = x.iter().filter(|&&b| b == a).count() as f64;
            1.0 + below + (equal - 1.0) / 2.0
        })
        .collect()
}

fn naive_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..x.len() {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

fn naive_z(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    x.iter()
        .map(|v| if sd > 0.0 { (v - mean) / sd } else { 0.0 })
        .collect()
}

/// Straight-line scorer working from the raw A3M text: coverage filter,
/// pseudocounted base-2 log-odds, per-variant sums, then the z-score mix.
fn straight_line(
    a3m: &str,
    wt: &[u8],
    variants: &[Vec<(usize, u8, u8)>],
    ll: &[f64],
    pc: f64,
    min_cov: f64,
) -> Vec<f64> {
    let mut rows: Vec<Vec<u8>> = Vec::new();
    for line in a3m.lines() {
        if line.starts_with('>') {
            rows.push(Vec::new());
        } else if let Some(r) = rows.last_mut() {
            r.extend(line.bytes().filter(|c| !c.is_ascii_lowercase()));
        }
    }
    let homologs: Vec<&Vec<u8>> = rows[1..]
        .iter()
        .filter(|r| r.iter().filter(|&&c| c != b'-').count() as f64 / wt.len() as f64 > min_cov)
        .collect();
    let letters = b"ACDEFGHIKLMNPQRSTVWY";
    let score = |i: usize, a: u8| {
        let n = homologs.iter().filter(|r| r[i] != b'-').count() as f64;
        let c = homologs
            .iter()
            .filter(|r| r[i] == letters[a as usize])
            .count() as f64;
        ((c + pc) / (n + 20.0 * pc) / 0.05).log2()
    };
    let pssm: Vec<f64> = variants
        .iter()
        .map(|v| v.iter().map(|&(i, w, m)| score(i, m) - score(i, w)).sum())
        .collect();
    let (a, b) = (naive_z(ll), naive_z(&pssm));
    a.iter().zip(&b).map(|(x, y)| 0.5 * x + 0.5 * y).collect()
}

fn scoring_oracle() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    let assay = SyntheticAssay::generate(30, 20, 1.0, &mut rng);
    let mut msa = assay.msa(40, 0.05, &mut rng);
    // two rows that the coverage filter must drop
    for k in 0..2 {
        let mut h = msa.homologs[k].clone();
        h.name = format!("sparse_{k}");
        h.row.iter_mut().skip(10).for_each(|c| *c = None);
        msa.homologs.push(h);
    }
    let letter = |a: u8| crate::data::residue_char(a).expect("residue");
    let mut a3m = format!(">query\n{}\n", crate::data::detokenize(&assay.wt));
    for h in &msa.homologs {
        let row: String = h.row.iter().map(|c| c.map_or('-', letter)).collect();
        a3m.push_str(&format!(">{}\n{row}\n", h.name));
    }
    let parsed = parse_a3m(&a3m)?;

    let model = busy_model(ModelConfig::toy(1, 32), 9, 0.02)?;
    let ll = score_variants(&model, &assay.wt, &assay.variants, 1)?;
    let labels: Vec<String> = (0..ll.len()).map(|i| format!("v{i}")).collect();
    let opts = AugmentOptions::default();
    let scored = augment(&labels, &ll, &assay.variants, Some(&parsed), &opts)?;
    let combined: Vec<f64> = scored.iter().map(|s| s.combined).collect();

    // oracle likelihood deltas straight from the logits
    let logprob = |ids: &[u8]| -> Result<f64> {
        let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let logits = model.forward_ids(&idx)?;
        let v = model.config.vocab_size;
        Ok((1..ids.len())
            .map(|t| {
                let row = &logits.row(t - 1)[..v];
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|x| (x - mx).exp()).sum();
                row[ids[t] as usize] - mx - z.ln()
            })
            .sum())
    };
    let wt_ids = assay.wt.ids().to_vec();
    let base = logprob(&wt_ids)?;
    let mut muts = Vec::new();
    let mut ll_oracle = Vec::new();
    for v in &assay.variants {
        let ms: Vec<(usize, u8, u8)> = v
            .mutations()
            .ok_or_else(|| Error::State("synthetic assay has an indel".into()))?
            .iter()
            .map(|m| (m.pos, m.wt, m.mt))
            .collect();
        let mut ids = wt_ids.clone();
        for &(i, _, m) in &ms {
            ids[i] = m;
        }
        ll_oracle.push(logprob(&ids)? - base);
        muts.push(ms);
    }
    let ll_err = ll
        .iter()
        .zip(&ll_oracle)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let oracle = straight_line(
        &a3m,
        &wt_ids[..assay.wt.residues().len()],
        &muts,
        &ll_oracle,
        opts.pseudocount,
        opts.filter.min_coverage,
    );
    let err = combined
        .iter()
        .zip(&oracle)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    // Spearman on tied data: fitness rounded to one decimal, scores to halves
    let fit: Vec<f64> = assay
        .fitness
        .iter()
        .map(|f| (f * 10.0).round() / 10.0)
        .collect();
    let sc: Vec<f64> = combined.iter().map(|c| (c * 2.0).round() / 2.0).collect();
    let rho = spearman(&sc, &fit)?.ok_or_else(|| Error::State("undefined rho".into()))?;
    let rho_naive = naive_pearson(&naive_ranks(&sc), &naive_ranks(&fit));
    let ranks_equal = crate::scoring::stats::average_ranks(&sc)? == naive_ranks(&sc)
        && crate::scoring::stats::average_ranks(&fit)? == naive_ranks(&fit);
    let ties = sc.len() - {
        let mut u = sc.clone();
        u.sort_by(f64::total_cmp);
        u.dedup();
        u.len()
    };
    outcome(
        err < 1e-12 && ll_err < 1e-12 && ranks_equal && rho == rho_naive,
        format!(
            "combined max diff {err:.3e}, ll max diff {ll_err:.3e}; rho {rho:.12} vs naive {rho_naive:.12} ({ties} tied scores), ranks {}",
            if ranks_equal { "identical" } else { "differ" }
        ),
        "< 1e-12, rho and ranks exact",
    )
}

fn pssm_algebra() -> Result<Outcome> {
    let mut failures = Vec::new();
    if log_odds(0.05) != 0.0 {
        failures.push(format!("log_odds(0.05) = {:e}", log_odds(0.05)));
    }
    let mut f = 0.05 / 16.0;
    while f <= 0.8 {
        let d = log_odds(2.0 * f) - log_odds(f);
        if d != 1.0 {
            failures.push(format!("doubling {f} adds {d:e}"));
        }
        f *= 2.0;
    }
    // the empty substitution set scores 0 against any PSSM
    let wt = "MKTAYIAKQR";
    let a3m = format!(">q\n{wt}\n>h1\nMKSAYLAKQR\n>h2\nMRTAYIAE-R\n");
    let p = build_pssm(&parse_a3m(&a3m)?, 0.1)?;
    let empty = pssm_score(&VariantSpec::Substitution(Vec::new()), &p)?;
    if empty != 0.0 {
        failures.push(format!("empty set scores {empty:e}"));
    }
    // a substitution back to itself cancels exactly
    let k = residue_id('K').expect("K");
    let same = pssm_score(
        &VariantSpec::Substitution(vec![Mutation {
            pos: 1,
            wt: k,
            mt: k,
        }]),
        &p,
    )?;
    if same != 0.0 {
        failures.push(format!("K2K scores {same:e}"));
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            "all identities exact".into()
        } else {
            failures.join("; ")
        },
        "exact",
    )
}

fn lens_contracts() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(111);
    let m = busy_model(ModelConfig::toy(2, 32), 11, 0.02)?;
    let random_seq = |n: usize, rng: &mut ChaCha8Rng| -> Result<TokenSequence> {
        let ids: Vec<u8> = (0..n)
            .map(|_| rng.random_range(0..N_RESIDUES as u8))
            .collect();
        Ok(TokenSequence::from_residue_ids(ids)?.with_eos())
    };

    let mut identical = true;
    let (mut h_min, mut h_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..5 {
        let seq = random_seq(40, &mut rng)?;
        let lens = logit_lens(&m, &seq)?;
        let out = vocab_probs(&m.forward(&seq)?);
        identical &= lens.probs.last() == Some(&out);
        for h in entropy_profile(&m, &seq, EntropyBase::Nats)?.entropies {
            h_min = h_min.min(h);
            h_max = h_max.max(h);
        }
    }
    let entropy_ok = h_min >= 0.0 && h_max <= 21f64.ln();

    let mut flat = m.clone();
    for l in &mut flat.weights.layers {
        l.q = Tensor::zeros(l.q.shape());
    }
    let ins = inspect(&flat, &random_seq(99, &mut rng)?)?;
    let stats = attention_stats(std::slice::from_ref(&ins));
    let oracle = uniform_band_oracle(ins.len());
    let band_err = (0..3)
        .map(|b| (stats.bands[b] - oracle[b]).abs())
        .fold(0.0, f64::max);

    outcome(
        identical && entropy_ok && band_err < 1e-9,
        format!(
            "final lens {}; entropy range [{h_min:.4}, {h_max:.4}]; band error {band_err:.3e}",
            if identical {
                "bit-identical"
            } else {
                "differs"
            }
        ),
        "bit-identical, [0, ln 21], < 1e-9",
    )
}

fn wsd_schedule() -> Result<Outcome> {
    let s = LrSchedule::new(1000, 0, 0.1)?;
    let got = [s.multiplier(500)?, s.multiplier(950)?, s.multiplier(1000)?];
    outcome(
        got == [1.0, 0.5, 0.0],
        format!("{} / {} / {} at 50% / 95% / 100%", got[0], got[1], got[2]),
        "1.0 / 0.5 / 0.0 exact",
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_criteria_pass() {
        for id in [8, 10, 12] {
            let r = run(id).unwrap();
            assert!(r.passed, "{}", r.line());
        }
    }

    #[test]
    fn bad_id_is_a_config_error() {
        assert!(matches!(run(0), Err(Error::Config(_))));
        assert!(matches!(run(13), Err(Error::Config(_))));
    }

    #[test]
    fn window_means_drop_the_tail() {
        assert_eq!(window_means(&[1.0, 3.0, 5.0, 7.0, 9.0], 2), vec![2.0, 6.0]);
    }
}
