//! Variant-effect scoring: log-likelihood deltas, PSSM augmentation and
//! rank-correlation evaluation.

pub mod assay;
pub mod msa;
pub mod pssm;
pub mod stats;
pub mod variant;

use serde::{Deserialize, Serialize};

pub use assay::{
    read_assay, AssayRecord, AssaySummary, AssayTable, RowError, ScoredVariant, SyntheticAssay,
};
pub use msa::{filter_homologs, parse_a3m, FilterOptions, IdentityMode, Msa};
pub use pssm::{build_pssm, log_odds, pssm_score, Pssm, DEFAULT_PSSM_PSEUDOCOUNT};
pub use stats::{average_ranks, combine_scores, pearson, spearman, zscores};
pub use variant::{Mutation, VariantSpec};

use crate::data::TokenSequence;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Scalar;

/// `log p(mutant) − log p(wild type)`, one forward pass each.
pub fn score_substitution<S: Scalar>(
    model: &Model<S>,
    wt: &TokenSequence,
    variant: &VariantSpec,
) -> Result<f64> {
    if variant.mutations().is_none() {
        return Err(Error::Input("expected a substitution variant".into()));
    }
    let mutant = variant.apply(wt)?;
    Ok(model.sequence_logprob(&mutant)? - model.sequence_logprob(&wt.clone().with_eos())?)
}

/// `log p(variant) − log p(wild type)` for arbitrary length changes.
pub fn score_indel<S: Scalar>(
    model: &Model<S>,
    wt: &TokenSequence,
    variant: &TokenSequence,
) -> Result<f64> {
    let v = variant.clone().with_eos();
    Ok(model.sequence_logprob(&v)? - model.sequence_logprob(&wt.clone().with_eos())?)
}

/// Likelihood deltas for many variants of one wild type, computing the
/// wild-type term once. Work is spread over `threads` scoped threads.
pub fn score_variants<S: Scalar>(
    model: &Model<S>,
    wt: &TokenSequence,
    variants: &[VariantSpec],
    threads: usize,
) -> Result<Vec<f64>> {
    let seqs: Vec<TokenSequence> = variants
        .iter()
        .map(|v| v.apply(wt))
        .collect::<Result<_>>()?;
    let base = model.sequence_logprob(&wt.clone().with_eos())?;
    crate::par::map_ordered(&seqs, threads, |q| Ok(model.sequence_logprob(q)? - base))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentOptions {
    pub filter: FilterOptions,
    pub pseudocount: f64,
}

impl Default for AugmentOptions {
    fn default() -> Self {
        AugmentOptions {
            filter: FilterOptions::default(),
            pseudocount: DEFAULT_PSSM_PSEUDOCOUNT,
        }
    }
}

/// PSSM scores for every variant, or `None` when augmentation does not
/// apply (no alignment, no homologs left, or any indel in the assay).
pub fn pssm_scores(
    variants: &[VariantSpec],
    msa: Option<&Msa>,
    opts: &AugmentOptions,
) -> Result<Option<(Vec<f64>, usize)>> {
    let Some(msa) = msa else { return Ok(None) };
    if variants.iter().any(|v| v.mutations().is_none()) {
        return Ok(None);
    }
    let kept = filter_homologs(msa, &opts.filter)?;
    if kept.homologs.is_empty() {
        return Ok(None);
    }
    let p = build_pssm(&kept, opts.pseudocount)?;
    let s = variants
        .iter()
        .map(|v| pssm_score(v, &p))
        .collect::<Result<Vec<f64>>>()?;
    Ok(Some((s, kept.homologs.len())))
}

/// Combine likelihood deltas with PSSM scores. Without a PSSM the second
/// term is the zero vector.
pub fn augment(
    labels: &[String],
    ll: &[f64],
    variants: &[VariantSpec],
    msa: Option<&Msa>,
    opts: &AugmentOptions,
) -> Result<Vec<ScoredVariant>> {
    if labels.len() != ll.len() || variants.len() != ll.len() {
        return Err(Error::Input(
            "labels, scores and variants differ in length".into(),
        ));
    }
    let pssm = pssm_scores(variants, msa, opts)?.map(|(s, _)| s);
    let zeros = vec![0.0; ll.len()];
    let combined = combine_scores(ll, pssm.as_deref().unwrap_or(&zeros))?;
    Ok((0..ll.len())
        .map(|i| ScoredVariant {
            label: labels[i].clone(),
            ll: ll[i],
            pssm: pssm.as_ref().map(|p| p[i]),
            combined: combined[i],
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthRow {
    pub depth: usize,
    pub rho: Option<f64>,
    pub n_variants: usize,
    pub n_homologs: usize,
    /// Fewer homologs than `depth` passed the coverage filter.
    pub skipped: bool,
}

/// Spearman ρ of the combined score at each homolog depth. Depth 0 is the
/// likelihood score alone.
pub fn depth_sweep(
    ll: &[f64],
    variants: &[VariantSpec],
    fitness: &[f64],
    msa: &Msa,
    depths: &[usize],
    opts: &AugmentOptions,
) -> Result<Vec<DepthRow>> {
    if depths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Input("depths must be strictly ascending".into()));
    }
    if fitness.len() != ll.len() {
        return Err(Error::Input("fitness and scores differ in length".into()));
    }
    let available = filter_homologs(
        msa,
        &FilterOptions {
            top_n: usize::MAX,
            ..opts.filter
        },
    )?
    .homologs
    .len();
    let mut rows = Vec::with_capacity(depths.len());
    for &d in depths {
        let mut row = DepthRow {
            depth: d,
            rho: None,
            n_variants: ll.len(),
            n_homologs: d.min(available),
            skipped: d > available,
        };
        if d == 0 {
            row.rho = spearman(ll, fitness)?;
        } else if !row.skipped {
            let o = AugmentOptions {
                filter: FilterOptions {
                    top_n: d,
                    ..opts.filter
                },
                ..*opts
            };
            let pssm = pssm_scores(variants, Some(msa), &o)?
                .map(|(s, _)| s)
                .unwrap_or_else(|| vec![0.0; ll.len()]);
            row.rho = spearman(&combine_scores(ll, &pssm)?, fitness)?;
        }
        rows.push(row);
    }
    Ok(rows)
}

/// [`depth_sweep`] with likelihood deltas from `model`.
pub fn homolog_depth_sweep<S: Scalar>(
    model: &Model<S>,
    wt: &TokenSequence,
    assay: &[AssayRecord],
    msa: &Msa,
    depths: &[usize],
    opts: &AugmentOptions,
    threads: usize,
) -> Result<Vec<DepthRow>> {
    let variants: Vec<VariantSpec> = assay.iter().map(|r| r.variant.clone()).collect();
    let fitness: Vec<f64> = assay
        .iter()
        .map(|r| {
            r.fitness
                .ok_or_else(|| Error::Input(format!("variant {} has no fitness", r.label)))
        })
        .collect::<Result<_>>()?;
    let ll = score_variants(model, wt, &variants, threads)?;
    depth_sweep(&ll, &variants, &fitness, msa, depths, opts)
}
