//! Interpretability: logit lens across depth, inverse lens, entropy
//! profiles, attention statistics and context analyses.

pub mod attention;
pub mod context;
pub mod entropy;
pub mod inspect;

use serde::Serialize;

pub use attention::{attention_stats, band_of, uniform_band_oracle, AttentionStats, BAND_LABELS};
pub use context::{
    correlation_of, hydrophobic_context_correlation, hydrophobic_context_pairs,
    motif_entropy_ratio, prediction_bias, BiasRow, ContextCorrelation, ContextWindow, Motif,
    MotifEntropy, BUILTIN_MOTIFS,
};
pub use entropy::{
    entropy, median_threshold, positional_entropy_bins, retrieval_heuristic, EntropyBase,
    EntropyProfile, PositionalBins, RetrievalAdvice,
};
pub use inspect::{argmax, inspect, vocab_probs, Inspection};

use crate::data::{residue_id, TokenSequence, VOCAB_SIZE};
use crate::error::Result;
use crate::model::Model;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ResidueGroup {
    Hydrophobic = 0,
    Charged = 1,
    Polar = 2,
    Special = 3,
}

impl ResidueGroup {
    pub const ALL: [ResidueGroup; 4] = [
        ResidueGroup::Hydrophobic,
        ResidueGroup::Charged,
        ResidueGroup::Polar,
        ResidueGroup::Special,
    ];

    pub fn letters(self) -> &'static str {
        match self {
            ResidueGroup::Hydrophobic => "LAVIMFW",
            ResidueGroup::Charged => "DEKR",
            ResidueGroup::Polar => "STNQYH",
            ResidueGroup::Special => "GPC",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ResidueGroup::Hydrophobic => "hydrophobic",
            ResidueGroup::Charged => "charged",
            ResidueGroup::Polar => "polar",
            ResidueGroup::Special => "special",
        }
    }

    /// Group of a residue id; EOS has none.
    pub fn of(id: u8) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|g| g.letters().chars().any(|c| residue_id(c) == Some(id)))
    }
}

/// Per-layer next-token distributions and top-1 accuracy.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerPrediction {
    /// `[T × 21]` per layer, embedding stream first.
    pub probs: Vec<Tensor>,
    /// Top-1 accuracy against the next token; `None` for a one-token input.
    pub accuracy: Vec<Option<f64>>,
}

/// `(hits, predictions)` per layer.
pub fn layer_hits(ins: &Inspection) -> Vec<(usize, usize)> {
    let n = ins.len().saturating_sub(1);
    ins.layer_probs
        .iter()
        .map(|p| {
            let hits = (0..n)
                .filter(|&t| argmax(p.row(t)) == ins.ids[t + 1] as usize)
                .count();
            (hits, n)
        })
        .collect()
}

pub fn logit_lens<S: Scalar>(model: &Model<S>, seq: &TokenSequence) -> Result<LayerPrediction> {
    let ins = inspect(model, seq)?;
    let accuracy = layer_hits(&ins)
        .into_iter()
        .map(|(h, n)| (n > 0).then(|| h as f64 / n as f64))
        .collect();
    Ok(LayerPrediction {
        probs: ins.layer_probs,
        accuracy,
    })
}

/// Pooled top-1 accuracy per layer over a corpus.
pub fn layer_accuracy(inspections: &[Inspection]) -> Vec<Option<f64>> {
    let Some(first) = inspections.first() else {
        return Vec::new();
    };
    let mut tot = vec![(0usize, 0usize); first.layer_probs.len()];
    for ins in inspections {
        for (acc, (h, n)) in tot.iter_mut().zip(layer_hits(ins)) {
            acc.0 += h;
            acc.1 += n;
        }
    }
    tot.into_iter()
        .map(|(h, n)| (n > 0).then(|| h as f64 / n as f64))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct InverseLens {
    pub probs: Tensor,
    /// Most probable token under the negated stream, per position.
    pub suppressed: Vec<u8>,
}

pub fn inverse_of(ins: &Inspection) -> InverseLens {
    let p = &ins.inverse_probs;
    InverseLens {
        probs: p.clone(),
        suppressed: (0..p.rows()).map(|t| argmax(p.row(t)) as u8).collect(),
    }
}

pub fn inverse_logit_lens<S: Scalar>(model: &Model<S>, seq: &TokenSequence) -> Result<InverseLens> {
    Ok(inverse_of(&inspect(model, seq)?))
}

/// How often each token is the suppressed one, over every position.
pub fn suppression_frequencies(inspections: &[Inspection]) -> [f64; VOCAB_SIZE] {
    let mut counts = [0usize; VOCAB_SIZE];
    let mut n = 0;
    for ins in inspections {
        for s in inverse_of(ins).suppressed {
            counts[s as usize] += 1;
            n += 1;
        }
    }
    counts.map(|c| c as f64 / n.max(1) as f64)
}

pub fn entropy_profile<S: Scalar>(
    model: &Model<S>,
    seq: &TokenSequence,
    base: EntropyBase,
) -> Result<EntropyProfile> {
    Ok(EntropyProfile::from_probs(
        inspect(model, seq)?.final_probs(),
        base,
    ))
}

pub fn attention_distance_stats<S: Scalar>(
    model: &Model<S>,
    seqs: &[TokenSequence],
) -> Result<AttentionStats> {
    let ins = seqs
        .iter()
        .map(|s| inspect(model, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(attention_stats(&ins))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_partition_the_residues() {
        let mut seen = 0;
        for id in 0..20u8 {
            assert!(ResidueGroup::of(id).is_some(), "{id}");
            seen += 1;
        }
        assert_eq!(seen, 20);
        let total: usize = ResidueGroup::ALL.iter().map(|g| g.letters().len()).sum();
        assert_eq!(total, 20);
        assert_eq!(ResidueGroup::of(crate::data::EOS), None);
    }
}
