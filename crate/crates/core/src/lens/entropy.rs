use serde::{Deserialize, Serialize};

use crate::data::VOCAB_SIZE;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntropyBase {
    #[default]
    Nats,
    Bits,
}

impl EntropyBase {
    pub fn max(self) -> f64 {
        match self {
            EntropyBase::Nats => (VOCAB_SIZE as f64).ln(),
            EntropyBase::Bits => (VOCAB_SIZE as f64).log2(),
        }
    }
}

/// Shannon entropy of a distribution over the vocabulary, clamped to
/// `[0, log 21]` against roundoff.
pub fn entropy(p: &[f64], base: EntropyBase) -> f64 {
    let mut h = 0.0;
    for &x in p {
        if x > 0.0 {
            h -= x * x.ln();
        }
    }
    if base == EntropyBase::Bits {
        h /= std::f64::consts::LN_2;
    }
    h.clamp(0.0, base.max())
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    if x.is_empty() {
        return (0.0, 0.0);
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Entropy of each position's next-token distribution, for the positions
/// whose successor is in the sequence.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EntropyProfile {
    pub entropies: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub base: EntropyBase,
}

impl EntropyProfile {
    pub fn from_entropies(entropies: Vec<f64>, base: EntropyBase) -> Self {
        let (mean, std) = mean_std(&entropies);
        EntropyProfile {
            entropies,
            mean,
            std,
            base,
        }
    }

    /// From `[T × 21]` probabilities; the last row predicts past the end and
    /// is skipped.
    pub fn from_probs(probs: &Tensor, base: EntropyBase) -> Self {
        let n = probs.rows().saturating_sub(1);
        Self::from_entropies((0..n).map(|t| entropy(probs.row(t), base)).collect(), base)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PositionalBins {
    /// Mean entropy per relative-position bin, `None` for an empty bin.
    pub mean: Vec<Option<f64>>,
    pub counts: Vec<usize>,
}

/// Position `t` of a length-`T` profile goes to bin `⌊n·t/T⌋`.
pub fn positional_entropy_bins(
    profiles: &[EntropyProfile],
    n_bins: usize,
) -> Result<PositionalBins> {
    if n_bins == 0 {
        return Err(Error::Config("n_bins must be at least 1".into()));
    }
    let mut sum = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    for (k, p) in profiles.iter().enumerate() {
        let len = p.entropies.len();
        if len < n_bins {
            return Err(Error::Input(format!(
                "profile {k} has {len} positions, fewer than {n_bins} bins"
            )));
        }
        for (t, &h) in p.entropies.iter().enumerate() {
            let b = n_bins * t / len;
            sum[b] += h;
            counts[b] += 1;
        }
    }
    let mean = sum
        .iter()
        .zip(&counts)
        .map(|(s, &c)| (c > 0).then(|| s / c as f64))
        .collect();
    Ok(PositionalBins { mean, counts })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RetrievalAdvice {
    pub std: f64,
    pub threshold: f64,
    /// Retrieval is suggested when the entropy spread is below the threshold.
    pub retrieve: bool,
}

pub fn retrieval_heuristic(profile: &EntropyProfile, threshold: f64) -> RetrievalAdvice {
    RetrievalAdvice {
        std: profile.std,
        threshold,
        retrieve: profile.std < threshold,
    }
}

/// Median of the entropy spreads over a corpus, the default threshold.
pub fn median_threshold(profiles: &[EntropyProfile]) -> Option<f64> {
    let mut s: Vec<f64> = profiles.iter().map(|p| p.std).collect();
    if s.is_empty() {
        return None;
    }
    s.sort_by(f64::total_cmp);
    let n = s.len();
    Some(if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    })
}
