//! Position-specific scoring matrices, base-2 log-odds against a uniform
//! background.

use super::msa::Msa;
use super::variant::VariantSpec;
use crate::data::N_RESIDUES;
use crate::error::{Error, Result};

pub const BACKGROUND: f64 = 1.0 / N_RESIDUES as f64;
pub const DEFAULT_PSSM_PSEUDOCOUNT: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct Pssm {
    pub freq: Vec<[f64; N_RESIDUES]>,
    pub scores: Vec<[f64; N_RESIDUES]>,
    pub pseudocount: f64,
    pub n_homologs: usize,
}

pub fn log_odds(f: f64) -> f64 {
    (f / BACKGROUND).log2()
}

impl Pssm {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Column frequencies over the homolog rows (the query is not counted).
/// Gaps do not contribute.
pub fn build_pssm(msa: &Msa, pseudocount: f64) -> Result<Pssm> {
    if msa.homologs.is_empty() {
        return Err(Error::Input(
            "no homologs left after filtering; skip PSSM augmentation".into(),
        ));
    }
    if !(pseudocount > 0.0 && pseudocount.is_finite()) {
        return Err(Error::Config(format!(
            "pseudocount {pseudocount} must be positive"
        )));
    }
    let len = msa.len();
    let mut freq = vec![[0.0; N_RESIDUES]; len];
    let mut scores = vec![[0.0; N_RESIDUES]; len];
    for i in 0..len {
        let mut counts = [0usize; N_RESIDUES];
        let mut n = 0usize;
        for h in &msa.homologs {
            if let Some(a) = h.row[i] {
                counts[a as usize] += 1;
                n += 1;
            }
        }
        let denom = n as f64 + N_RESIDUES as f64 * pseudocount;
        for a in 0..N_RESIDUES {
            let f = (counts[a] as f64 + pseudocount) / denom;
            freq[i][a] = f;
            scores[i][a] = log_odds(f);
        }
    }
    Ok(Pssm {
        freq,
        scores,
        pseudocount,
        n_homologs: msa.homologs.len(),
    })
}

/// Sum of `PSSM[i, mut] − PSSM[i, wt]` over the mutated positions.
pub fn pssm_score(variant: &VariantSpec, pssm: &Pssm) -> Result<f64> {
    let muts = variant
        .mutations()
        .ok_or_else(|| Error::Input("PSSM scores need a substitution variant".into()))?;
    let mut s = 0.0;
    for m in muts {
        let col = pssm.scores.get(m.pos).ok_or_else(|| {
            Error::Range(format!(
                "mutation {m} outside the PSSM's {} positions",
                pssm.len()
            ))
        })?;
        s += col[m.mt as usize] - col[m.wt as usize];
    }
    Ok(s)
}
