//! Statistics that tie predictions to sequence context: hydrophobic
//! neighbourhoods, short motifs and per-residue prediction bias.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::entropy::{entropy, EntropyBase};
use super::inspect::Inspection;
use super::ResidueGroup;
use crate::data::{residue_char, residue_id, EOS, N_RESIDUES};
use crate::error::{Error, Result};
use crate::scoring::spearman;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextWindow {
    /// The 5 residues before the predicted one.
    #[default]
    Preceding,
    /// Two on each side of the predicted residue (itself excluded).
    Symmetric,
}

fn is_hydrophobic(id: u8) -> bool {
    ResidueGroup::of(id) == Some(ResidueGroup::Hydrophobic)
}

/// `(hydrophobic fraction of the window, predicted hydrophobic mass)` for
/// every residue position that has a full window.
pub fn hydrophobic_context_pairs(ins: &Inspection, window: ContextWindow) -> Vec<(f64, f64)> {
    let ids = &ins.ids;
    let n_res = ids.iter().take_while(|&&x| x != EOS).count();
    let probs = ins.final_probs();
    let mut out = Vec::new();
    for t in 1..n_res {
        let ctx: Vec<u8> = match window {
            ContextWindow::Preceding if t >= 5 => ids[t - 5..t].to_vec(),
            ContextWindow::Symmetric if t >= 2 && t + 2 < n_res => {
                vec![ids[t - 2], ids[t - 1], ids[t + 1], ids[t + 2]]
            }
            _ => continue,
        };
        let frac = ctx.iter().filter(|&&x| is_hydrophobic(x)).count() as f64 / ctx.len() as f64;
        let mass: f64 = probs
            .row(t - 1)
            .iter()
            .enumerate()
            .filter(|(a, _)| is_hydrophobic(*a as u8))
            .map(|(_, p)| p)
            .sum();
        out.push((frac, mass));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ContextCorrelation {
    pub rho: Option<f64>,
    pub n: usize,
}

pub fn correlation_of(pairs: &[(f64, f64)]) -> Result<ContextCorrelation> {
    let (x, y): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    let rho = if pairs.len() < 3 {
        None
    } else {
        spearman(&x, &y)?
    };
    Ok(ContextCorrelation {
        rho,
        n: pairs.len(),
    })
}

pub fn hydrophobic_context_correlation(
    inspections: &[Inspection],
    window: ContextWindow,
) -> Result<ContextCorrelation> {
    let pairs: Vec<(f64, f64)> = inspections
        .iter()
        .flat_map(|i| hydrophobic_context_pairs(i, window))
        .collect();
    correlation_of(&pairs)
}

/// A short pattern: fixed residues, `x` wildcards and alternations (`S/T`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Motif {
    pub name: String,
    elems: Vec<Option<Vec<u8>>>,
}

pub const BUILTIN_MOTIFS: [&str; 4] = ["CxxC", "NxS/T", "GxxG", "PxxP"];

impl Motif {
    pub fn parse(pattern: &str) -> Result<Self> {
        let bad = || Error::Input(format!("bad motif {pattern:?}"));
        let chars: Vec<char> = pattern.chars().collect();
        let mut elems = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if c == 'x' || c == 'X' {
                elems.push(None);
                i += 1;
                continue;
            }
            let mut alts = vec![residue_id(c)
                .filter(|_| c.is_ascii_uppercase())
                .ok_or_else(bad)?];
            i += 1;
            while i + 1 < chars.len() && chars[i] == '/' {
                let a = chars[i + 1];
                alts.push(
                    residue_id(a)
                        .filter(|_| a.is_ascii_uppercase())
                        .ok_or_else(bad)?,
                );
                i += 2;
            }
            if i < chars.len() && chars[i] == '/' {
                return Err(bad());
            }
            elems.push(Some(alts));
        }
        if elems.is_empty() {
            return Err(bad());
        }
        Ok(Motif {
            name: pattern.to_string(),
            elems,
        })
    }

    pub fn len(&self) -> usize {
        self.elems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elems.is_empty()
    }

    pub fn matches_at(&self, residues: &[u8], start: usize) -> bool {
        start + self.len() <= residues.len()
            && self.elems.iter().enumerate().all(|(k, e)| match e {
                None => true,
                Some(alts) => alts.contains(&residues[start + k]),
            })
    }

    /// Start positions of every (possibly overlapping) match.
    pub fn find(&self, residues: &[u8]) -> Vec<usize> {
        (0..residues.len())
            .filter(|&s| self.matches_at(residues, s))
            .collect()
    }

    /// Positions covered by at least one match.
    pub fn coverage(&self, residues: &[u8]) -> Vec<bool> {
        let mut cov = vec![false; residues.len()];
        for s in self.find(residues) {
            for c in &mut cov[s..s + self.len()] {
                *c = true;
            }
        }
        cov
    }
}

impl fmt::Display for Motif {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MotifEntropy {
    pub motif: String,
    pub n_matches: usize,
    pub motif_mean: Option<f64>,
    pub background_mean: Option<f64>,
    /// Motif over background mean entropy; `None` without matches.
    pub ratio: Option<f64>,
}

/// Mean entropy of the predictions of residues inside matches of `motif`
/// over that of the other residues. The first residue of each sequence is
/// never predicted and takes no part.
pub fn motif_entropy_ratio(
    inspections: &[Inspection],
    motif: &Motif,
    base: EntropyBase,
) -> MotifEntropy {
    let (mut ms, mut mn, mut bs, mut bn, mut matches) = (0.0, 0usize, 0.0, 0usize, 0usize);
    for ins in inspections {
        let n_res = ins.ids.iter().take_while(|&&x| x != EOS).count();
        let res = &ins.ids[..n_res];
        matches += motif.find(res).len();
        let cov = motif.coverage(res);
        let probs = ins.final_probs();
        for t in 1..n_res {
            let h = entropy(probs.row(t - 1), base);
            if cov[t] {
                ms += h;
                mn += 1;
            } else {
                bs += h;
                bn += 1;
            }
        }
    }
    let motif_mean = (mn > 0).then(|| ms / mn as f64);
    let background_mean = (bn > 0).then(|| bs / bn as f64);
    let ratio = match (motif_mean, background_mean) {
        (Some(a), Some(b)) if matches > 0 && b > 0.0 => Some(a / b),
        _ => None,
    };
    MotifEntropy {
        motif: motif.name.clone(),
        n_matches: matches,
        motif_mean,
        background_mean,
        ratio,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BiasRow {
    pub residue: char,
    pub predicted: f64,
    pub empirical: f64,
    /// `predicted / empirical`; `None` if the residue never occurs.
    pub ratio: Option<f64>,
}

/// Average predicted mass per residue (renormalised over the 20 residues)
/// against the residue frequencies at the same predicted positions.
pub fn prediction_bias(inspections: &[Inspection]) -> Vec<BiasRow> {
    let mut pred = [0.0f64; N_RESIDUES];
    let mut emp = [0.0f64; N_RESIDUES];
    let mut n = 0usize;
    for ins in inspections {
        let probs = ins.final_probs();
        for t in 1..ins.ids.len() {
            let y = ins.ids[t];
            if y == EOS {
                continue;
            }
            let row = &probs.row(t - 1)[..N_RESIDUES];
            let z: f64 = row.iter().sum();
            for (a, p) in row.iter().enumerate() {
                pred[a] += p / z;
            }
            emp[y as usize] += 1.0;
            n += 1;
        }
    }
    let n = n.max(1) as f64;
    (0..N_RESIDUES)
        .map(|a| {
            let predicted = pred[a] / n;
            let empirical = emp[a] / n;
            BiasRow {
                residue: residue_char(a as u8).expect("residue"),
                predicted,
                empirical,
                ratio: (empirical > 0.0).then(|| predicted / empirical),
            }
        })
        .collect()
}
