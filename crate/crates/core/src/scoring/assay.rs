//! Assay tables: reading variant CSVs, writing score tables, and a synthetic
//! assay with known ground truth.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::msa::{Homolog, Msa};
use super::variant::{Mutation, VariantSpec};
use crate::data::{tokenize, TokenSequence, N_RESIDUES};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AssayRecord {
    /// 1-based line in the source file.
    pub line: usize,
    pub label: String,
    pub variant: VariantSpec,
    pub fitness: Option<f64>,
}

fn column(headers: &csv::StringRecord, names: &[&str]) -> Option<usize> {
    headers.iter().position(|h| names.contains(&h.trim()))
}

/// A data row that could not be used, by 1-based file line.
#[derive(Clone, Debug, PartialEq)]
pub struct RowError {
    pub line: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AssayTable {
    pub records: Vec<AssayRecord>,
    pub rejected: Vec<RowError>,
}

/// Read an assay CSV. Substitutions come from a `mutant` (or `variant`)
/// column in `A123C:D45E` form; rows with that field empty fall back to a
/// `mutated_sequence` (or `sequence`) column and are scored as indels.
/// Fitness is read from `DMS_score` or `fitness` when present.
///
/// A bad row is recorded in `rejected` and skipped; only a missing variant
/// column or broken CSV fails the whole read.
pub fn read_assay(r: impl Read) -> Result<AssayTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(r);
    let headers = rdr.headers()?.clone();
    let mcol = column(&headers, &["mutant", "variant"]);
    let scol = column(&headers, &["mutated_sequence", "sequence"]);
    let fcol = column(&headers, &["DMS_score", "fitness"]);
    if mcol.is_none() && scol.is_none() {
        return Err(Error::Input(
            "assay CSV needs a mutant or mutated_sequence column".into(),
        ));
    }
    let mut out = AssayTable::default();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        match parse_row(&rec, line, mcol, scol, fcol) {
            Ok(r) => out.records.push(r),
            Err(reason) => out.rejected.push(RowError { line, reason }),
        }
    }
    Ok(out)
}

fn parse_row(
    rec: &csv::StringRecord,
    line: usize,
    mcol: Option<usize>,
    scol: Option<usize>,
    fcol: Option<usize>,
) -> std::result::Result<AssayRecord, String> {
    let field = |c: Option<usize>| c.and_then(|i| rec.get(i)).filter(|s| !s.is_empty());
    let (label, variant) = match (field(mcol), field(scol)) {
        (Some(m), _) => (m.to_string(), VariantSpec::parse_substitutions(m)),
        (None, Some(s)) => (s.to_string(), tokenize(s).map(VariantSpec::Indel)),
        (None, None) => return Err("no variant given".into()),
    };
    let variant = variant.map_err(|e| e.to_string())?;
    let fitness = match field(fcol) {
        Some(f) => Some(f.parse::<f64>().map_err(|_| format!("bad fitness {f:?}"))?),
        None => None,
    };
    Ok(AssayRecord {
        line,
        label,
        variant,
        fitness,
    })
}

/// Ten significant digits.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.9e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_default()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredVariant {
    pub label: String,
    pub ll: f64,
    pub pssm: Option<f64>,
    pub combined: f64,
}

pub fn write_scores(rows: &[ScoredVariant], w: impl Write) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["variant", "ll_score", "pssm_score", "combined"])?;
    for r in rows {
        wtr.write_record([
            r.label.clone(),
            fmt_num(r.ll),
            fmt_opt(r.pssm),
            fmt_num(r.combined),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<scores>", e))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssaySummary {
    pub assay: String,
    pub n: usize,
    pub rho_ll: Option<f64>,
    pub rho_combined: Option<f64>,
    pub depth: usize,
}

pub fn write_summary(rows: &[AssaySummary], w: impl Write) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["assay", "n", "rho_ll", "rho_combined", "depth"])?;
    for r in rows {
        wtr.write_record([
            r.assay.clone(),
            r.n.to_string(),
            fmt_opt(r.rho_ll),
            fmt_opt(r.rho_combined),
            r.depth.to_string(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<summary>", e))?;
    Ok(())
}

/// An assay whose fitness is the true log frequency ratio of a column
/// profile, with homologs sampled from that profile.
#[derive(Clone, Debug)]
pub struct SyntheticAssay {
    pub profile: Vec<[f64; N_RESIDUES]>,
    pub wt: TokenSequence,
    pub variants: Vec<VariantSpec>,
    pub fitness: Vec<f64>,
}

impl SyntheticAssay {
    /// `sharpness` scales the log-normal column weights; larger is more
    /// conserved.
    pub fn generate(len: usize, n_variants: usize, sharpness: f64, rng: &mut impl Rng) -> Self {
        let profile: Vec<[f64; N_RESIDUES]> = (0..len)
            .map(|_| {
                let mut col = [0.0; N_RESIDUES];
                for c in col.iter_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    *c = (sharpness * z).exp();
                }
                let s: f64 = col.iter().sum();
                col.map(|c| c / s)
            })
            .collect();
        let wt_ids: Vec<u8> = profile
            .iter()
            .map(|col| {
                (0..N_RESIDUES)
                    .max_by(|&a, &b| col[a].total_cmp(&col[b]))
                    .unwrap() as u8
            })
            .collect();
        let wt = TokenSequence::from_residue_ids(wt_ids.clone())
            .expect("residue ids")
            .with_eos();
        let mut variants = Vec::with_capacity(n_variants);
        let mut fitness = Vec::with_capacity(n_variants);
        let mut seen = std::collections::HashSet::new();
        while variants.len() < n_variants.min(len * (N_RESIDUES - 1)) {
            let pos = rng.random_range(0..len);
            let mt = rng.random_range(0..N_RESIDUES as u8);
            if mt == wt_ids[pos] || !seen.insert((pos, mt)) {
                continue;
            }
            let m = Mutation {
                pos,
                wt: wt_ids[pos],
                mt,
            };
            fitness.push((profile[pos][mt as usize] / profile[pos][m.wt as usize]).ln());
            variants.push(VariantSpec::Substitution(vec![m]));
        }
        SyntheticAssay {
            profile,
            wt,
            variants,
            fitness,
        }
    }

    /// `depth` homologs drawn column-wise from the profile, each column a
    /// gap with probability `gap`.
    pub fn msa(&self, depth: usize, gap: f64, rng: &mut impl Rng) -> Msa {
        let homologs = (0..depth)
            .map(|k| Homolog {
                name: format!("synthetic_{k}"),
                row: self
                    .profile
                    .iter()
                    .map(|col| {
                        if rng.random::<f64>() < gap {
                            return None;
                        }
                        let mut u: f64 = rng.random();
                        for (a, &p) in col.iter().enumerate() {
                            u -= p;
                            if u < 0.0 {
                                return Some(a as u8);
                            }
                        }
                        Some(N_RESIDUES as u8 - 1)
                    })
                    .collect(),
            })
            .collect();
        Msa {
            query_name: "synthetic".into(),
            query: self.wt.residues().to_vec(),
            homologs,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reads_substitution_and_indel_rows() {
        let text = "mutant,mutated_sequence,DMS_score\nA1C,CCD,0.5\n,ACDE,-1.25\nA1C:C2D,,\n";
        let t = read_assay(text.as_bytes()).unwrap();
        assert!(t.rejected.is_empty());
        let rows = t.records;
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].fitness, Some(0.5));
        assert!(matches!(rows[1].variant, VariantSpec::Indel(_)));
        assert_eq!(rows[2].fitness, None);
        assert!(read_assay("x,y\n1,2\n".as_bytes()).is_err());
        let t = read_assay("mutant,DMS_score\nA1C,oops\nA1C,1\nZ9,2\n".as_bytes()).unwrap();
        assert_eq!(t.records.len(), 1);
        let lines: Vec<usize> = t.rejected.iter().map(|r| r.line).collect();
        assert_eq!(lines, [2, 4]);
    }

    #[test]
    fn score_table_has_ten_significant_digits() {
        let rows = vec![ScoredVariant {
            label: "A1C".into(),
            ll: -1.0 / 3.0,
            pssm: None,
            combined: 2.0,
        }];
        let mut buf = Vec::new();
        write_scores(&rows, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(
            s,
            "variant,ll_score,pssm_score,combined\nA1C,-3.333333333e-1,,2.000000000e0\n"
        );
    }

    #[test]
    fn synthetic_assay_is_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = SyntheticAssay::generate(30, 40, 1.5, &mut rng);
        assert_eq!(a.variants.len(), 40);
        for v in &a.variants {
            v.validate(&a.wt).unwrap();
        }
        // wild type is the column mode, so every substitution is deleterious
        assert!(a.fitness.iter().all(|&f| f <= 0.0));
        let msa = a.msa(5, 0.1, &mut rng);
        assert_eq!(msa.homologs[0].row.len(), 30);
    }
}
