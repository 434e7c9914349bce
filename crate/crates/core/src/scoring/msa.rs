//! A3M ingestion and homolog filtering.

use serde::{Deserialize, Serialize};

use crate::data::residue_id;
use crate::error::{Error, Result};

/// Residue id per query column, `None` for a gap. Letters outside the 20
/// standard residues (X, B, Z, ...) are read as gaps.
pub type AlignedRow = Vec<Option<u8>>;

#[derive(Clone, Debug, PartialEq)]
pub struct Homolog {
    pub name: String,
    pub row: AlignedRow,
}

impl Homolog {
    pub fn non_gap(&self) -> usize {
        self.row.iter().filter(|r| r.is_some()).count()
    }

    pub fn coverage(&self) -> f64 {
        self.non_gap() as f64 / self.row.len().max(1) as f64
    }

    fn matches(&self, query: &[u8]) -> usize {
        self.row
            .iter()
            .zip(query)
            .filter(|(r, q)| **r == Some(**q))
            .count()
    }

    pub fn identity(&self, query: &[u8], mode: IdentityMode) -> f64 {
        let denom = match mode {
            IdentityMode::QueryLength => query.len(),
            IdentityMode::AlignedColumns => self.non_gap(),
        };
        if denom == 0 {
            0.0
        } else {
            self.matches(query) as f64 / denom as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Msa {
    pub query_name: String,
    /// Query residue ids.
    pub query: Vec<u8>,
    pub homologs: Vec<Homolog>,
}

impl Msa {
    pub fn len(&self) -> usize {
        self.query.len()
    }

    pub fn is_empty(&self) -> bool {
        self.query.is_empty()
    }

    pub fn depth(&self) -> usize {
        self.homologs.len()
    }
}

/// Match columns of an A3M row: uppercase letters and `-`. Lowercase letters
/// (insertions), `.`, `*` and whitespace are dropped.
fn normalise(seq: &str) -> Result<AlignedRow> {
    let mut out = Vec::with_capacity(seq.len());
    for c in seq.chars() {
        if c == '-' {
            out.push(None);
        } else if c.is_ascii_uppercase() {
            out.push(residue_id(c));
        } else if !(c.is_ascii_lowercase() || c == '.' || c == '*' || c.is_whitespace()) {
            return Err(Error::Format(format!(
                "unexpected character {c:?} in alignment"
            )));
        }
    }
    Ok(out)
}

pub fn parse_a3m(text: &str) -> Result<Msa> {
    let mut records: Vec<(String, String)> = Vec::new();
    for line in text.lines() {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('>') {
            records.push((name.trim().to_string(), String::new()));
        } else if let Some((_, seq)) = records.last_mut() {
            seq.push_str(line.trim());
        } else {
            return Err(Error::Format("A3M data before the first '>' header".into()));
        }
    }
    let mut it = records.into_iter();
    let (query_name, qseq) = it
        .next()
        .ok_or_else(|| Error::Format("A3M has no records".into()))?;
    let qrow = normalise(&qseq)?;
    if qrow.is_empty() {
        return Err(Error::Format("A3M query is empty".into()));
    }
    let query: Vec<u8> = qrow
        .iter()
        .enumerate()
        .map(|(i, r)| {
            r.ok_or_else(|| {
                Error::Format(format!(
                    "query has a gap or non-standard residue at {}",
                    i + 1
                ))
            })
        })
        .collect::<Result<_>>()?;
    let mut homologs = Vec::new();
    for (k, (name, seq)) in it.enumerate() {
        let row =
            normalise(&seq).map_err(|e| Error::Format(format!("row {} ({name}): {e}", k + 1)))?;
        if row.len() != query.len() {
            return Err(Error::Format(format!(
                "row {} ({name}) has {} match columns, query has {}",
                k + 1,
                row.len(),
                query.len()
            )));
        }
        homologs.push(Homolog { name, row });
    }
    Ok(Msa {
        query_name,
        query,
        homologs,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IdentityMode {
    /// Matches over the full query length.
    #[default]
    QueryLength,
    /// Matches over the homolog's non-gap columns.
    AlignedColumns,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterOptions {
    /// Rows need coverage strictly above this.
    pub min_coverage: f64,
    pub top_n: usize,
    pub identity: IdentityMode,
}

impl Default for FilterOptions {
    fn default() -> Self {
        FilterOptions {
            min_coverage: 0.5,
            top_n: usize::MAX,
            identity: IdentityMode::QueryLength,
        }
    }
}

/// Drop low-coverage rows, then keep the `top_n` most identical (stable).
pub fn filter_homologs(msa: &Msa, opts: &FilterOptions) -> Result<Msa> {
    if opts.top_n == 0 {
        return Err(Error::Config("top_n must be at least 1".into()));
    }
    let mut kept: Vec<(f64, &Homolog)> = msa
        .homologs
        .iter()
        .filter(|h| h.coverage() > opts.min_coverage)
        .map(|h| (h.identity(&msa.query, opts.identity), h))
        .collect();
    kept.sort_by(|a, b| b.0.total_cmp(&a.0));
    kept.truncate(opts.top_n);
    Ok(Msa {
        query_name: msa.query_name.clone(),
        query: msa.query.clone(),
        homologs: kept.into_iter().map(|(_, h)| h.clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn letters(row: &AlignedRow) -> String {
        row.iter()
            .map(|r| r.map_or('-', |id| crate::data::residue_char(id).unwrap()))
            .collect()
    }

    #[test]
    fn a3m_columns() {
        let m = parse_a3m(">q\nACD\n>h1\nA-D\n>h2\nAcCD\n").unwrap();
        assert_eq!(m.depth(), 2);
        assert_eq!(letters(&m.homologs[0].row), "A-D");
        assert_eq!(letters(&m.homologs[1].row), "ACD");
        assert_eq!(parse_a3m(">only\nMKV\n").unwrap().depth(), 0);
    }

    #[test]
    fn wrong_width_names_the_row() {
        let err = parse_a3m(">q\nACD\n>ok\nACD\n>short\nAC\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("short"), "{err}");
        assert!(parse_a3m("ACD\n").is_err());
        assert!(parse_a3m("").is_err());
    }

    #[test]
    fn multi_line_records_and_comments() {
        let m = parse_a3m("#12\t1\n>q desc\nAC\nDE\n>h\nA-\nd-E\n").unwrap();
        assert_eq!(m.query.len(), 4);
        assert_eq!(letters(&m.homologs[0].row), "A--E");
    }

    #[test]
    fn coverage_is_strict_and_identity_sorts() {
        let q = ">q\nAAAAAAAAAA\n";
        let half = ">half\nAAAAA-----\n";
        let m = parse_a3m(&format!("{q}{half}>same\nAAAAAAAAAA\n")).unwrap();
        assert_eq!(m.homologs[0].coverage(), 0.5);
        let f = filter_homologs(&m, &FilterOptions::default()).unwrap();
        assert_eq!(f.depth(), 1);
        assert_eq!(f.homologs[0].name, "same");

        let m = parse_a3m(
            ">q\nAAAAAAAAAA\n>h5\nAAAAACCCCC\n>h9\nAAAAAAAAAC\n>h7\nAAAAAAACCC\n>h9b\nCAAAAAAAAA\n",
        )
        .unwrap();
        let f = filter_homologs(
            &m,
            &FilterOptions {
                top_n: 2,
                ..Default::default()
            },
        )
        .unwrap();
        let names: Vec<_> = f.homologs.iter().map(|h| h.name.as_str()).collect();
        assert_eq!(names, ["h9", "h9b"]);
    }

    #[test]
    fn identity_modes() {
        let m = parse_a3m(">q\nACDEFGHIKL\n>h\nACDEFGH---\n").unwrap();
        let h = &m.homologs[0];
        assert_eq!(h.identity(&m.query, IdentityMode::QueryLength), 0.7);
        assert_eq!(h.identity(&m.query, IdentityMode::AlignedColumns), 1.0);
    }
}
