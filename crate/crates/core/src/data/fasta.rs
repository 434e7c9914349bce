use std::fmt::Write as _;

use super::tokenizer::residue_id;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FastaRecord {
    pub id: String,
    pub sequence: String,
}

/// A record dropped because it contains letters outside the 20-letter alphabet.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RejectedRecord {
    pub id: String,
    pub line: usize,
    pub reason: String,
}

pub type RecordResult = std::result::Result<FastaRecord, RejectedRecord>;

/// Parse FASTA text into records in file order. Lowercase is uppercased and
/// whitespace inside sequence lines is ignored.
pub fn parse_fasta(text: &str) -> Result<Vec<RecordResult>> {
    let mut out = Vec::new();
    let mut current: Option<(String, usize, String)> = None;

    let finish = |(id, line, seq): (String, usize, String), out: &mut Vec<RecordResult>| {
        let bad: Vec<char> = seq.chars().filter(|&c| residue_id(c).is_none()).collect();
        if bad.is_empty() {
            out.push(Ok(FastaRecord { id, sequence: seq }));
        } else {
            let mut uniq = bad;
            uniq.sort_unstable();
            uniq.dedup();
            out.push(Err(RejectedRecord {
                id,
                line,
                reason: format!("unsupported residues {uniq:?}"),
            }));
        }
    };

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('>') {
            if let Some(rec) = current.take() {
                finish(rec, &mut out);
            }
            let id = header.split_whitespace().next().unwrap_or("").to_string();
            current = Some((id, lineno + 1, String::new()));
        } else {
            match current.as_mut() {
                Some((_, _, seq)) => {
                    seq.extend(
                        line.chars()
                            .filter(|c| !c.is_whitespace())
                            .map(|c| c.to_ascii_uppercase()),
                    );
                }
                None => {
                    return Err(Error::Format(format!(
                        "line {}: sequence data before any '>' header",
                        lineno + 1
                    )))
                }
            }
        }
    }
    if let Some(rec) = current.take() {
        finish(rec, &mut out);
    }
    Ok(out)
}

/// Split parse results into accepted and rejected records.
pub fn partition_records(results: Vec<RecordResult>) -> (Vec<FastaRecord>, Vec<RejectedRecord>) {
    let mut ok = Vec::new();
    let mut bad = Vec::new();
    for r in results {
        match r {
            Ok(x) => ok.push(x),
            Err(e) => bad.push(e),
        }
    }
    (ok, bad)
}

pub fn write_fasta(records: &[FastaRecord], line_width: usize) -> String {
    let mut s = String::new();
    for r in records {
        let _ = writeln!(s, ">{}", r.id);
        let bytes = r.sequence.as_bytes();
        for chunk in bytes.chunks(line_width.max(1)) {
            s.push_str(std::str::from_utf8(chunk).expect("ascii"));
            s.push('\n');
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ok(id: &str, s: &str) -> RecordResult {
        Ok(FastaRecord {
            id: id.into(),
            sequence: s.into(),
        })
    }

    #[test]
    fn minimal_record() {
        assert_eq!(parse_fasta(">a\nACD\n").unwrap(), vec![ok("a", "ACD")]);
    }

    #[test]
    fn multi_line_records() {
        let r = parse_fasta(">a\nAC\nD\n>b\nWY\n").unwrap();
        assert_eq!(r, vec![ok("a", "ACD"), ok("b", "WY")]);
    }

    #[test]
    fn lowercase_and_header_description() {
        let r = parse_fasta(">sp|P1 some protein\nacd \n  ef\n").unwrap();
        assert_eq!(r, vec![ok("sp|P1", "ACDEF")]);
    }

    #[test]
    fn nonstandard_residue_rejected_per_record() {
        let r = parse_fasta(">a\nACX\n>b\nAC\n").unwrap();
        assert!(r[0].is_err());
        assert_eq!(r[1], ok("b", "AC"));
        let e = r[0].clone().unwrap_err();
        assert_eq!(e.id, "a");
        assert!(e.reason.contains('X'));
    }

    #[test]
    fn empty_and_headerless() {
        assert!(parse_fasta("").unwrap().is_empty());
        assert!(matches!(parse_fasta("ACD\n>a\nA"), Err(Error::Format(_))));
    }

    #[test]
    fn write_then_parse() {
        let recs = vec![
            FastaRecord {
                id: "x".into(),
                sequence: "ACDEFGHIKL".into(),
            },
            FastaRecord {
                id: "y".into(),
                sequence: "MN".into(),
            },
        ];
        let text = write_fasta(&recs, 4);
        let (back, bad) = partition_records(parse_fasta(&text).unwrap());
        assert!(bad.is_empty());
        assert_eq!(back, recs);
    }
}
