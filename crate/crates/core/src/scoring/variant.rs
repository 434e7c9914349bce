use std::fmt;

use crate::data::{residue_char, residue_id, TokenSequence};
use crate::error::{Error, Result};

/// One substitution. `pos` is 0-based; the text form is 1-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Mutation {
    pub pos: usize,
    pub wt: u8,
    pub mt: u8,
}

impl fmt::Display for Mutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}{}{}",
            residue_char(self.wt).unwrap_or('?'),
            self.pos + 1,
            residue_char(self.mt).unwrap_or('?')
        )
    }
}

impl Mutation {
    /// Parse `A123C`.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::Input(format!("bad mutation {s:?}, expected e.g. A123C"));
        let mut chars = s.chars();
        let wt = chars.next().and_then(residue_id).ok_or_else(bad)?;
        let mt = chars.next_back().and_then(residue_id).ok_or_else(bad)?;
        let digits = chars.as_str();
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let pos: usize = digits.parse().map_err(|_| bad())?;
        if pos == 0 {
            return Err(bad());
        }
        Ok(Mutation {
            pos: pos - 1,
            wt,
            mt,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum VariantSpec {
    Substitution(Vec<Mutation>),
    /// A full replacement sequence (EOS appended).
    Indel(TokenSequence),
}

impl VariantSpec {
    /// Colon-separated substitutions, e.g. `A12C:D40E`. Empty text is the
    /// empty mutation set.
    pub fn parse_substitutions(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Ok(VariantSpec::Substitution(Vec::new()));
        }
        let muts = s
            .split(':')
            .map(|m| Mutation::parse(m.trim()))
            .collect::<Result<Vec<_>>>()?;
        Ok(VariantSpec::Substitution(muts))
    }

    pub fn mutations(&self) -> Option<&[Mutation]> {
        match self {
            VariantSpec::Substitution(m) => Some(m),
            VariantSpec::Indel(_) => None,
        }
    }

    /// Check positions and wild-type letters against `wt`.
    pub fn validate(&self, wt: &TokenSequence) -> Result<()> {
        let VariantSpec::Substitution(muts) = self else {
            return Ok(());
        };
        let res = wt.residues();
        let mut seen = Vec::with_capacity(muts.len());
        for m in muts {
            match res.get(m.pos) {
                None => {
                    return Err(Error::Validation(format!(
                        "mutation {m}: position {} beyond wild-type length {}",
                        m.pos + 1,
                        res.len()
                    )))
                }
                Some(&w) if w != m.wt => {
                    return Err(Error::Validation(format!(
                        "mutation {m}: wild type has {} at position {}",
                        residue_char(w).unwrap_or('?'),
                        m.pos + 1
                    )))
                }
                _ => {}
            }
            if seen.contains(&m.pos) {
                return Err(Error::Validation(format!(
                    "position {} mutated twice",
                    m.pos + 1
                )));
            }
            seen.push(m.pos);
        }
        Ok(())
    }

    /// The variant's full sequence, EOS included.
    pub fn apply(&self, wt: &TokenSequence) -> Result<TokenSequence> {
        self.validate(wt)?;
        match self {
            VariantSpec::Indel(seq) => Ok(seq.clone().with_eos()),
            VariantSpec::Substitution(muts) => {
                let mut ids = wt.residues().to_vec();
                for m in muts {
                    ids[m.pos] = m.mt;
                }
                Ok(TokenSequence::from_residue_ids(ids)?.with_eos())
            }
        }
    }
}

impl fmt::Display for VariantSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VariantSpec::Substitution(m) => {
                let parts: Vec<String> = m.iter().map(|x| x.to_string()).collect();
                write!(f, "{}", parts.join(":"))
            }
            VariantSpec::Indel(seq) => write!(f, "{}", crate::data::detokenize(seq)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tokenize;

    #[test]
    fn parses_multi_mutants() {
        let v = VariantSpec::parse_substitutions("A1C:D3E").unwrap();
        let m = v.mutations().unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[1].pos, 2);
        assert_eq!(v.to_string(), "A1C:D3E");
        for bad in ["A0C", "1C", "A1", "A1X", "AxC", "A1C:"] {
            assert!(VariantSpec::parse_substitutions(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn validation_names_the_position() {
        let wt = tokenize("ACDE").unwrap();
        let v = VariantSpec::parse_substitutions("C3A").unwrap();
        let err = v.validate(&wt).unwrap_err().to_string();
        assert!(err.contains("position 3"), "{err}");
        assert!(VariantSpec::parse_substitutions("A9C")
            .unwrap()
            .validate(&wt)
            .is_err());
        assert!(VariantSpec::parse_substitutions("A1C:A1D")
            .unwrap()
            .validate(&wt)
            .is_err());
    }

    #[test]
    fn apply_keeps_eos() {
        let wt = tokenize("ACDE").unwrap();
        let v = VariantSpec::parse_substitutions("A1W:E4K").unwrap();
        assert_eq!(v.apply(&wt).unwrap(), tokenize("WCDK").unwrap());
    }
}
