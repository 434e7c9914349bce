//! The 21-symbol vocabulary: 20 amino acids in alphabetical one-letter
//! order followed by EOS. Ids 21..32 exist only as padding in the logits.

use crate::error::{Error, Result};

pub const ALPHABET: &str = "ACDEFGHIKLMNPQRSTVWY";
pub const N_RESIDUES: usize = 20;
pub const EOS: u8 = 20;
pub const VOCAB_SIZE: usize = 21;

const fn build_lookup() -> [u8; 256] {
    let mut t = [255u8; 256];
    let a = ALPHABET.as_bytes();
    let mut i = 0;
    while i < a.len() {
        t[a[i] as usize] = i as u8;
        t[a[i].to_ascii_lowercase() as usize] = i as u8;
        i += 1;
    }
    t
}

static LOOKUP: [u8; 256] = build_lookup();

/// Id of a residue letter (either case).
pub fn residue_id(c: char) -> Option<u8> {
    if !c.is_ascii() {
        return None;
    }
    match LOOKUP[c as usize] {
        255 => None,
        id => Some(id),
    }
}

pub fn residue_char(id: u8) -> Option<char> {
    ALPHABET.as_bytes().get(id as usize).map(|&b| b as char)
}

/// Encoded sequence. Ids are in `0..=20`; EOS, when present, is last.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    ids: Vec<u8>,
}

impl TokenSequence {
    /// Validate raw ids: all in range, EOS only in final position.
    pub fn from_ids(ids: Vec<u8>) -> Result<Self> {
        for (i, &id) in ids.iter().enumerate() {
            if id as usize >= VOCAB_SIZE {
                return Err(Error::Input(format!(
                    "token id {id} at {i} outside vocabulary"
                )));
            }
            if id == EOS && i + 1 != ids.len() {
                return Err(Error::Input(format!("EOS at {i} before end of sequence")));
            }
        }
        Ok(TokenSequence { ids })
    }

    /// Residues only, no EOS (used as a generation prefix).
    pub fn from_residue_ids(ids: Vec<u8>) -> Result<Self> {
        if ids.contains(&EOS) {
            return Err(Error::Input("EOS inside residue ids".into()));
        }
        Self::from_ids(ids)
    }

    pub fn ids(&self) -> &[u8] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn has_eos(&self) -> bool {
        self.ids.last() == Some(&EOS)
    }

    /// Ids without the trailing EOS.
    pub fn residues(&self) -> &[u8] {
        if self.has_eos() {
            &self.ids[..self.ids.len() - 1]
        } else {
            &self.ids
        }
    }

    pub fn as_usize(&self) -> Vec<usize> {
        self.ids.iter().map(|&i| i as usize).collect()
    }

    pub fn with_eos(mut self) -> Self {
        if !self.has_eos() {
            self.ids.push(EOS);
        }
        self
    }
}

/// Letters to ids with EOS appended.
pub fn tokenize(residues: &str) -> Result<TokenSequence> {
    let mut ids = Vec::with_capacity(residues.len() + 1);
    for (i, c) in residues.chars().enumerate() {
        match residue_id(c) {
            Some(id) => ids.push(id),
            None => return Err(Error::Input(format!("unknown residue {c:?} at {i}"))),
        }
    }
    ids.push(EOS);
    Ok(TokenSequence { ids })
}

/// Inverse of [`tokenize`]: residue letters, EOS dropped.
pub fn detokenize(seq: &TokenSequence) -> String {
    seq.residues()
        .iter()
        .map(|&id| residue_char(id).expect("validated id"))
        .collect()
}
