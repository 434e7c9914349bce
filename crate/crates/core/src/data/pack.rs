//! Variable-length packing into fixed token-budget batches, and the binary
//! batch cache.
//!
//! Cache layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes  "PRSTPACK"
//! version   u32      1
//! n_batches u64
//! per batch:
//!   n_tokens u32
//!   n_seqs   u32
//!   offsets  (n_seqs + 1) × u32   sequence boundaries, offsets[0] = 0
//!   tokens   n_tokens × u8        token ids
//! ```

use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::tokenizer::{TokenSequence, VOCAB_SIZE};
use crate::error::{Error, Result};
use crate::tensor::SeqLayout;

pub const DEFAULT_MAX_SEQS: usize = 768;
const MAGIC: &[u8; 8] = b"PRSTPACK";
const VERSION: u32 = 1;

/// How sequences inside one packed batch see each other.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PackingMode {
    /// Block-diagonal attention, positions restart per sequence.
    #[default]
    StrictReset,
    /// One continuous stream; the previous sequence's EOS is the context for
    /// the next sequence's first residue.
    EosSeparator,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackedBatch {
    tokens: Vec<u8>,
    offsets: Vec<usize>,
}

impl PackedBatch {
    pub fn from_sequences(seqs: &[TokenSequence]) -> Self {
        let mut tokens = Vec::new();
        let mut offsets = vec![0];
        for s in seqs {
            tokens.extend_from_slice(s.ids());
            offsets.push(tokens.len());
        }
        PackedBatch { tokens, offsets }
    }

    pub fn tokens(&self) -> &[u8] {
        &self.tokens
    }

    pub fn token_ids(&self) -> Vec<usize> {
        self.tokens.iter().map(|&t| t as usize).collect()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn n_tokens(&self) -> usize {
        self.tokens.len()
    }

    pub fn n_seqs(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn sequence(&self, i: usize) -> &[u8] {
        &self.tokens[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Sequence index of every position.
    pub fn seq_index(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.tokens.len());
        for (i, n) in self.lengths().into_iter().enumerate() {
            out.extend(std::iter::repeat_n(i, n));
        }
        out
    }

    pub fn layout(&self, mode: PackingMode) -> Arc<SeqLayout> {
        Arc::new(match mode {
            PackingMode::StrictReset => SeqLayout::packed(&self.lengths()),
            PackingMode::EosSeparator => SeqLayout::single(self.tokens.len()),
        })
    }

    /// Next-token targets per position; `None` where nothing is predicted.
    pub fn targets(&self, mode: PackingMode) -> Vec<Option<usize>> {
        let n = self.tokens.len();
        let mut out: Vec<Option<usize>> = (0..n)
            .map(|t| self.tokens.get(t + 1).map(|&x| x as usize))
            .collect();
        if mode == PackingMode::StrictReset {
            for &end in &self.offsets[1..] {
                if end > 0 {
                    out[end - 1] = None;
                }
            }
        }
        out
    }
}

/// Greedy packing in stream order: a batch closes as soon as the next
/// sequence would overflow the token budget or the sequence cap.
pub fn pack_sequences(
    seqs: &[TokenSequence],
    token_budget: usize,
    max_seqs: usize,
) -> Result<Vec<PackedBatch>> {
    if max_seqs == 0 {
        return Err(Error::Config("sequence cap must be at least 1".into()));
    }
    let mut batches = Vec::new();
    let mut cur: Vec<TokenSequence> = Vec::new();
    let mut cur_tokens = 0;
    for (i, s) in seqs.iter().enumerate() {
        if s.len() > token_budget {
            return Err(Error::Input(format!(
                "sequence {i} has {} tokens, over the {token_budget}-token budget; crop first",
                s.len()
            )));
        }
        if !cur.is_empty() && (cur_tokens + s.len() > token_budget || cur.len() == max_seqs) {
            batches.push(PackedBatch::from_sequences(&cur));
            cur.clear();
            cur_tokens = 0;
        }
        cur_tokens += s.len();
        cur.push(s.clone());
    }
    if !cur.is_empty() {
        batches.push(PackedBatch::from_sequences(&cur));
    }
    Ok(batches)
}

pub fn write_batch_cache(batches: &[PackedBatch], w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(batches.len() as u64).to_le_bytes())?;
    for b in batches {
        w.write_all(&(b.n_tokens() as u32).to_le_bytes())?;
        w.write_all(&(b.n_seqs() as u32).to_le_bytes())?;
        for &o in &b.offsets {
            w.write_all(&(o as u32).to_le_bytes())?;
        }
        w.write_all(&b.tokens)?;
    }
    Ok(())
}

pub fn read_batch_cache(r: &mut impl Read) -> Result<Vec<PackedBatch>> {
    let bad = |m: &str| Error::Format(format!("batch cache: {m}"));
    let mut buf = Vec::new();
    r.read_to_end(&mut buf).map_err(|e| bad(&e.to_string()))?;
    let mut cur = Cursor { buf: &buf, pos: 0 };
    if cur.take(8).ok_or_else(|| bad("truncated"))? != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = cur.u32().ok_or_else(|| bad("truncated"))?;
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let n = cur.u64().ok_or_else(|| bad("truncated"))? as usize;
    let mut out = Vec::with_capacity(n.min(1 << 20));
    for i in 0..n {
        let nt = cur.u32().ok_or_else(|| bad("truncated"))? as usize;
        let ns = cur.u32().ok_or_else(|| bad("truncated"))? as usize;
        let mut offsets = Vec::with_capacity(ns + 1);
        for _ in 0..=ns {
            offsets.push(cur.u32().ok_or_else(|| bad("truncated"))? as usize);
        }
        let tokens = cur.take(nt).ok_or_else(|| bad("truncated"))?.to_vec();
        let monotone = offsets.windows(2).all(|w| w[0] <= w[1]);
        if offsets[0] != 0 || offsets[ns] != nt || !monotone {
            return Err(bad(&format!("batch {i}: inconsistent offsets")));
        }
        if tokens.iter().any(|&t| t as usize >= VOCAB_SIZE) {
            return Err(bad(&format!("batch {i}: token outside vocabulary")));
        }
        out.push(PackedBatch { tokens, offsets });
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.buf.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }
    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }
    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(n: usize) -> TokenSequence {
        let mut ids: Vec<u8> = (0..n - 1).map(|i| (i % 20) as u8).collect();
        ids.push(20);
        TokenSequence::from_ids(ids).unwrap()
    }

    fn shape(b: &[PackedBatch]) -> Vec<Vec<usize>> {
        b.iter().map(|x| x.lengths()).collect()
    }

    #[test]
    fn budget_binds() {
        let b = pack_sequences(&[seq(5), seq(5), seq(5)], 10, 768).unwrap();
        assert_eq!(shape(&b), vec![vec![5, 5], vec![5]]);
    }

    #[test]
    fn single_sequence_single_batch() {
        let b = pack_sequences(&[seq(7)], 7, 768).unwrap();
        assert_eq!(shape(&b), vec![vec![7]]);
    }

    #[test]
    fn cap_binds_before_budget() {
        let b = pack_sequences(&[seq(3), seq(3), seq(3), seq(3)], 100, 2).unwrap();
        assert_eq!(shape(&b), vec![vec![3, 3], vec![3, 3]]);
    }

    #[test]
    fn oversize_sequence_errors() {
        assert!(matches!(
            pack_sequences(&[seq(11)], 10, 4),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn targets_respect_mode() {
        let b = PackedBatch::from_sequences(&[seq(2), seq(3)]);
        assert_eq!(
            b.targets(PackingMode::StrictReset),
            vec![Some(20), None, Some(1), Some(20), None]
        );
        assert_eq!(
            b.targets(PackingMode::EosSeparator),
            vec![Some(20), Some(0), Some(1), Some(20), None]
        );
        assert_eq!(b.seq_index(), vec![0, 0, 1, 1, 1]);
    }

    #[test]
    fn cache_rejects_garbage() {
        assert!(read_batch_cache(&mut &b"NOTPACK!"[..]).is_err());
    }

    proptest! {
        #[test]
        fn packing_conserves_tokens_and_bounds(
            lens in proptest::collection::vec(2usize..40, 1..60),
            budget in 40usize..200,
            cap in 1usize..10,
        ) {
            let seqs: Vec<TokenSequence> = lens.iter().map(|&n| seq(n)).collect();
            let batches = pack_sequences(&seqs, budget, cap).unwrap();
            let mut all = Vec::new();
            for b in &batches {
                prop_assert!(b.n_tokens() <= budget);
                prop_assert!(b.n_seqs() <= cap);
                all.extend_from_slice(b.tokens());
            }
            let want: Vec<u8> = seqs.iter().flat_map(|s| s.ids().to_vec()).collect();
            prop_assert_eq!(all, want);

            let mut bytes = Vec::new();
            write_batch_cache(&batches, &mut bytes).unwrap();
            prop_assert_eq!(read_batch_cache(&mut bytes.as_slice()).unwrap(), batches);
        }
    }
}
