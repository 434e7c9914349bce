//! Corpus ingestion and batching.

pub mod fasta;
pub mod pack;
pub mod sampling;
pub mod synthetic;
pub mod tokenizer;

pub use fasta::{parse_fasta, partition_records, write_fasta, FastaRecord, RejectedRecord};
pub use pack::{pack_sequences, PackedBatch, PackingMode, DEFAULT_MAX_SEQS};
pub use sampling::{crop, split_holdout};
pub use tokenizer::{
    detokenize, residue_char, residue_id, tokenize, TokenSequence, ALPHABET, EOS, N_RESIDUES,
    VOCAB_SIZE,
};

/// Fewest residues a training sequence may have.
pub const MIN_RESIDUES: usize = 10;

/// Drop sequences with fewer than [`MIN_RESIDUES`] residues.
pub fn filter_short(seqs: Vec<TokenSequence>) -> Vec<TokenSequence> {
    seqs.into_iter()
        .filter(|s| s.residues().len() >= MIN_RESIDUES)
        .collect()
}

/// Next-token targets of one sequence scored on its own: every token from the
/// second on, EOS included.
pub fn sequence_targets(seq: &TokenSequence) -> Vec<Option<usize>> {
    let ids = seq.ids();
    (0..ids.len())
        .map(|t| ids.get(t + 1).map(|&x| x as usize))
        .collect()
}

/// Unigram distribution over predicted tokens (second position on, EOS
/// included), add-one smoothed over the 21 symbols.
pub fn unigram_distribution(seqs: &[TokenSequence]) -> [f64; VOCAB_SIZE] {
    let mut counts = [1.0f64; VOCAB_SIZE];
    for s in seqs {
        for &id in &s.ids()[1..] {
            counts[id as usize] += 1.0;
        }
    }
    let total: f64 = counts.iter().sum();
    counts.map(|c| c / total)
}

/// Mean negative log-likelihood (nats) of `eval` under the unigram of `train`.
pub fn unigram_nll(train: &[TokenSequence], eval: &[TokenSequence]) -> f64 {
    let p = unigram_distribution(train);
    let mut total = 0.0;
    let mut n = 0usize;
    for s in eval {
        for &id in &s.ids()[1..] {
            total -= p[id as usize].ln();
            n += 1;
        }
    }
    total / n.max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_filter_counts_residues() {
        let a = tokenize("ACDEFGHIK").unwrap();
        let b = tokenize("ACDEFGHIKL").unwrap();
        assert_eq!(filter_short(vec![a, b.clone()]), vec![b]);
    }

    #[test]
    fn unigram_is_distribution() {
        let s = vec![tokenize("AAAC").unwrap()];
        let p = unigram_distribution(&s);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[0] > p[1]);
        let nll = unigram_nll(&s, &s);
        assert!(nll > 0.0 && nll < (21f64).ln());
    }
}
