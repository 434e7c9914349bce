use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tokenizer::TokenSequence;
use crate::error::{Error, Result};

/// Random contiguous window of at most `max_len` tokens. Cropping works on
/// the full token list, so a window that stops short of the end carries no EOS.
pub fn crop(seq: &TokenSequence, max_len: usize, rng: &mut impl Rng) -> Result<TokenSequence> {
    if max_len < 10 {
        return Err(Error::Range(format!("crop length {max_len} below 10")));
    }
    if seq.len() <= max_len {
        return Ok(seq.clone());
    }
    let off = rng.random_range(0..=seq.len() - max_len);
    TokenSequence::from_ids(seq.ids()[off..off + max_len].to_vec())
}

/// Deterministic seeded split by sequence. The validation set holds
/// `round(N · fraction)` items; both halves keep corpus order.
pub fn split_holdout<T: Clone>(corpus: &[T], fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Range(format!(
            "holdout fraction {fraction} not in (0, 1)"
        )));
    }
    let n_val = (corpus.len() as f64 * fraction).round() as usize;
    let mut idx: Vec<usize> = (0..corpus.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_val = vec![false; corpus.len()];
    for &i in &idx[..n_val] {
        is_val[i] = true;
    }
    let mut train = Vec::with_capacity(corpus.len() - n_val);
    let mut val = Vec::with_capacity(n_val);
    for (x, v) in corpus.iter().zip(is_val) {
        if v {
            val.push(x.clone());
        } else {
            train.push(x.clone());
        }
    }
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tokenizer::tokenize;

    fn seq_of_len(n: usize) -> TokenSequence {
        TokenSequence::from_ids((0..n).map(|i| (i % 20) as u8).collect()).unwrap()
    }

    #[test]
    fn short_and_boundary_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = seq_of_len(50);
        assert_eq!(crop(&s, 100, &mut rng).unwrap(), s);
        let s = seq_of_len(100);
        assert_eq!(crop(&s, 100, &mut rng).unwrap(), s);
        assert!(crop(&s, 9, &mut rng).is_err());
    }

    #[test]
    fn off_by_one_offsets_are_uniform() {
        let s = seq_of_len(101);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 10_000;
        let mut zero = 0;
        for _ in 0..n {
            let c = crop(&s, 100, &mut rng).unwrap();
            assert_eq!(c.len(), 100);
            if c.ids()[0] == s.ids()[0] {
                zero += 1;
            } else {
                assert_eq!(c.ids()[0], s.ids()[1]);
            }
        }
        // binomial(10000, 0.5): sigma = 50
        assert!((zero as i64 - 5000).abs() <= 150, "{zero}");
    }

    #[test]
    fn crop_is_substring_and_keeps_eos_rule() {
        let s = tokenize(&"ACDEFGHIKLMNPQRSTVWY".repeat(3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let c = crop(&s, 17, &mut rng).unwrap();
            assert!(s.ids().windows(17).any(|w| w == c.ids()));
        }
    }

    #[test]
    fn holdout_count_and_partition() {
        let corpus: Vec<usize> = (0..10_000).collect();
        let (train, val) = split_holdout(&corpus, 0.0004, 1).unwrap();
        assert_eq!(val.len(), 4);
        assert_eq!(train.len() + val.len(), corpus.len());
        assert!(val.iter().all(|v| !train.contains(v)));
        let (t2, v2) = split_holdout(&corpus, 0.0004, 1).unwrap();
        assert_eq!((train, val), (t2, v2));
        assert!(split_holdout(&corpus, 0.0, 1).is_err());
    }
}
