//! Synthetic corpora with known structure: a regime-switching HMM that
//! produces protein-like sequences, the bigram-recall induction task, and
//! a motif-planted corpus.

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::seq::SliceRandom;
use rand::Rng;

use super::tokenizer::{residue_id, TokenSequence, ALPHABET, EOS, N_RESIDUES};

/// Residue composition of one hidden regime, as letter → weight.
struct Regime {
    weights: &'static [(char, f64)],
    stay: f64,
}

// Loosely modelled on core, surface, loop, helix and strand composition.
const REGIMES: &[Regime] = &[
    Regime {
        weights: &[
            ('L', 9.0),
            ('I', 6.0),
            ('V', 7.0),
            ('F', 4.0),
            ('A', 4.0),
            ('M', 1.5),
            ('W', 1.0),
        ],
        stay: 0.88,
    },
    Regime {
        weights: &[('E', 7.0), ('K', 7.0), ('D', 5.0), ('R', 5.0), ('Q', 2.0)],
        stay: 0.85,
    },
    Regime {
        weights: &[
            ('G', 6.0),
            ('P', 5.0),
            ('S', 6.0),
            ('N', 4.0),
            ('T', 3.0),
            ('D', 2.0),
        ],
        stay: 0.8,
    },
    Regime {
        weights: &[
            ('A', 8.0),
            ('E', 6.0),
            ('L', 7.0),
            ('K', 5.0),
            ('R', 3.0),
            ('Q', 3.0),
            ('M', 1.0),
        ],
        stay: 0.9,
    },
    Regime {
        weights: &[
            ('V', 6.0),
            ('I', 5.0),
            ('Y', 4.0),
            ('F', 3.0),
            ('T', 5.0),
            ('W', 1.0),
            ('C', 1.5),
            ('H', 1.5),
        ],
        stay: 0.85,
    },
];

/// Regime-switching generator. Every emission mixes the regime composition
/// with a flat background so all 20 residues occur.
pub struct ProteinHmm {
    emit: Vec<WeightedIndex<f64>>,
    stay: Vec<f64>,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for ProteinHmm {
    fn default() -> Self {
        Self::new(60, 300)
    }
}

impl ProteinHmm {
    pub fn new(min_len: usize, max_len: usize) -> Self {
        let emit = REGIMES
            .iter()
            .map(|r| {
                let mut w = vec![0.15; N_RESIDUES];
                for &(c, x) in r.weights {
                    w[residue_id(c).unwrap() as usize] += x;
                }
                WeightedIndex::new(w).unwrap()
            })
            .collect();
        ProteinHmm {
            emit,
            stay: REGIMES.iter().map(|r| r.stay).collect(),
            min_len,
            max_len: max_len.max(min_len),
        }
    }

    /// One sequence: starts with methionine, then regime-driven residues, EOS.
    pub fn sample(&self, rng: &mut impl Rng) -> TokenSequence {
        let n = rng.random_range(self.min_len..=self.max_len);
        let mut ids = Vec::with_capacity(n + 1);
        ids.push(residue_id('M').unwrap());
        let mut state = rng.random_range(0..self.emit.len());
        while ids.len() < n {
            if !rng.random_bool(self.stay[state]) {
                state = rng.random_range(0..self.emit.len());
            }
            ids.push(self.emit[state].sample(rng) as u8);
        }
        ids.push(EOS);
        TokenSequence::from_ids(ids).expect("valid ids")
    }

    /// Sequences until at least `n_tokens` tokens (EOS included) exist.
    pub fn corpus(&self, n_tokens: usize, rng: &mut impl Rng) -> Vec<TokenSequence> {
        let mut out = Vec::new();
        let mut total = 0;
        while total < n_tokens {
            let s = self.sample(rng);
            total += s.len();
            out.push(s);
        }
        out
    }
}

/// One sequence of the bigram-recall induction task.
#[derive(Clone, Debug, PartialEq)]
pub struct RecallSequence {
    pub seq: TokenSequence,
    /// Next-token targets scored by the task: the value after every query
    /// key. Everything else is `None`.
    pub targets: Vec<Option<usize>>,
}

/// Bigram recall: the residues are split at random into `n_pairs` keys and
/// `n_pairs` values joined by a random bijection. All pairs are listed once
/// in random order, then `n_queries` pairs are repeated, queried with
/// replacement. Only the values of the repeats are scored.
///
/// Keys and values never share a residue, so every earlier occurrence of a
/// key is followed by its value, and the bag of context tokens is uniform
/// over the alphabet. Only a previous-token match can shift attention from a
/// key to its value.
pub fn bigram_recall(n_pairs: usize, n_queries: usize, rng: &mut impl Rng) -> RecallSequence {
    let n_pairs = n_pairs.clamp(1, N_RESIDUES / 2);
    let mut pool: Vec<u8> = (0..N_RESIDUES as u8).collect();
    pool.shuffle(rng);
    let (keys, vals) = pool.split_at(n_pairs);
    let mut order: Vec<usize> = (0..n_pairs).collect();
    order.shuffle(rng);
    let mut ids = Vec::with_capacity(2 * (n_pairs + n_queries) + 1);
    for &i in &order {
        ids.extend([keys[i], vals[i]]);
    }
    let listed = ids.len();
    for _ in 0..n_queries {
        let i = rng.random_range(0..n_pairs);
        ids.extend([keys[i], vals[i]]);
    }
    ids.push(EOS);
    let targets = (0..ids.len())
        .map(|t| {
            (t >= listed && (t - listed) % 2 == 0 && t + 2 < ids.len()).then(|| ids[t + 1] as usize)
        })
        .collect();
    RecallSequence {
        seq: TokenSequence::from_ids(ids).expect("valid ids"),
        targets,
    }
}

/// HMM sequences with a strictly conserved `C x x C` planted at random
/// sites (`per_seq` copies each).
pub fn motif_corpus(
    hmm: &ProteinHmm,
    n_seqs: usize,
    per_seq: usize,
    rng: &mut impl Rng,
) -> Vec<TokenSequence> {
    let c = residue_id('C').unwrap();
    (0..n_seqs)
        .map(|_| {
            let s = hmm.sample(rng);
            let mut ids = s.ids().to_vec();
            let body = ids.len() - 1;
            for _ in 0..per_seq {
                if body < 6 {
                    break;
                }
                let at = rng.random_range(1..body - 4);
                ids[at] = c;
                ids[at + 3] = c;
            }
            TokenSequence::from_ids(ids).expect("valid ids")
        })
        .collect()
}

/// Letters of a sequence, for display and FASTA output.
pub fn letters(seq: &TokenSequence) -> String {
    seq.residues()
        .iter()
        .map(|&i| ALPHABET.as_bytes()[i as usize] as char)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hmm_sequences_are_valid_and_seeded() {
        let hmm = ProteinHmm::new(20, 40);
        let a = hmm.corpus(1000, &mut ChaCha8Rng::seed_from_u64(1));
        let b = hmm.corpus(1000, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
        assert!(a.iter().map(|s| s.len()).sum::<usize>() >= 1000);
        for s in &a {
            assert!(s.has_eos());
            assert_eq!(s.ids()[0], residue_id('M').unwrap());
            assert!((21..=41).contains(&s.len()));
        }
    }

    #[test]
    fn recall_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = bigram_recall(10, 7, &mut rng);
        let ids = r.seq.ids();
        assert_eq!(ids.len(), 2 * 17 + 1);
        let mut keys: Vec<u8> = ids[..20].iter().step_by(2).copied().collect();
        let vals: Vec<u8> = ids[1..20].iter().step_by(2).copied().collect();
        let mut all: Vec<u8> = keys.iter().chain(&vals).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..20).collect::<Vec<u8>>());
        for q in (20..34).step_by(2) {
            let i = keys.iter().position(|&k| k == ids[q]).unwrap();
            assert_eq!(ids[q + 1], vals[i]);
            assert_eq!(r.targets[q], Some(vals[i] as usize));
            assert_eq!(r.targets[q + 1], None);
        }
        assert_eq!(r.targets.iter().filter(|t| t.is_some()).count(), 7);
        assert!(r.targets[..20].iter().all(Option::is_none));
        keys.sort_unstable();
        keys.dedup();
        assert_eq!(keys.len(), 10);
    }

    #[test]
    fn motif_planted() {
        let hmm = ProteinHmm::new(30, 50);
        let c = residue_id('C').unwrap();
        let corpus = motif_corpus(&hmm, 20, 2, &mut ChaCha8Rng::seed_from_u64(3));
        for s in &corpus {
            assert!(s.ids().windows(4).any(|w| w[0] == c && w[3] == c));
        }
    }
}
