use serde::Serialize;

use super::inspect::Inspection;
use super::ResidueGroup;

/// Band edges: distance ≤ 10, 11–20, > 20.
pub const BAND_LABELS: [&str; 3] = ["<=10", "11-20", ">20"];

pub fn band_of(distance: usize) -> usize {
    match distance {
        0..=10 => 0,
        11..=20 => 1,
        _ => 2,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttentionStats {
    /// Share of attention mass in each distance band. Self-attention
    /// (distance 0) is left out of the totals.
    pub bands: [f64; 3],
    /// Mean attention a key receives (summed over queries, averaged over
    /// layers and heads), per residue group; `None` when the group is absent.
    pub group_received: [Option<f64>; 4],
    /// Some sequence was too short to have pairs more than 20 apart.
    pub low_support: bool,
    pub n_sequences: usize,
}

/// Mass-weighted pooling over every layer, head and query of every
/// sequence.
pub fn attention_stats(inspections: &[Inspection]) -> AttentionStats {
    let mut band_mass = [0.0f64; 3];
    let mut group_sum = [0.0f64; 4];
    let mut group_n = [0usize; 4];
    let mut low_support = false;
    for ins in inspections {
        let n = ins.len();
        low_support |= n < 21;
        let mut received = vec![0.0f64; n];
        let mut maps = 0usize;
        for probs in &ins.attention {
            for h in 0..probs.n_heads {
                maps += 1;
                for t in 0..probs.len() {
                    let (start, w) = probs.row(h, t);
                    for (j, &x) in w.iter().enumerate() {
                        let s = start + j;
                        if s == t {
                            continue;
                        }
                        band_mass[band_of(t - s)] += x;
                        received[s] += x;
                    }
                }
            }
        }
        for (s, &id) in ins.ids.iter().enumerate() {
            if let Some(g) = ResidueGroup::of(id) {
                group_sum[g as usize] += received[s] / maps.max(1) as f64;
                group_n[g as usize] += 1;
            }
        }
    }
    let total: f64 = band_mass.iter().sum();
    let bands = if total > 0.0 {
        band_mass.map(|m| m / total)
    } else {
        [0.0; 3]
    };
    let mut group_received = [None; 4];
    for g in 0..4 {
        if group_n[g] > 0 {
            group_received[g] = Some(group_sum[g] / group_n[g] as f64);
        }
    }
    AttentionStats {
        bands,
        group_received,
        low_support,
        n_sequences: inspections.len(),
    }
}

/// Band shares under uniform causal attention on a length-`n` sequence:
/// pair (t, s) carries weight 1/(t+1), self pairs excluded.
pub fn uniform_band_oracle(n: usize) -> [f64; 3] {
    let mut m = [0.0; 3];
    for t in 0..n {
        for s in 0..t {
            m[band_of(t - s)] += 1.0 / (t + 1) as f64;
        }
    }
    let total: f64 = m.iter().sum();
    m.map(|x| x / total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bands() {
        assert_eq!(band_of(1), 0);
        assert_eq!(band_of(10), 0);
        assert_eq!(band_of(11), 1);
        assert_eq!(band_of(20), 1);
        assert_eq!(band_of(21), 2);
        let o = uniform_band_oracle(5);
        assert_eq!(o, [1.0, 0.0, 0.0]);
        let o = uniform_band_oracle(100);
        assert!((o.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(o[2] > o[1]);
    }
}
