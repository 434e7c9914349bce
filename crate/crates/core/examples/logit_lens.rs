//! Per-layer predictions, the inverse lens, entropy profiles and attention
//! distance statistics for a few sequences.

use proust::data::{residue_char, tokenize};
use proust::lens::{
    attention_stats, inspect, inverse_of, layer_accuracy, median_threshold, retrieval_heuristic,
    EntropyBase, EntropyProfile, BAND_LABELS,
};
use proust::{Model, ModelConfig, Result};

fn main() -> Result<()> {
    let model: Model = Model::new(ModelConfig::toy(3, 32), 2)?;
    let seqs = [
        "MKTAYIAKQRQISFVKSHFSRQLEERLGLIEVQAPILSRVGDGTQDNLSGAEKAVQ",
        "MSTNPKPQRKTKRNTNRRPQDVKFPGGGQIVGGVYLLPRRGPRLGVRATRKTSE",
    ]
    .iter()
    .map(|s| tokenize(s))
    .collect::<Result<Vec<_>>>()?;
    let ins = seqs
        .iter()
        .map(|s| inspect(&model, s))
        .collect::<Result<Vec<_>>>()?;

    for (depth, acc) in layer_accuracy(&ins).iter().enumerate() {
        println!(
            "stream {depth}: top-1 accuracy {:.3}",
            acc.unwrap_or(f64::NAN)
        );
    }
    let inv = inverse_of(&ins[0]);
    let suppressed: String = inv.suppressed[..12]
        .iter()
        .map(|&t| residue_char(t).unwrap_or('$'))
        .collect();
    println!("most suppressed token at the first 12 rows: {suppressed}");

    let profiles: Vec<EntropyProfile> = ins
        .iter()
        .map(|i| EntropyProfile::from_probs(i.final_probs(), EntropyBase::Bits))
        .collect();
    let threshold = median_threshold(&profiles).expect("two profiles");
    for p in &profiles {
        let advice = retrieval_heuristic(p, threshold);
        println!(
            "entropy mean {:.3} bits, std {:.4}: {advice:?}",
            p.mean, p.std
        );
    }

    let stats = attention_stats(&ins);
    for (label, share) in BAND_LABELS.iter().zip(stats.bands) {
        println!("attention at distance {label}: {share:.3}");
    }
    Ok(())
}
