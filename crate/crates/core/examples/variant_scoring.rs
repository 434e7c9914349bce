//! Score a synthetic assay by likelihood deltas, add the PSSM term from a
//! sampled alignment and report Spearman ρ against the known fitness.

use proust::scoring::{augment, score_variants, spearman, AugmentOptions, SyntheticAssay};
use proust::{Model, ModelConfig, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let assay = SyntheticAssay::generate(60, 80, 1.5, &mut rng);
    let msa = assay.msa(64, 0.05, &mut rng);

    // an untrained model carries no signal; the alignment supplies it here
    let model: Model = Model::new(ModelConfig::toy(1, 32), 0)?;
    let ll = score_variants(&model, &assay.wt, &assay.variants, 2)?;
    let labels: Vec<String> = assay.variants.iter().map(|v| v.to_string()).collect();

    let opts = AugmentOptions::default();
    let alone = augment(&labels, &ll, &assay.variants, None, &opts)?;
    let with = augment(&labels, &ll, &assay.variants, Some(&msa), &opts)?;
    let rho = |rows: &[proust::scoring::ScoredVariant]| -> Result<Option<f64>> {
        spearman(
            &rows.iter().map(|r| r.combined).collect::<Vec<_>>(),
            &assay.fitness,
        )
    };
    println!("likelihood only: ρ = {:?}", rho(&alone)?);
    println!("with PSSM:       ρ = {:?}", rho(&with)?);
    for r in with.iter().take(5) {
        println!(
            "{:>8} ll {:+.4} pssm {:+.4} combined {:+.4}",
            r.label,
            r.ll,
            r.pssm.unwrap(),
            r.combined
        );
    }
    Ok(())
}
