use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use proust::data::{residue_id, tokenize};
use proust::scoring::{
    depth_sweep, score_indel, score_substitution, score_variants, AugmentOptions, SyntheticAssay,
    VariantSpec,
};
use proust::tensor::Tensor;
use proust::{Model, ModelConfig};

/// Every position sees the same hidden state, so the logits are a fixed
/// vector: 2 for A, 0.5 for C, 0 elsewhere, times a known RMS factor.
fn unigram_model() -> (Model, f64) {
    let cfg = ModelConfig::toy(2, 32);
    let d = cfg.d_model;
    let mut m: Model = Model::new(cfg, 0).unwrap();
    m.weights.embed = Tensor::ones(m.weights.embed.shape());
    for l in &mut m.weights.layers {
        l.o = Tensor::zeros(l.o.shape());
        l.down = Tensor::zeros(l.down.shape());
    }
    let a = residue_id('A').unwrap() as usize;
    let c = residue_id('C').unwrap() as usize;
    let mut head = Tensor::zeros(m.weights.head.shape());
    for k in 0..d {
        head.row_mut(k)[a] = 2.0 / d as f64;
        head.row_mut(k)[c] = 0.5 / d as f64;
    }
    m.weights.head = head;
    let eps = 1e-6f64;
    let c1 = 1.0 / (1.0 + eps).sqrt();
    let c2 = c1 / (c1 * c1 + eps).sqrt();
    (m, c2)
}

#[test]
fn substitution_matches_unigram_log_ratio() {
    let (m, k) = unigram_model();
    let wt = tokenize("MAKAVAD").unwrap();
    let v = VariantSpec::parse_substitutions("A4C").unwrap();
    let s = score_substitution(&m, &wt, &v).unwrap();
    assert!((s - k * (0.5 - 2.0)).abs() < 1e-12, "{s}");
    let two = VariantSpec::parse_substitutions("A4C:A6C").unwrap();
    let s2 = score_substitution(&m, &wt, &two).unwrap();
    assert!((s2 - 2.0 * k * (0.5 - 2.0)).abs() < 1e-12);
    // the first residue is conditioned on, never predicted
    let first = VariantSpec::parse_substitutions("M1C").unwrap();
    assert!(score_substitution(&m, &wt, &first).unwrap().abs() < 1e-12);
}

#[test]
fn empty_and_antisymmetric() {
    let m: Model = Model::new(ModelConfig::toy(2, 32), 4).unwrap();
    let wt = tokenize("MKTAYIAKQR").unwrap();
    let none = VariantSpec::Substitution(vec![]);
    assert_eq!(score_substitution(&m, &wt, &none).unwrap(), 0.0);
    let v = VariantSpec::parse_substitutions("K2W:Q9E").unwrap();
    let fwd = score_substitution(&m, &wt, &v).unwrap();
    let mutant = v.apply(&wt).unwrap();
    let back = VariantSpec::parse_substitutions("W2K:E9Q").unwrap();
    assert_eq!(score_substitution(&m, &mutant, &back).unwrap(), -fwd);
    let bad = VariantSpec::parse_substitutions("A2W").unwrap();
    let err = score_substitution(&m, &wt, &bad).unwrap_err();
    assert!(matches!(err, proust::Error::Validation(_)));
}

#[test]
fn indel_arithmetic_under_uniform_model() {
    let mut m: Model = Model::new(ModelConfig::toy(2, 32), 0).unwrap();
    m.weights.head = Tensor::zeros(m.weights.head.shape());
    let wt = tokenize("MKTAYIAKQRQISF").unwrap();
    for k in [1usize, 3, 6] {
        let del = tokenize(&"MKTAYIAKQRQISF"[..14 - k]).unwrap();
        let s = score_indel(&m, &wt, &del).unwrap();
        assert!((s - k as f64 * 21f64.ln()).abs() < 1e-10, "{k}: {s}");
    }
    assert_eq!(score_indel(&m, &wt, &wt).unwrap(), 0.0);

    let m: Model = Model::new(ModelConfig::toy(2, 32), 1).unwrap();
    let ins = tokenize("MKTAYWIAKQRQISF").unwrap();
    let back = tokenize("MKTAYIAKQRQISF").unwrap();
    assert!(score_indel(&m, &wt, &ins).unwrap() != 0.0);
    assert_eq!(score_indel(&m, &wt, &back).unwrap(), 0.0);
}

#[test]
fn indel_path_agrees_with_substitution_path() {
    let m: Model = Model::new(ModelConfig::toy(2, 32), 7).unwrap();
    let wt = tokenize("MKTAYIAKQRQISFVK").unwrap();
    let v = VariantSpec::parse_substitutions("T3G:F14L").unwrap();
    let a = score_substitution(&m, &wt, &v).unwrap();
    let b = score_indel(&m, &wt, &v.apply(&wt).unwrap()).unwrap();
    assert!((a - b).abs() < 1e-10);
}

#[test]
fn threaded_scoring_matches_serial() {
    let m: Model = Model::new(ModelConfig::toy(1, 16), 2).unwrap();
    let wt = tokenize("MKTAYIAKQR").unwrap();
    let vs: Vec<VariantSpec> = ["K2A", "T3C", "A4D", "Y5E", "I6F"]
        .iter()
        .map(|s| VariantSpec::parse_substitutions(s).unwrap())
        .collect();
    let one = score_variants(&m, &wt, &vs, 1).unwrap();
    let three = score_variants(&m, &wt, &vs, 3).unwrap();
    assert_eq!(one, three);
    for (v, s) in vs.iter().zip(&one) {
        assert_eq!(*s, score_substitution(&m, &wt, v).unwrap());
    }
}

#[test]
fn deeper_alignments_rank_better() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let assay = SyntheticAssay::generate(60, 300, 1.5, &mut rng);
    let msa = assay.msa(400, 0.05, &mut rng);
    let ll = vec![0.0; assay.variants.len()];
    let depths = [0, 2, 8, 32, 128, 400, 1000];
    let opts = AugmentOptions::default();
    let rows = depth_sweep(&ll, &assay.variants, &assay.fitness, &msa, &depths, &opts).unwrap();
    assert_eq!(rows[0].rho, None);
    assert!(rows[6].skipped && rows[6].rho.is_none());
    let rho: Vec<f64> = rows[1..6].iter().map(|r| r.rho.unwrap()).collect();
    for w in rho.windows(2) {
        assert!(w[1] > w[0], "{rho:?}");
    }
    assert!(rho[4] > 0.8, "{rho:?}");
    let again = depth_sweep(&ll, &assay.variants, &assay.fitness, &msa, &depths, &opts).unwrap();
    assert_eq!(rows, again);
}

#[test]
fn depth_zero_is_the_likelihood_rho() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let assay = SyntheticAssay::generate(20, 30, 1.0, &mut rng);
    let msa = assay.msa(10, 0.0, &mut rng);
    let ll: Vec<f64> = (0..30)
        .map(|i| ((i * 7) % 11) as f64 - 0.5 * i as f64)
        .collect();
    let rows = depth_sweep(
        &ll,
        &assay.variants,
        &assay.fitness,
        &msa,
        &[0, 5],
        &Default::default(),
    )
    .unwrap();
    assert_eq!(
        rows[0].rho,
        proust::scoring::spearman(&ll, &assay.fitness).unwrap()
    );
    assert!(depth_sweep(
        &ll,
        &assay.variants,
        &assay.fitness,
        &msa,
        &[5, 0],
        &Default::default()
    )
    .is_err());
}
