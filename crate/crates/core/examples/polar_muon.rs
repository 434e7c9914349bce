//! Polar Express against the SVD polar factor, the Muon update's spectral
//! norm, and the warmup-stable-decay schedule.

use proust::optim::linalg::{polar_factor_svd, singular_values, spectral_norm};
use proust::optim::{
    coefficient_schedule, muon_update, polar_express, spectral_scale, LrSchedule, MuonConfig,
    MuonState,
};
use proust::{Result, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(&[rows, cols], |_| StandardNormal.sample(rng))
}

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (i, q) in coefficient_schedule(5, 1e-2)?.iter().enumerate() {
        println!(
            "iteration {i}: p(x) = {:.4} x {:+.4} x³ {:+.4} x⁵",
            q.0, q.1, q.2
        );
    }

    let g = gaussian(64, 64, &mut rng);
    let u = polar_express(&g, 5)?;
    let exact = polar_factor_svd(&g)?;
    let sv = singular_values(&u)?;
    println!(
        "64x64: singular values of the estimate in [{:.3}, {:.3}], distance to SVD polar {:.3}",
        sv.last().unwrap(),
        sv[0],
        u.sub(&exact)?.frobenius() / exact.frobenius()
    );

    let cfg = MuonConfig::default();
    let schedule = cfg.schedule()?;
    for shape in [[64, 64], [64, 256], [1024, 256]] {
        let grad = gaussian(shape[0], shape[1], &mut rng);
        let mut state = MuonState::new(&shape);
        let upd = muon_update(&grad, &mut state, &cfg, &schedule)?.scale(cfg.lr);
        println!(
            "{shape:?}: ‖update‖₂ = {:.5}, lr·√(n_out/n_in) = {:.5}",
            spectral_norm(&upd, 50)?,
            cfg.lr * spectral_scale(&shape)
        );
    }

    let s = LrSchedule::new(100, 10, 0.1)?;
    let mults: Vec<String> = [0, 5, 10, 50, 89, 90, 95, 99, 100]
        .iter()
        .map(|&k| Ok(format!("{k}:{:.2}", s.multiplier(k)?)))
        .collect::<Result<_>>()?;
    println!("WSD multipliers: {}", mults.join(" "));
    Ok(())
}
