//! Sample from a model with the KV cache and confirm the cached logits match
//! an uncached forward pass over the finished sequence.

use proust::data::{detokenize, tokenize};
use proust::model::{DecodeCache, GenerateOptions};
use proust::{Model, ModelConfig, Result};

fn main() -> Result<()> {
    let model: Model = Model::new(ModelConfig::toy(2, 64), 11)?;
    let prefix = tokenize("MKT")?;

    for (name, temperature) in [("greedy", 0.0), ("t=1.0", 1.0)] {
        let opts = GenerateOptions {
            max_new: 40,
            temperature,
            seed: 5,
            allow_eos: false,
        };
        let g = model.generate(&prefix, &opts)?;
        println!("{name}: {}", detokenize(&g.sequence));

        let full = model.forward(&g.sequence)?;
        let start = prefix.residues().len() - 1;
        let worst = g
            .step_logits
            .iter()
            .enumerate()
            .flat_map(|(i, step)| {
                step.iter()
                    .zip(full.row(start + i))
                    .map(|(a, b)| (a - b).abs())
            })
            .fold(0.0f64, f64::max);
        println!("  cached vs full logits: max |diff| {worst:.2e}");
    }

    let cache = DecodeCache::<f64>::new(&model.config);
    let (kv, v0) = cache.floats_per_token();
    println!("cache holds {kv} shared K/V floats and {v0} V0 floats per token and layer");
    Ok(())
}
