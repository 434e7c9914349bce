//! FASTA parsing, tokenisation, cropping, holdout splitting and greedy
//! packing, with both attention layouts and the binary batch cache.

use proust::data::pack::{read_batch_cache, write_batch_cache};
use proust::data::{
    crop, pack_sequences, parse_fasta, partition_records, split_holdout, tokenize, PackingMode,
};
use proust::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FASTA: &str = ">a
MKTAYIAKQRQISF
>b ok
MSTNPKPQRK
>bad
MKT1AY
>c
MACDCAAGKKGPAKPCWWCGHHLLVVAACC
>d
MEEPQSDPSV
";

fn main() -> Result<()> {
    let (records, rejected) = partition_records(parse_fasta(FASTA)?);
    for r in &rejected {
        println!("rejected: {r:?}");
    }
    let seqs = records
        .iter()
        .map(|r| tokenize(&r.sequence))
        .collect::<Result<Vec<_>>>()?;
    println!(
        "{} sequences, lengths with EOS {:?}",
        seqs.len(),
        seqs.iter().map(|s| s.len()).collect::<Vec<_>>()
    );

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cropped = seqs
        .iter()
        .map(|s| crop(s, 12, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let (train, holdout) = split_holdout(&cropped, 0.25, 7)?;
    println!(
        "cropped to 12: {} train, {} holdout",
        train.len(),
        holdout.len()
    );

    let batches = pack_sequences(&cropped, 24, 8)?;
    for (i, b) in batches.iter().enumerate() {
        println!("batch {i}: lengths {:?}", b.lengths());
        for mode in [PackingMode::StrictReset, PackingMode::EosSeparator] {
            let layout = b.layout(mode);
            let n_targets = b.targets(mode).iter().flatten().count();
            println!(
                "  {mode:?}: positions {:?}, {n_targets} targets",
                layout.positions()
            );
        }
    }

    let mut bytes = Vec::new();
    write_batch_cache(&batches, &mut bytes).expect("in-memory write");
    let back = read_batch_cache(&mut bytes.as_slice())?;
    println!(
        "cache: {} bytes, round trip equal: {}",
        bytes.len(),
        back == batches
    );
    Ok(())
}
