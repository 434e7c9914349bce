//! Parse an A3M alignment, filter homologs, build the PSSM and score a few
//! substitutions against it.

use proust::scoring::{
    build_pssm, filter_homologs, parse_a3m, pssm_score, FilterOptions, VariantSpec,
};
use proust::Result;

const A3M: &str = "#A3M from a search
>query
MKTAYIAKQR
>h1
MKTAYIAKQR
>h2
MKSAYIgkAKQR
>h3
MRTAYLAKQK
>h4
MKTAWIAKER
>frag
----YIA---
";

fn main() -> Result<()> {
    let msa = parse_a3m(A3M)?;
    println!("{} homologs before filtering", msa.depth());
    let kept = filter_homologs(&msa, &FilterOptions::default())?;
    println!("{} kept at coverage > 0.5", kept.depth());

    let pssm = build_pssm(&kept, 0.1)?;
    println!(
        "column 2 (T) frequencies: T {:.3} S {:.3}",
        pssm.freq[2][16], pssm.freq[2][15]
    );
    for v in ["T3S", "T3W", "K2R:Q9E", "Y5W"] {
        let spec = VariantSpec::parse_substitutions(v)?;
        println!("{v:>8}: {:+.4} bits", pssm_score(&spec, &pssm)?);
    }
    Ok(())
}
