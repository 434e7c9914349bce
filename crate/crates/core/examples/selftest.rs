//! Run the fast acceptance criteria in process. Pass ids to pick others,
//! e.g. `cargo run --example selftest -- 2 3 5`.

use proust::run::criteria;

fn main() -> proust::Result<()> {
    let ids: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let ids = if ids.is_empty() {
        vec![8, 10, 11, 12]
    } else {
        ids
    };
    let reports = criteria::run_all(&ids, |r| println!("{}", r.line()))?;
    let failed = reports.iter().filter(|r| !r.passed).count();
    println!("{} of {} passed", reports.len() - failed, reports.len());
    Ok(())
}
