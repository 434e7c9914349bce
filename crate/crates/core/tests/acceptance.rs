//! One PASS/FAIL line per acceptance criterion. Pass criterion ids as
//! arguments to run a subset: `cargo test --test acceptance -- 3 9`.
//! The process fails if any criterion fails, except those listed in
//! `criteria::KNOWN_UNATTAINABLE`, which are reported as expected failures.

use std::process::ExitCode;

use proust::run::criteria;

fn main() -> ExitCode {
    // cargo passes its own flags (e.g. --quiet); keep only numbers
    let mut ids: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    if ids.is_empty() {
        ids = (1..=12).collect();
    }
    println!("acceptance: {} criteria", ids.len());
    let reports = match criteria::run_all(&ids, |r| println!("{}", r.line())) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    let passed = reports.iter().filter(|r| r.passed).count();
    let expected = reports.iter().filter(|r| r.expected_failure()).count();
    let unexpected = reports.len() - passed - expected;
    println!("{passed} passed, {expected} expected failure(s), {unexpected} unexpected failure(s)");
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
