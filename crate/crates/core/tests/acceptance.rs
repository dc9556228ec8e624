//! Acceptance criteria 1-9. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::collections::BTreeMap;
use std::process::ExitCode;

use quickdetect::verify::{self, CheckResult, Profile};

const SEED: u64 = 1;

fn main() -> ExitCode {
    let full = verify::run(Profile::Full, SEED);
    let mut by_criterion: BTreeMap<u8, Vec<&CheckResult>> = BTreeMap::new();
    for c in &full.checks {
        by_criterion.entry(c.criterion).or_default().push(c);
    }

    let mut all_passed = true;
    for criterion in 1..=8u8 {
        let checks = by_criterion.get(&criterion).map(Vec::as_slice).unwrap_or(&[]);
        let passed = !checks.is_empty() && checks.iter().all(|c| c.passed);
        all_passed &= passed;
        println!("criterion {criterion}: {} ({} checks)", verdict(passed), checks.len());
        for c in checks.iter().filter(|c| !c.passed) {
            println!("    {} {}", c.id, c.detail);
        }
    }

    let (single, multi) = (quick_report(1), quick_report(4));
    let identical = single == multi;
    all_passed &= identical;
    println!(
        "criterion 9: {} (quick report with 1 and 4 threads, {} bytes, identical: {identical})",
        verdict(identical),
        single.len()
    );

    if all_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn verdict(passed: bool) -> &'static str {
    if passed {
        "PASS"
    } else {
        "FAIL"
    }
}

fn quick_report(threads: usize) -> String {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool")
        .install(|| verify::run(Profile::Quick, SEED).to_json_lines())
}
