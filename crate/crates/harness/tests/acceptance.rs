//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.
//!
//! Pass bars live in `eqkf_harness::checks::tol`. Criterion 10 drives the real `eqkf`
//! binary.

use std::path::Path;
use std::process::ExitCode;

use eqkf_harness::checks;

fn main() -> ExitCode {
    let exe = Path::new(env!("CARGO_BIN_EXE_eqkf"));
    let outcomes = checks::acceptance(Some(exe));
    for o in &outcomes {
        println!("{o}");
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!(
        "acceptance: {} passed, {failed} failed",
        outcomes.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
