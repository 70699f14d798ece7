//! Runs the nine acceptance criteria at full size, one line per criterion.
//! Exits nonzero if any fails. Pass a criterion id to run only that one.

use std::process::ExitCode;

use qsdlab::acceptance::{run_all, run_criterion, Scale, CRITERIA};

fn main() -> ExitCode {
    let only: Vec<u8> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    println!("acceptance suite ({} criteria)", CRITERIA.len());
    let outcomes = if only.is_empty() {
        run_all(Scale::Full, |o| println!("{o}"))
    } else {
        only.iter()
            .filter_map(|&id| run_criterion(id, Scale::Full))
            .inspect(|o| println!("{o}"))
            .collect()
    };
    let failed: Vec<String> =
        outcomes.iter().filter(|o| !o.passed).map(|o| o.criterion.id.to_string()).collect();
    if failed.is_empty() {
        println!("all {} criteria passed", outcomes.len());
        ExitCode::SUCCESS
    } else {
        println!("failed: {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
