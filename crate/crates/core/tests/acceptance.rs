//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! Trains the correction network from scratch, so expect several minutes.

use std::process::ExitCode;
use std::time::Instant;

use cochlea_tl::harness::acceptance::{run_acceptance, AcceptanceConfig};

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("scratch directory");
    let cfg = AcceptanceConfig::new(dir.path().to_path_buf());
    let t0 = Instant::now();
    println!("acceptance: running 10 criteria");
    let results = run_acceptance(&cfg, |r| println!("{r}"));
    let failed: Vec<u8> = results.iter().filter(|r| !r.passed).map(|r| r.id).collect();
    println!(
        "acceptance: {} passed, {} failed in {:.0} s",
        results.len() - failed.len(),
        failed.len(),
        t0.elapsed().as_secs_f64()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failing criteria {failed:?}");
        ExitCode::FAILURE
    }
}
