//! Runs the finite-difference gradient suite for a few seeds and prints one
//! line per check.

use std::time::Instant;

use dpsnet::gradcheck::suite;

fn main() -> dpsnet::Result<()> {
    let start = Instant::now();
    let mut failed = 0;
    for seed in 0..5 {
        for report in suite::run(seed)? {
            if !report.passed() {
                failed += 1;
            }
            println!("seed {seed}: {report}");
        }
    }
    let full = suite::full_network(0, 20, 1e-3)?;
    println!("{full}");
    println!("{failed} failures in {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
