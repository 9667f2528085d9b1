//! Runs one bundled acceptance suite (default `identities`) and prints its table.

use linetension::acceptance::{run_suite, AcceptanceOptions, Suite};

fn main() -> linetension::Result<()> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "identities".into());
    let run = run_suite(name.parse::<Suite>()?, &AcceptanceOptions::default());
    for c in &run.report.checks {
        println!("{c}");
    }
    for t in &run.timings {
        println!("  {}: {:.2} s", t.label, t.seconds);
    }
    println!("suite {}: {}", run.report.suite, if run.report.passed { "passed" } else { "FAILED" });
    Ok(())
}
