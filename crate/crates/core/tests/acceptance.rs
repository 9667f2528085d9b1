//! Acceptance criteria 1–9, one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so that the table is always printed;
//! the process exits nonzero when any criterion or runtime budget fails.

use std::collections::BTreeMap;
use std::time::Instant;

use linetension::acceptance::{run_suite, AcceptanceOptions, CheckResult, Suite, Timing};

const TITLES: [&str; 9] = [
    "isotropic self-energy oracle (1%, N=256, <1 s each)",
    "quadratic homogeneity (1e-8, 20 random pairs)",
    "growth bounds and envelope (ball 3 x 642 directions, gain >= 40%)",
    "linear cell asymptotics (h/R=8, <=1.02 psi0, monotone gap, k=5 to 1e-9)",
    "nonlinear cell identities (1e-8, monotone in lambda, nested gap)",
    "kernel-field estimates (<20% variation, circulation 1e-3)",
    "rigidity diagnostic (max/min < 3)",
    "gamma-scan trend (nonincreasing gaps, ratio in [0.5,1.5], slope in [0.8,1.2])",
    "determinism (byte-identical payloads)",
];

fn main() {
    let opts = AcceptanceOptions::default();
    let suites = [Suite::Selfenergy, Suite::Envelope, Suite::Cell, Suite::Nonlinear, Suite::Kernel, Suite::Rigidity, Suite::Gamma, Suite::Determinism];
    let start = Instant::now();
    let mut checks: Vec<CheckResult> = Vec::new();
    let mut timings: Vec<Timing> = Vec::new();
    for s in suites {
        let run = run_suite(s, &opts);
        checks.extend(run.report.checks);
        timings.extend(run.timings);
    }
    let mut by_criterion: BTreeMap<u8, Vec<&CheckResult>> = BTreeMap::new();
    for c in &checks {
        by_criterion.entry(c.criterion).or_default().push(c);
    }
    let mut all_ok = true;
    println!("acceptance criteria");
    for k in 1..=9u8 {
        let list = by_criterion.get(&k).cloned().unwrap_or_default();
        let slow: Vec<&Timing> = timings.iter().filter(|t| t.criterion == k && !t.within_budget()).collect();
        let ok = !list.is_empty() && list.iter().all(|c| c.passed) && slow.is_empty();
        all_ok &= ok;
        println!("{} criterion {k}: {}", if ok { "PASS" } else { "FAIL" }, TITLES[k as usize - 1]);
        for c in list {
            println!("    {c}");
        }
        for t in timings.iter().filter(|t| t.criterion == k) {
            println!(
                "    [{}] runtime {}: {:.2} s (budget {} s)",
                if t.within_budget() { "PASS" } else { "FAIL" },
                t.label,
                t.seconds,
                t.budget
            );
        }
    }
    println!("total {:.1} s", start.elapsed().as_secs_f64());
    if !all_ok {
        println!("acceptance: FAILED");
        std::process::exit(1);
    }
    println!("acceptance: ok");
}
