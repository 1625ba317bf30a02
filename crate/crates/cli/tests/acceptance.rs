//! Acceptance criteria 1 to 10 at their stated budgets. Prints one line per
//! criterion and exits nonzero if any fails.
//!
//! `ACCEPTANCE_SCALE` multiplies every trial budget (default 1).

use std::time::Instant;

use bandit_lab::verify::{run_suite, Suite, VerifyOptions};

fn main() {
    let scale = std::env::var("ACCEPTANCE_SCALE")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(1.0);
    let parallelism = std::thread::available_parallelism().map_or(1, |n| n.get());
    let opts = VerifyOptions {
        scale,
        seed: 1,
        parallelism,
    };
    let mut failed = Vec::new();
    for (i, suite) in Suite::ALL.into_iter().enumerate() {
        let t0 = Instant::now();
        let line = match run_suite(suite, &opts) {
            Ok(checks) => {
                let pass = checks.iter().all(|c| c.pass);
                let parts: Vec<String> = checks
                    .iter()
                    .map(|c| {
                        let obs = c.observed.map_or("undefined".to_string(), num);
                        let mark = if c.pass { "ok" } else { "FAIL" };
                        format!("{} {obs} {} {} {mark}", c.criterion, c.relation.symbol(), num(c.threshold))
                    })
                    .collect();
                if !pass {
                    failed.push(i + 1);
                }
                format!(
                    "criterion {:>2} {:<18} {} [{:.1}s] {}",
                    i + 1,
                    suite.name(),
                    if pass { "PASS" } else { "FAIL" },
                    t0.elapsed().as_secs_f64(),
                    parts.join("; ")
                )
            }
            Err(e) => {
                failed.push(i + 1);
                format!("criterion {:>2} {:<18} FAIL error: {e}", i + 1, suite.name())
            }
        };
        println!("{line}");
    }
    if failed.is_empty() {
        println!("acceptance: all 10 criteria pass");
    } else {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}

fn num(v: f64) -> String {
    if v != 0.0 && v.abs() < 1e-3 {
        format!("{v:.3e}")
    } else {
        format!("{v:.6}")
    }
}
