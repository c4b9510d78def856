//! One PASS/FAIL line per acceptance criterion.
//!
//! Criterion 2 is a known failure: the closed-form escape probability at
//! t_pass = 0.9515, R = 0.85 is 0.4230, outside 0.43 ± 0.005, and no reading
//! of the formula reaches 0.43 at those inputs. It is reported red; the
//! binary fails if any other criterion fails, or if criterion 2 starts
//! passing.

use std::process::ExitCode;
use std::time::Instant;

use wgopo_core::config::RunConfig;
use wgopo_core::reproduce::{determinism, reproduce, summary_table, CriterionResult};

const KNOWN_FAILURES: &[u32] = &[2];

fn line(c: &CriterionResult) -> String {
    let verdict = if c.pass() { "PASS" } else { "FAIL" };
    let detail: Vec<String> = c
        .checks
        .iter()
        .map(|k| format!("{} = {:.6} ({} {})", k.quantity, k.computed, k.reference, k.tolerance))
        .collect();
    format!("criterion {:>2} {verdict}  {}: {}", c.id, c.title, detail.join("; "))
}

fn main() -> ExitCode {
    let cfg = RunConfig::default();
    let t = Instant::now();
    let first = match reproduce(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("reproduction failed: {e}");
            return ExitCode::FAILURE;
        }
    };
    let first_json = serde_json::to_string(&first).expect("serialisable");
    let second_json = reproduce(&cfg)
        .map(|r| serde_json::to_string(&r).expect("serialisable"))
        .unwrap_or_default();

    let mut criteria = first.criteria.clone();
    criteria.push(determinism(&first_json, &second_json));

    println!("{}", summary_table(&criteria));
    let mut ok = true;
    for c in &criteria {
        println!("{}", line(c));
        let expected_fail = KNOWN_FAILURES.contains(&c.id);
        if c.pass() == expected_fail {
            ok = false;
            if expected_fail {
                println!("criterion {:>2} passed but is listed as a known failure", c.id);
            }
        }
    }
    println!(
        "{} of {} criteria pass ({} known failure) in {:.1} s",
        criteria.iter().filter(|c| c.pass()).count(),
        criteria.len(),
        KNOWN_FAILURES.len(),
        t.elapsed().as_secs_f64()
    );
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
