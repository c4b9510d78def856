use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn wgopo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wgopo"))
        .args(args)
        .env_remove("WGOPO_CONFIG")
        .output()
        .expect("spawn wgopo")
}

fn ok(args: &[&str]) -> Output {
    let out = wgopo(args);
    assert!(
        out.status.success(),
        "wgopo {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn spectrum_has_cluster_at_filter() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("a");
    ok(&["spectrum", "--band", "1500", "1625", "--out", path(&out)]);
    let clusters = std::fs::read_to_string(out.join("clusters.csv")).unwrap();
    let hit = clusters.lines().skip(1).any(|l| {
        let f: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
        f[0] <= 1560.0 && 1560.0 <= f[1]
    });
    assert!(hit, "no cluster spans 1560 nm:\n{clusters}");
    for f in ["spectrum.csv", "spectrum.svg", "manifest.json", "config.toml"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
}

#[test]
fn spectrum_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["spectrum", "--out", path(&a)]);
    ok(&["spectrum", "--out", path(&b)]);
    let read = |d: &Path| std::fs::read(d.join("spectrum.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn band_outside_sellmeier_range_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let out = wgopo(&["spectrum", "--band", "1500", "6000", "--out", path(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("valid range"));
}

#[test]
fn unknown_override_and_subcommand_exit_1() {
    assert_eq!(wgopo(&["budget", "--set", "nope.key=1"]).status.code(), Some(1));
    assert_eq!(wgopo(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(wgopo(&["--help"]).status.code(), Some(0));
}

#[test]
fn simulate_same_seed_same_bytes() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        ok(&["simulate", "--seed", "7", "--duration", "5", "--out", path(d)]);
    }
    for f in ["ch1.bin", "ch2.bin"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
    }
    let m = json(&a.join("manifest.json"));
    assert_eq!(m["seed"], 7);
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(m["command"], "simulate");
}

#[test]
fn simulate_zero_duration_writes_empty_files() {
    let tmp = TempDir::new().unwrap();
    ok(&["simulate", "--duration", "0", "--format", "csv", "--out", path(tmp.path())]);
    let body = std::fs::read_to_string(tmp.path().join("ch1.csv")).unwrap();
    assert!(body.lines().skip(1).all(|l| l.trim().is_empty()), "{body}");
    assert_eq!(wgopo(&["simulate", "--duration", "-1"]).status.code(), Some(1));
}

#[test]
fn simulated_singles_match_budget() {
    let tmp = TempDir::new().unwrap();
    let (sim, bud) = (tmp.path().join("sim"), tmp.path().join("bud"));
    ok(&["simulate", "--duration", "100", "--out", path(&sim)]);
    ok(&["budget", "--out", path(&bud)]);
    let predicted = json(&bud.join("budget.json"))["rates"]["singles"][0].as_f64().unwrap() * 100.0;
    let m = json(&sim.join("manifest.json"));
    let counted = m["details"]["counts"]["singles"][0].as_f64().unwrap();
    assert!(
        (counted - predicted).abs() < 3.0 * predicted.sqrt(),
        "counted {counted}, predicted {predicted:.0}"
    );
}

#[test]
fn analyze_g2_recovers_linewidth() {
    let tmp = TempDir::new().unwrap();
    let sim = tmp.path().join("sim");
    let an = tmp.path().join("an");
    ok(&["simulate", "--duration", "100", "--out", path(&sim)]);
    ok(&[
        "analyze",
        "g2",
        path(&sim.join("ch1.bin")),
        path(&sim.join("ch2.bin")),
        "--out",
        path(&an),
    ]);
    let fit = json(&an.join("g2_fit.json"));
    let dnu = fit["delta_nu_mhz"].as_f64().unwrap();
    assert!((105.0..=130.0).contains(&dnu), "Δν = {dnu}");
    assert!(an.join("g2_histogram.svg").exists());
}

#[test]
fn analyze_rejects_malformed_input() {
    let tmp = TempDir::new().unwrap();
    let csv = tmp.path().join("bad.csv");
    std::fs::write(&csv, "time_ps,channel\nnot-a-number,1\n").unwrap();
    let bin = tmp.path().join("bad.bin");
    std::fs::write(&bin, [1u8, 2, 3]).unwrap();
    for f in [&csv, &bin] {
        let out = wgopo(&["analyze", "g2", path(f), "--out", path(&tmp.path().join("o"))]);
        assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn franson_scan_round_trip() {
    let tmp = TempDir::new().unwrap();
    let scan = tmp.path().join("scan");
    let an = tmp.path().join("an");
    ok(&["simulate", "--franson-scan", "--set", "franson.integration_s=20", "--out", path(&scan)]);
    ok(&["analyze", "franson", path(&scan), "--out", path(&an)]);
    let report = std::fs::read_to_string(an.join("franson_report.txt")).unwrap();
    assert!(report.contains("Bell bound"), "{report}");
    assert!(report.contains("violated"), "{report}");
    assert!(an.join("fringe.csv").exists());
}

#[test]
fn tune_and_lock_write_artifacts() {
    let tmp = TempDir::new().unwrap();
    let out = ok(&["tune", "--out", path(&tmp.path().join("t"))]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("mode-hop"));
    ok(&["lock", "--out", path(&tmp.path().join("l"))]);
    assert!(tmp.path().join("l/lock.csv").exists());
    assert!(tmp.path().join("t/resonances.csv").exists());
}

#[test]
fn reproduce_reports_failing_criteria() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("rp");
    let res = wgopo(&[
        "reproduce-paper",
        "--set",
        "analysis.g2_trials=4",
        "--set",
        "franson.integration_s=5",
        "--set",
        "simulation.duration_s=20",
        "--out",
        path(&out),
    ]);
    // The escape-probability criterion never passes, so exit is 2.
    assert_eq!(res.status.code(), Some(2));
    let criteria = json(&out.join("criteria.json"));
    let ids: Vec<u64> = criteria
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["id"].as_u64().unwrap())
        .collect();
    assert_eq!(ids, (1..=10).collect::<Vec<_>>());
    assert!(out.join("summary.txt").exists());
    assert!(out.join("manifest.json").exists());
}
