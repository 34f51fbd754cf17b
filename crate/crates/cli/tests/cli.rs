use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

fn sns(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sns")).args(args).current_dir(dir).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    std::fs::write(dir.join(name), text).unwrap();
    name.to_string()
}

#[test]
fn zero_horizon_writes_one_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "[grid]\nn = 16\n[time]\nT = 0\n");
    let out = sns(&["simulate", "--config", &cfg, "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let snaps: Vec<_> = std::fs::read_dir(dir.path().join("o/snapshots")).unwrap().collect();
    assert_eq!(snaps.len(), 1);
    let lines = std::fs::read_to_string(dir.path().join("o/diagnostics.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 1);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = sns(&["simulate", "--config", "missing.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.toml"));

    let cfg = write(dir.path(), "bad.toml", "[model]\ngamma = 3.5\n");
    let out = sns(&["simulate", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2") && err.contains("gamma must lie in (1,3)"), "{err}");

    let cfg = write(dir.path(), "unknown.toml", "[time]\nsteps = 3\n");
    assert_eq!(sns(&["simulate", "--config", &cfg], dir.path()).status.code(), Some(2));
}

#[test]
fn diagnostics_are_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "[grid]\nn = 32\n[time]\nT = 0.1\n");
    for out in ["a", "b"] {
        let o = sns(&["simulate", "--config", &cfg, "--seed", "11", "--out", out], dir.path());
        assert_eq!(o.status.code(), Some(0));
    }
    let c = sns(&["simulate", "--config", &cfg, "--seed", "12", "--out", "c"], dir.path());
    assert_eq!(c.status.code(), Some(0));
    let read = |d: &str| std::fs::read(dir.path().join(d).join("diagnostics.jsonl")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn norms_of_a_written_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "[grid]\nn = 64\n[time]\nT = 0\n[experiment]\ninitial = \"rest\"\n");
    assert_eq!(sns(&["simulate", "--config", &cfg, "--out", "o"], dir.path()).status.code(), Some(0));
    let out = sns(&["norms", "o/snapshots/snap_00000.snsf", "--norm", "l2"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    // ‖1‖_{L²} on a 2π box.
    let expected = (2.0 * std::f64::consts::PI).sqrt();
    let json: serde_json::Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    assert!((json["l2"]["density"].as_f64().unwrap() - expected).abs() < 1e-12);
    assert_eq!(json["l2"]["momentum"].as_f64().unwrap(), 0.0);

    let bad = sns(&["norms", "o/snapshots/snap_00000.snsf", "--norm", "w-3,5"], dir.path());
    assert_eq!(bad.status.code(), Some(2));
    std::fs::write(dir.path().join("junk.snsf"), b"SNSF\x01").unwrap();
    assert_eq!(sns(&["norms", "junk.snsf"], dir.path()).status.code(), Some(1));
}

#[test]
fn ensemble_and_stability_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "e.toml",
        "[time]\nT = 0.1\nsave_every = 2\n[experiment]\nkind = \"ensemble\"\nresolutions = [16, 32, 64]\n",
    );
    let out = sns(&["ensemble", "--config", &cfg, "--paths", "4", "--out", "e"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(dir.path().join("e/bounds_p1.json").exists());
    assert!(dir.path().join("e/n32/seed_3/summary.json").exists());

    let cfg = write(dir.path(), "s.toml", "[time]\nT = 0.2\n[experiment]\ninitial = \"plateau\"\n");
    let out = sns(&["stability", "--config", &cfg, "--out", "s"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let csv = std::fs::read_to_string(dir.path().join("s/convergence.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn verify_smoke_passes_within_a_minute() {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let out = sns(&["verify", "--scale", "smoke", "--out", "v"], dir.path());
    let elapsed = start.elapsed().as_secs_f64();
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{text}");
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 10, "{text}");
    assert!(elapsed < 60.0, "smoke verification took {elapsed:.1} s");
}
