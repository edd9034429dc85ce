use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn coloc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coloc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn scenario(name: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "scenarios", name].iter().collect();
    p.display().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run(dir: &Path, policy: &str, extra: &[&str]) -> Output {
    let path = scenario("mixed_nlos.json");
    let out = dir.join(policy);
    let mut args = vec!["run", "--scenario", &path, "--policy", policy, "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    coloc(&args)
}

#[test]
fn run_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), "learned", &["--episodes", "20", "--seed", "4", "--threshold-m", "0.5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["episodes.csv", "summary.json", "scenario_resolved.json"] {
        assert!(dir.path().join("learned").join(f).is_file(), "{f}");
    }
    let csv = std::fs::read_to_string(dir.path().join("learned/episodes.csv")).unwrap();
    assert_eq!(csv.lines().count(), 21);
    let resolved = std::fs::read_to_string(dir.path().join("learned/scenario_resolved.json")).unwrap();
    assert!(resolved.contains("\"error_threshold_m\": 0.5"));
    assert!(String::from_utf8_lossy(&o.stdout).contains("learned seed 4"));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = run(d.path(), "learned", &["--episodes", "60", "--seed", "7"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["episodes.csv", "summary.json"] {
        assert_eq!(
            std::fs::read(a.path().join("learned").join(f)).unwrap(),
            std::fs::read(b.path().join("learned").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn replicates_get_subdirectories() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), "random", &["--episodes", "10", "--seed", "3", "--replicates", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("random/rep_0/summary.json").is_file());
    assert!(dir.path().join("random/rep_1/summary.json").is_file());
    let s = String::from_utf8_lossy(&o.stdout);
    assert!(s.contains("seed 3") && s.contains("seed 4"), "{s}");
}

#[test]
fn compare_flags_a_winner() {
    let dir = tempfile::tempdir().unwrap();
    for p in ["learned", "fixed-toa"] {
        let o = run(dir.path(), p, &["--episodes", "2000", "--seed", "1"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let table = dir.path().join("cmp.csv");
    let o = coloc(&[
        "compare",
        "--inputs",
        dir.path().join("learned").to_str().unwrap(),
        dir.path().join("fixed-toa").to_str().unwrap(),
        "--out",
        table.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(&table).unwrap();
    assert!(csv.starts_with("policy,mean_rmse_m,reward_rate,mean_crlb_bound_m,crlb_gap_m,winner\n"));
    assert!(csv.lines().any(|l| l.starts_with("learned,") && l.ends_with(",true")), "{csv}");
    assert!(String::from_utf8_lossy(&o.stdout).contains("winner: learned"));
}

#[test]
fn compare_needs_two_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), "fixed-rss", &["--episodes", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = coloc(&[
        "compare",
        "--inputs",
        dir.path().join("fixed-rss").to_str().unwrap(),
        "--out",
        dir.path().join("c.csv").to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("at least two"), "{}", stderr(&o));
}

#[test]
fn missing_scenario_fails_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = coloc(&[
        "run",
        "--scenario",
        "/no/such/world.json",
        "--policy",
        "learned",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("/no/such/world.json"), "{}", stderr(&o));
}

#[test]
fn malformed_scenario_fails() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"nodes": [], "comm_range_m": 10, "carrier_frequency_hz": 1e9}"#).unwrap();
    let o = coloc(&["run", "--scenario", bad.to_str().unwrap(), "--policy", "learned"]);
    assert!(!o.status.success());
    assert!(!stderr(&o).is_empty());
}

#[test]
fn unknown_policy_fails() {
    let o = coloc(&["run", "--scenario", &scenario("noiseless.json"), "--policy", "greedy"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("unknown policy 'greedy'"), "{}", stderr(&o));
}
