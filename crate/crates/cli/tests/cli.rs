//! End-to-end tests of the `vdr` binary: exit codes, artifact layout,
//! manifest replay, and determinism across worker counts.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn vdr() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vdr"))
}

fn run(args: &[&str]) -> Output {
    vdr().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Deterministic little trial-sequence generator (integer categories).
fn write_trials(path: &Path, autocorrelated: bool) {
    let mut state = 0x12345678u64;
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 33) as f64 / (1u64 << 31) as f64
    };
    let mut csv = String::from("trial,stimulus,response\n");
    let mut prev = 3.0f64;
    for t in 0..800 {
        let stim = 1 + (t % 4);
        let fresh = stim as f64 + (next() * 4.0 - 2.0).round() + 1.0;
        let resp = if autocorrelated {
            prev = (0.9 * prev + 0.1 * fresh).clamp(1.0, 7.0);
            (prev * 10.0).round() / 10.0
        } else {
            fresh.clamp(1.0, 7.0)
        };
        csv.push_str(&format!("{},{},{}\n", t + 1, stim, resp));
    }
    fs::write(path, csv).unwrap();
}

fn simulate_into(dir: &Path, seed: &str) -> PathBuf {
    let out = run(&[
        "simulate", "--n", "4", "--m", "7", "--tps", "300", "--nsim", "1", "--seed", seed,
        "--out", dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    dir.join("sim_000.csv")
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&run(&["no-such-command"])), 2);
    assert_eq!(code(&run(&[])), 2);
    // replay without a manifest is a usage-shaped input error
    assert_ne!(code(&run(&["run"])), 0);
}

#[test]
fn parse_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "not a count matrix\n").unwrap();
    let out = run(&[
        "fit",
        bad.to_str().unwrap(),
        "--class",
        "sdt-ev",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));

    let missing = dir.path().join("missing.csv");
    let out = run(&[
        "diagnose",
        missing.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3);
}

#[test]
fn infeasible_specs_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let sim = tempfile::tempdir().unwrap();
    let out = run(&[
        "simulate", "--n", "3", "--m", "5", "--tps", "100", "--nsim", "1", "--seed", "1",
        "--out", sim.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    // 3 x 5 data: 12 degrees of freedom cannot carry the 16-parameter mixture
    let out = run(&[
        "fit",
        sim.path().join("sim_000.csv").to_str().unwrap(),
        "--class",
        "vdr",
        "--rules",
        "1,2,3",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    assert!(stderr(&out).contains("infeasible"));
}

#[test]
fn failed_screening_exits_6_and_force_proceeds() {
    let dir = tempfile::tempdir().unwrap();
    let trials = dir.path().join("trials.csv");
    write_trials(&trials, true);
    let out = run(&[
        "pipeline",
        trials.to_str().unwrap(),
        "--out",
        dir.path().join("p1").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 6, "{}", stderr(&out));
    assert!(stderr(&out).contains("screening failed"));

    // forcing past the screen reaches the fitting stage
    let out = run(&[
        "pipeline",
        trials.to_str().unwrap(),
        "--force",
        "--bins",
        "5",
        "--steps",
        "200",
        "--starts",
        "2",
        "--tol",
        "1e-2",
        "--seed",
        "3",
        "--out",
        dir.path().join("p2").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(dir.path().join("p2/selection.json").exists());
    assert!(dir.path().join("p2/selection.md").exists());
}

#[test]
fn diagnose_and_bin_write_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let trials = dir.path().join("trials.csv");
    write_trials(&trials, false);
    let out = run(&[
        "diagnose",
        trials.to_str().unwrap(),
        "--max-lag",
        "6",
        "--out",
        dir.path().join("d").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let pacf = fs::read_to_string(dir.path().join("d/pacf.csv")).unwrap();
    assert!(pacf.starts_with("lag,pacf,cl95\n"));
    assert_eq!(pacf.lines().filter(|l| !l.starts_with(['l', '#'])).count(), 6);

    let out = run(&[
        "bin",
        trials.to_str().unwrap(),
        "--bins",
        "10",
        "--out",
        dir.path().join("b").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let binned = fs::read_to_string(dir.path().join("b/binned.csv")).unwrap();
    assert!(binned.starts_with("# N=4 M=10"));
}

#[test]
fn fit_and_compare_round_trip() {
    let sim = tempfile::tempdir().unwrap();
    let data = simulate_into(sim.path(), "7");
    let fit_args = |class: &str, out: &Path| {
        vec![
            "fit".to_string(),
            data.to_str().unwrap().to_string(),
            "--class".into(),
            class.into(),
            "--steps".into(),
            "1500".into(),
            "--starts".into(),
            "2".into(),
            "--seed".into(),
            "5".into(),
            "--out".into(),
            out.to_str().unwrap().to_string(),
        ]
    };
    let fa = tempfile::tempdir().unwrap();
    let fb = tempfile::tempdir().unwrap();
    let out = vdr().args(fit_args("sdt-ev", fa.path())).output().unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = vdr().args(fit_args("sdt-uv", fb.path())).output().unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let cmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "compare",
        fa.path().join("fit.json").to_str().unwrap(),
        fb.path().join("fit.json").to_str().unwrap(),
        "--out",
        cmp.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = fs::read_to_string(cmp.path().join("compare.txt")).unwrap();
    assert!(report.contains("AICc"));

    // comparing fits of different data is rejected
    let sim2 = tempfile::tempdir().unwrap();
    let data2 = simulate_into(sim2.path(), "8");
    let fc = tempfile::tempdir().unwrap();
    let out = vdr()
        .args([
            "fit",
            data2.to_str().unwrap(),
            "--class",
            "sdt-ev",
            "--steps",
            "1500",
            "--starts",
            "2",
            "--out",
            fc.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = run(&[
        "compare",
        fa.path().join("fit.json").to_str().unwrap(),
        fc.path().join("fit.json").to_str().unwrap(),
        "--out",
        cmp.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("different data"));
}

#[test]
fn artifacts_embed_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = simulate_into(dir.path(), "9");
    let csv = fs::read_to_string(csv_path).unwrap();
    let footer = csv.lines().last().unwrap();
    assert!(footer.starts_with("# seed=9 manifest="));
    assert!(footer.contains("version="));
    let sidecar: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("sim_000.json")).unwrap())
            .unwrap();
    assert_eq!(sidecar["provenance"]["seed"], 9);
    assert!(sidecar["provenance"]["manifest_digest"].is_string());
    assert!(sidecar["log_l_g"].as_f64().unwrap() < 0.0);
}

/// The binned/simulated CSV a command writes is accepted back by commands
/// that read count matrices, despite the provenance footer.
#[test]
fn outputs_are_valid_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_into(dir.path(), "4");
    let out = run(&[
        "pipeline",
        data.to_str().unwrap(),
        "--steps",
        "200",
        "--starts",
        "2",
        "--tol",
        "1e-2",
        "--seed",
        "2",
        "--out",
        dir.path().join("p").to_str().unwrap(),
    ]);
    // pre-tabulated counts skip screening entirely
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let selection: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("p/selection.json")).unwrap())
            .unwrap();
    assert!(selection["report"]["screened"].is_null());
}

#[test]
fn manifest_replay_is_byte_identical_for_any_job_count() {
    let base = tempfile::tempdir().unwrap();
    let a = base.path().join("a");
    let b = base.path().join("b");
    let c = base.path().join("c");
    let out = run(&[
        "simulate", "--n", "4", "--m", "7", "--tps", "250", "--nsim", "2", "--seed", "21",
        "--jobs", "1", "--out", a.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for (dir, jobs) in [(&b, "4"), (&c, "2")] {
        let out = run(&[
            "run",
            "--manifest",
            a.join("manifest.json").to_str().unwrap(),
            "--jobs",
            jobs,
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        for name in ["manifest.json", "sim_000.csv", "sim_000.json", "sim_001.csv"] {
            let want = fs::read(a.join(name)).unwrap();
            let got = fs::read(dir.join(name)).unwrap();
            assert_eq!(want, got, "{name} differs under --jobs {jobs}");
        }
    }
}

#[test]
fn jump_demo_reports_step_size_changes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "jump-demo",
        "--points",
        "40",
        "--tol",
        "1e-3",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let sweep = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(
        sweep.lines().filter(|l| !l.starts_with(['p', '#'])).count(),
        40
    );
    let jumps: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("jumps.json")).unwrap()).unwrap();
    assert!(jumps["events"].is_array());
}
