use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn kfp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kfp")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn run_in(dir: &Path, verb: &str, extra: &[&str]) -> Output {
    let mut args = vec![verb, "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    kfp(&args)
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

const SMALL: &[&str] = &["--override", "domain.nx=16", "--override", "domain.kv=7", "--override", "time.steps=20"];

#[test]
fn verify_defaults_pass() {
    let t = tempfile::tempdir().unwrap();
    let out = run_in(t.path(), "verify", &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = String::from_utf8_lossy(&out.stdout);
    assert!(report.contains("r-quadratic-form") && !report.contains("FAIL"));
    assert_eq!(manifest(t.path())["status"], "ok");
    assert!(t.path().join("constants.json").exists());
}

#[test]
fn odd_grid_is_rejected() {
    let t = tempfile::tempdir().unwrap();
    let out = run_in(t.path(), "simulate", &["--override", "domain.nx=63"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("domain"));
}

#[test]
fn unknown_key_is_rejected() {
    let t = tempfile::tempdir().unwrap();
    let out = run_in(t.path(), "simulate", &["--override", "time.stepz=3"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn large_data_blows_up() {
    let t = tempfile::tempdir().unwrap();
    let out = run_in(t.path(), "simulate", &["--override", "initial.amplitude=1e3"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(manifest(t.path())["status"], "blow-up");
}

#[test]
fn overrides_reach_the_config() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("run.toml");
    fs::write(&cfg, "seed = 5\n[time]\nhorizon = 0.5\nsteps = 10\n").unwrap();
    let out_dir = t.path().join("out");
    let out = kfp(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--override", "time.steps=25", "--seed", "9"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(&out_dir);
    assert_eq!(m["seed"], 9);
    assert_eq!(m["config"]["time"]["steps"], 25);
    assert_eq!(m["config"]["time"]["horizon"], 0.5);
    let rows = fs::read_to_string(out_dir.join("trajectory.csv")).unwrap().lines().count();
    assert_eq!(rows, 27);
}

#[test]
fn reruns_are_byte_identical() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    let extra = [SMALL, &["--override", "particles.counts=[100]", "--override", "particles.replicates=3", "--seed", "4"]].concat();
    for d in [&a, &b] {
        assert_eq!(run_in(d, "particles", &extra).status.code(), Some(0));
    }
    let (ma, mb) = (manifest(&a), manifest(&b));
    assert_eq!(ma["artifacts"], mb["artifacts"]);
    for art in ma["artifacts"].as_array().unwrap() {
        let f = art["file"].as_str().unwrap();
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn compare_identical_runs_is_zero() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    for d in [&a, &b] {
        assert_eq!(run_in(d, "simulate", SMALL).status.code(), Some(0));
    }
    let rep = t.path().join("cmp");
    let out = kfp(&["compare", a.to_str().unwrap(), b.to_str().unwrap(), "--out", rep.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let cmp: serde_json::Value = serde_json::from_str(&fs::read_to_string(rep.join("compare.json")).unwrap()).unwrap();
    let traj = cmp.as_array().unwrap().iter().find(|f| f["file"] == "trajectory.csv").unwrap();
    for col in traj["columns"].as_array().unwrap() {
        assert_eq!(col["max_abs_diff_ab"], 0.0, "{col}");
    }
}

#[test]
fn compare_rejects_different_domains() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    run_in(&a, "simulate", SMALL);
    run_in(&b, "simulate", &[SMALL, &["--override", "domain.nx=32"]].concat());
    let out = kfp(&["compare", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("incompatible domains"));
}

#[test]
fn halving_dt_shows_first_order() {
    let t = tempfile::tempdir().unwrap();
    let dirs: Vec<_> = ["a", "b", "c"].iter().map(|n| t.path().join(n)).collect();
    for (d, steps) in dirs.iter().zip([50, 100, 200]) {
        let s = format!("time.steps={steps}");
        let extra = ["--override", "domain.nx=16", "--override", "domain.kv=7", "--override", &s, "--override", "initial.amplitude=0.2"];
        assert_eq!(run_in(d, "simulate", &extra).status.code(), Some(0));
    }
    let rep = t.path().join("cmp");
    let paths: Vec<&str> = dirs.iter().map(|d| d.to_str().unwrap()).collect();
    let out = kfp(&["compare", paths[0], paths[1], paths[2], "--out", rep.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let cmp: serde_json::Value = serde_json::from_str(&fs::read_to_string(rep.join("compare.json")).unwrap()).unwrap();
    let traj = cmp.as_array().unwrap().iter().find(|f| f["file"] == "trajectory.csv").unwrap();
    let col = traj["columns"].as_array().unwrap().iter().find(|c| c["column"] == "normY").unwrap();
    let p = col["observed_order"].as_f64().unwrap();
    assert!((p - 1.0).abs() < 0.1, "observed order {p}");
}
