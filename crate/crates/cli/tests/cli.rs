use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Output;

use serde_json::Value;

fn hyperstab(config: &Path, out: &Path) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_hyperstab"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .env_remove("HYPERSTAB_THREADS")
        .output()
        .unwrap()
}

fn config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, body).unwrap();
    p
}

fn run_dirs(out: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(out).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn listed(dir: &Path) -> BTreeSet<String> {
    fn walk(root: &Path, d: &Path, acc: &mut BTreeSet<String>) {
        for e in std::fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, acc);
            } else {
                acc.insert(p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/"));
            }
        }
    }
    let mut acc = BTreeSet::new();
    walk(dir, dir, &mut acc);
    acc.remove("manifest.json");
    acc
}

const SMALL: &str = "kernel_grid = [17, 17, 9]\nnm_grid = [17, 17]\n";

#[test]
fn validate_succeeds_on_the_benchmark() {
    let tmp = tempfile::tempdir().unwrap();
    let out = hyperstab(&config(tmp.path(), "command = \"validate\"\n[plant]\nkind = \"example\"\n"), &tmp.path().join("runs"));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let status: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(status["status"], "ok");
    let dirs = run_dirs(&tmp.path().join("runs"));
    assert_eq!(dirs.len(), 1);
    let m = manifest(&dirs[0]);
    assert_eq!(m["config"]["tol"], 1e-8);
    assert_eq!(m["config"]["plant"]["n"], 10);
}

#[test]
fn configuration_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    for body in [
        "command = \"solve-kernels\"\ntol = -1.0\n[plant]\nkind = \"example\"\n",
        "command = \"validate\"\nbogus = 1\n[plant]\nkind = \"example\"\n",
        "command = \"validate\"\n[plant]\nkind = \"example\"\nn = \"ten\"\n",
    ] {
        let out = hyperstab(&config(tmp.path(), body), &tmp.path().join("runs"));
        assert_eq!(out.status.code(), Some(2), "{body}");
        let err: Value = serde_json::from_slice(&out.stderr).unwrap();
        assert_eq!(err["exit_code"], 2);
    }
}

#[test]
fn zero_horizon_writes_only_the_initial_snapshot() {
    let tmp = tempfile::tempdir().unwrap();
    let body = format!("command = \"simulate\"\n{SMALL}[plant]\nkind = \"example\"\nn = 2\n[sim]\nt_end = 0.0\nnx = 32\n");
    let out = hyperstab(&config(tmp.path(), &body), &tmp.path().join("runs"));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = &run_dirs(&tmp.path().join("runs"))[0];
    let norms = std::fs::read_to_string(dir.join("trajectory/norms.csv")).unwrap();
    assert_eq!(norms.lines().count(), 2);
}

#[test]
fn blow_up_exits_with_four() {
    let tmp = tempfile::tempdir().unwrap();
    let body = "command = \"simulate\"\n[plant]\nkind = \"example\"\nn = 2\n[sim]\ncontroller = \"open\"\nnx = 32\nblow_up = 1.5\n";
    let out = hyperstab(&config(tmp.path(), body), &tmp.path().join("runs"));
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(&run_dirs(&tmp.path().join("runs"))[0]);
    assert_eq!(m["summary"]["exit_code"], 4);
}

#[test]
fn non_convergence_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let body = format!("command = \"solve-kernels\"\n{SMALL}max_iter = 2\n[plant]\nkind = \"example\"\n");
    let out = hyperstab(&config(tmp.path(), &body), &tmp.path().join("runs"));
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn reruns_are_byte_identical_and_fully_listed() {
    let tmp = tempfile::tempdir().unwrap();
    let body = format!(
        "command = \"reproduce-example\"\n{SMALL}n_list = [2, 3]\n[plant]\nkind = \"example\"\n[sim]\nt_end = 0.5\nnx = 32\nsave_dt = 0.25\n"
    );
    let cfg = config(tmp.path(), &body);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = hyperstab(&cfg, out);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (da, db) = (&run_dirs(&a)[0], &run_dirs(&b)[0]);
    let files = listed(da);
    let m = manifest(da);
    let in_manifest: BTreeSet<String> = m["files"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect();
    assert_eq!(files, in_manifest);
    assert!(files.contains("kernel_error.csv") && files.contains("n3/controls_compare.csv"));
    for f in files.iter().chain(std::iter::once(&"manifest.json".to_string())) {
        assert_eq!(std::fs::read(da.join(f)).unwrap(), std::fs::read(db.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), &format!("command = \"solve-kernels\"\n{SMALL}[plant]\nkind = \"example\"\n"));
    let mut hashes = Vec::new();
    for t in ["1", "3"] {
        let out = tmp.path().join(t);
        let o = std::process::Command::new(env!("CARGO_BIN_EXE_hyperstab"))
            .args(["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--threads", t])
            .output()
            .unwrap();
        assert_eq!(o.status.code(), Some(0));
        hashes.push(manifest(&run_dirs(&out)[0])["summary"].clone());
    }
    assert_eq!(hashes[0], hashes[1]);
}
