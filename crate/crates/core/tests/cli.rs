use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_flatstrip"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn toml_files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    v.sort();
    v
}

fn run(sub: &str, cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .arg(sub)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .arg("--quiet")
        .args(extra)
        .output()
        .unwrap()
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

/// Hash of every file under `dir`, in path order.
fn tree_hash(dir: &Path) -> String {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push(p);
            }
        }
    }
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        h.update(f.strip_prefix(dir).unwrap().to_string_lossy().as_bytes());
        h.update(fs::read(&f).unwrap());
    }
    format!("{:x}", h.finalize())
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn example_configs_validate() {
    let files = toml_files(&configs());
    assert!(files.len() >= 8);
    for f in files {
        let out = bin().arg("validate").arg("--config").arg(&f).output().unwrap();
        assert_eq!(out.status.code(), Some(0), "{}: {}", f.display(), String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn invalid_fixtures_fail_with_named_stage() {
    let files = toml_files(&configs().join("invalid"));
    assert!(files.len() >= 6);
    for f in files {
        let out = bin().arg("validate").arg("--config").arg(&f).output().unwrap();
        let err = String::from_utf8_lossy(&out.stderr);
        assert_eq!(out.status.code(), Some(2), "{}", f.display());
        assert!(err.contains("config error in `"), "{}: {err}", f.display());
    }
}

#[test]
fn flat_curvature_report_is_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run("curvature", &configs().join("curvature_flat.toml"), tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(tmp.path());
    assert_eq!(r["status"], "ok");
    assert_eq!(r["result"]["max_k_perp"].as_f64().unwrap(), 0.0);
    let csv = fs::read_to_string(tmp.path().join("series/curvature.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# "));
    assert!(lines.next().unwrap().starts_with("x,G,"));
    for l in lines {
        let cells: Vec<f64> = l.split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(cells[1], 1.0);
        assert!(cells[2..].iter().all(|v| *v == 0.0));
    }
    assert!(fs::read_to_string(tmp.path().join("summary.txt")).unwrap().contains("status: ok"));
}

#[test]
fn decay_report_embeds_certificate() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run("decay", &configs().join("decay_power.toml"), tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(tmp.path());
    let d = &r["result"]["report"];
    for key in ["m", "regime", "Q_min", "fit_x", "fit_phi", "witness"] {
        assert!(!d[key].is_null(), "{key}");
    }
    assert!(d["Q_min"].as_f64().unwrap().is_finite());
    assert_eq!(r["result"]["doubling"]["stable"], true);
}

#[test]
fn pressure_gap_certificate_is_positive() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run("pressure-gap", &configs().join("pressure_gap.toml"), tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(tmp.path());
    let c = &r["result"]["certificate"];
    assert!(c["gap"].as_f64().unwrap() > 0.0);
    assert!(c["model_hash"].as_str().unwrap().len() >= 16);
    let grid = r["result"]["grid_search"]["gap"].as_f64().unwrap();
    assert!((grid - c["gap"].as_f64().unwrap()).abs() < 1e-10);
}

#[test]
fn identical_runs_identical_files() {
    let cfg = configs().join("key_inequality.toml");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    assert_eq!(run("key-inequality", &cfg, a.path(), &["--jobs", "1"]).status.code(), Some(0));
    assert_eq!(run("key-inequality", &cfg, b.path(), &["--jobs", "4"]).status.code(), Some(0));
    assert_eq!(tree_hash(a.path()), tree_hash(b.path()));
    assert_eq!(run("key-inequality", &cfg, c.path(), &["--seed", "8"]).status.code(), Some(0));
    assert_ne!(tree_hash(a.path()), tree_hash(c.path()));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    // Subcommand and config disagree.
    let out = run("shadow", &configs().join("decay_power.toml"), tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`cli`"));
    // Missing file.
    let out = run("decay", &tmp.path().join("nope.toml"), tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(2));

    let base = fs::read_to_string(configs().join("decay_power.toml")).unwrap();
    let strict = write(tmp.path(), "strict.toml", &format!("{base}q_limit = 1.0\n"));
    let out = run("decay", &strict, &tmp.path().join("strict"), &[]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(report(&tmp.path().join("strict"))["status"], "bound_violation");

    let ric = fs::read_to_string(configs().join("riccati_power.toml")).unwrap();
    let tight = write(tmp.path(), "tight.toml", &format!("{ric}max_ratio = 1.0\n"));
    assert_eq!(run("riccati", &tight, &tmp.path().join("tight"), &[]).status.code(), Some(4));

    let pg = fs::read_to_string(configs().join("pressure_gap.toml"))
        .unwrap()
        .replace("escape_t_list = [400.0, 800.0]", "escape_t_list = [2.0]");
    let short = write(tmp.path(), "short.toml", &pg);
    let out = run("pressure-gap", &short, &tmp.path().join("short"), &[]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`escape`"));
}

#[test]
fn outside_region_issues_no_certificate() {
    let tmp = tempfile::tempdir().unwrap();
    let pg = fs::read_to_string(configs().join("pressure_gap.toml"))
        .unwrap()
        .replace("a = 1.5", "a = 0.5")
        .replace("b = 0.7", "b = 0.5");
    let cfg = write(tmp.path(), "outside.toml", &pg);
    let out = run("pressure-gap", &cfg, &tmp.path().join("o"), &[]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&tmp.path().join("o"));
    assert_eq!(r["result"]["region"], "Outside");
    assert!(r["result"]["certificate"].is_null());
}
