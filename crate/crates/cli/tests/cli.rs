use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn loopverify(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_loopverify"))
        .args(args)
        .output()
        .expect("spawn loopverify")
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

const SMALL: &[&str] = &["--frames", "600", "--window", "200", "--delta-t", "100", "--ir-grid", "10,20", "--ir-seeds", "2"];

#[test]
fn simulate_verify_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let res = tmp.path().join("res");
    let eval = tmp.path().join("eval");

    let mut args = vec!["simulate", "--out", s(&data)];
    args.extend_from_slice(SMALL);
    let out = loopverify(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["odometry.txt", "descriptors.txt", "ground_truth.txt", "registry.txt", "manifest.json"] {
        assert!(data.join(f).is_file(), "missing {f}");
    }

    let mut args = vec!["verify", "--dataset", s(&data), "--out", s(&res)];
    args.extend_from_slice(SMALL);
    let out = loopverify(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("rank 0"));
    for f in ["constraints.csv", "lineage.csv", "windows.csv", "top_hypotheses.csv", "model.bin"] {
        assert!(res.join(f).is_file(), "missing {f}");
    }

    let out = loopverify(&["evaluate", "--results", s(&res), "--dataset", s(&data), "--out", s(&eval)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("precision"));
    assert!(eval.join("pr.csv").is_file());
    assert!(eval.join("summary.json").is_file());
}

#[test]
fn missing_dataset_reports_category() {
    let tmp = tempfile::tempdir().unwrap();
    let out = loopverify(&[
        "verify",
        "--dataset",
        s(&tmp.path().join("nope")),
        "--out",
        s(&tmp.path().join("res")),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error[io]"), "{err}");
}

#[test]
fn invalid_override_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = loopverify(&["simulate", "--out", s(tmp.path()), "--window", "0"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[config]"));
}

#[test]
fn rerun_from_manifest_is_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let mut args = vec!["run", "--out", s(&a), "--nr-grid", "5"];
    args.extend_from_slice(SMALL);
    assert!(loopverify(&args).status.success());
    let manifest = a.join("manifest.json");
    let out = loopverify(&["run", "--out", s(&b), "--config", s(&manifest)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let mut files = Vec::new();
    collect(&a, &a, &mut files);
    assert!(!files.is_empty());
    for rel in files {
        let fa = fs::read(a.join(&rel)).unwrap();
        let fb = fs::read(b.join(&rel)).unwrap_or_default();
        assert!(fa == fb, "{} differs", rel.display());
    }
}

fn collect(root: &Path, dir: &Path, out: &mut Vec<std::path::PathBuf>) {
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            collect(root, &p, out);
        } else {
            out.push(p.strip_prefix(root).unwrap().to_path_buf());
        }
    }
}
