//! End-to-end runs of the `ltsoups` binary: artifacts, exit codes, grid
//! resumption and reports.

use std::path::Path;
use std::process::{Command, Output};

use ltsoups::cli::report::load_csv;
use ltsoups::cli::CSV_HEADER;
use ltsoups::nn::checkpoint;

const SMALL: [&str; 8] = [
    "--set",
    "data.n_max=120",
    "--set",
    "data.rho=12",
    "--set",
    "model.hidden=16",
    "--set",
    "train.epochs=2",
];

fn ltsoups(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ltsoups"))
        .args(SMALL)
        .args(args)
        .env_remove("LTSOUPS_SEED")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = ltsoups(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generate(dir: &Path) {
    ok(&["generate", "--out", s(dir)]);
}

#[test]
fn train_merge_soup_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    generate(d);
    for f in ["train.ltds", "val.ltds", "test.ltds", "theta0.ltwt"] {
        assert!(d.join(f).exists(), "{f}");
    }
    let (train, theta0, val) = (d.join("train.ltds"), d.join("theta0.ltwt"), d.join("val.ltds"));
    for rho in ["2", "4"] {
        let out = d.join(format!("r{rho}.ltwt"));
        ok(&["train", "--data", s(&train), "--init", s(&theta0), "--val", s(&val), "--rho", rho, "--out", s(&out)]);
        assert_eq!(checkpoint::load(&out).unwrap().meta.subset_rho, rho.parse::<f64>().unwrap());
    }
    let merged = d.join("merged.ltwt");
    ok(&[
        "merge", "--lambda", "0.5", "--theta0", s(&theta0), "--out", s(&merged),
        s(&d.join("r4.ltwt")), s(&d.join("r2.ltwt")),
    ]);
    // Inputs are reordered by subset ratio, so argument order does not matter.
    let swapped = d.join("swapped.ltwt");
    ok(&[
        "merge", "--lambda", "0.5", "--theta0", s(&theta0), "--out", s(&swapped),
        s(&d.join("r2.ltwt")), s(&d.join("r4.ltwt")),
    ]);
    assert_eq!(std::fs::read(&merged).unwrap(), std::fs::read(&swapped).unwrap());

    let art = d.join("art");
    ok(&[
        "soup", "--data", s(&train), "--init", s(&theta0), "--val", s(&val),
        "--out", s(&d.join("soup.ltwt")), "--artifacts", s(&art),
    ]);
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(art.join("manifest.json")).unwrap()).unwrap();
    assert!(!manifest["jobs"].as_array().unwrap().is_empty());

    let report = ok(&[
        "eval", "--model", s(&d.join("soup.ltwt")), "--test", s(&d.join("test.ltds")), "--train", s(&train),
        "--val", s(&val), "--reference", s(&theta0),
    ]);
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    let bal = v["bal_acc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&bal));
    assert!(v["weight_change"].as_f64().unwrap() > 0.0);
}

#[test]
fn baselines_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    generate(d);
    for name in ["full-ft", "linear-probe", "crt", "lora"] {
        let out = d.join(format!("{name}.ltwt"));
        ok(&[
            "baseline", name, "--data", s(&d.join("train.ltds")), "--init", s(&d.join("theta0.ltwt")), "--out", s(&out),
        ]);
        assert!(out.exists());
    }
    let out = ltsoups(&[
        "baseline", "lt-soups", "--data", s(&d.join("train.ltds")), "--init", s(&d.join("theta0.ltwt")),
        "--out", s(&d.join("x.ltwt")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(ltsoups(&["generate", "--out", s(d), "--set", "merge.lambda=1.5"]).status.code(), Some(2));
    assert_eq!(ltsoups(&["generate", "--out", s(d), "--set", "nope.key=1"]).status.code(), Some(2));
    assert_eq!(ltsoups(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(ltsoups(&["generate", "--out", s(d), "--set", "data.rho=1000"]).status.code(), Some(2));

    let missing = d.join("missing.ltds");
    let out = ltsoups(&["train", "--data", s(&missing), "--init", s(&missing), "--out", s(&d.join("o"))]);
    assert_eq!(out.status.code(), Some(4));

    generate(d);
    let garbage = d.join("garbage.ltwt");
    std::fs::write(&garbage, b"not a checkpoint").unwrap();
    let out = ltsoups(&["merge", "--uniform", "--out", s(&d.join("m.ltwt")), s(&garbage)]);
    assert_eq!(out.status.code(), Some(4));

    let out = ltsoups(&[
        "train", "--data", s(&d.join("train.ltds")), "--init", s(&d.join("theta0.ltwt")), "--out", s(&d.join("o.ltwt")),
        "--set", "train.lr_max=1e300", "--set", "train.warmup=0",
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn config_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("run.cfg");
    std::fs::write(&cfg, "# desk run\nrun.seed = 5\ndata.classes = 6\n").unwrap();
    let counts = |extra: &[&str], env: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_ltsoups"));
        c.args(["generate", "--out", s(&d.join("g")), "--config", s(&cfg)]).args(SMALL).args(extra);
        match env {
            Some(v) => c.env("LTSOUPS_SEED", v),
            None => c.env_remove("LTSOUPS_SEED"),
        };
        let out = c.output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(d.join("g/train.ltds")).unwrap()
    };
    let file = counts(&[], None);
    assert_eq!(file, counts(&["--seed", "5"], None));
    assert_eq!(file, counts(&["--seed", "5"], Some("8")));
    assert_ne!(file, counts(&[], Some("8")));
    assert_eq!(counts(&[], Some("8")), counts(&["--seed", "8"], None));

    std::fs::write(&cfg, "run.seed 5\n").unwrap();
    let out = ltsoups(&["generate", "--out", s(d), "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}

#[test]
fn grid_resumes_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let csv = d.join("grid.csv");
    let grid = [
        "grid", "--out", s(&csv), "--workers", "2",
        "--set", "grid.rho=10,20", "--set", "grid.eta=1,0.5", "--set", "grid.methods=linear-probe,full-ft",
    ];
    let first = ok(&grid);
    assert!(first.contains("8 rows written"), "{first}");
    let rows = load_csv(&csv).unwrap();
    assert_eq!(rows.len(), 8);
    assert!(std::fs::read_to_string(&csv).unwrap().starts_with(CSV_HEADER));

    let second = ok(&grid);
    assert!(second.contains("0 rows written, 8 already present"), "{second}");
    assert_eq!(load_csv(&csv).unwrap().len(), 8);

    let out_dir = d.join("report");
    ok(&["report", "--input", s(&csv), "--out-dir", s(&out_dir)]);
    for f in ["rows.csv", "cells.csv", "marginals.csv"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    let marginals = std::fs::read_to_string(out_dir.join("marginals.csv")).unwrap();
    // Two methods x two rho values, eta averaged out.
    assert_eq!(marginals.lines().count(), 1 + 4);
    ok(&["report", "--input", s(&csv), "--out-dir", s(&out_dir), "--format", "json"]);
    assert!(out_dir.join("report.json").exists());
}
