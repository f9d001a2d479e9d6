use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use protseg::pipeline::{DatasetManifest, Split};
use protseg::training::{DataPaths, StageConfig, TrainConfig};
use protseg::NetworkConfig;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_protseg"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> serde_json::Value {
    let o = run(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_config(dir: &Path, steps: usize) -> PathBuf {
    let mut cfg = TrainConfig::desk();
    cfg.patch = 16;
    cfg.step2_patch = Some(16);
    cfg.networks.base = NetworkConfig::new(2, 2, 1, 2);
    cfg.networks.fusion = NetworkConfig::new(2, 2, 2, 1);
    let sc = StageConfig { steps, batch_size: 2, base_lr: 1e-4, peak_lr: 0.03, warmup_fraction: 0.3 };
    cfg.step1 = sc.clone();
    cfg.step2 = sc.clone();
    cfg.step3 = sc;
    cfg.data = DataPaths {
        images: Some("ph/dataset.json".into()),
        synth: Some("synth/manifest.json".into()),
        ..DataPaths::default()
    };
    let path = dir.join("train.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn help_and_usage_errors() {
    assert!(run(&["--help"]).status.success());
    assert_eq!(run(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(run(&["gen-synth", "--out", "x"]).status.code(), Some(2));
    assert_eq!(run(&["--threads", "0", "grad-check"]).status.code(), Some(2));
}

#[test]
fn errors_are_one_json_line() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["eval", "--pred", "/nonexistent-pred", "--gt", "/nonexistent-gt", "--out", s(&tmp.path().join("r.json"))]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8(o.stderr).unwrap();
    assert_eq!(err.lines().count(), 1);
    let v: serde_json::Value = serde_json::from_str(&err).unwrap();
    assert_eq!(v["error"], "io");
    assert!(v["message"].as_str().unwrap().contains("/nonexistent"));

    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, "{\"patch\": ").unwrap();
    let o = run(&["train-step1", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(v["error"], "json");
}

#[test]
fn gen_synth_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let v = ok(&["gen-synth", "--n", "5", "--seed", "9", "--grid", "32", "--out", s(&a)]);
    assert_eq!(v["samples"], 5);
    ok(&["--threads", "2", "gen-synth", "--n", "5", "--seed", "9", "--grid", "32", "--out", s(&b)]);
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 21);
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap(), "{n:?}");
    }
}

#[test]
fn full_chain_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let ph = root.join("ph");
    ok(&["make-phantoms", "--n", "6", "--seed", "1", "--grid", "16", "--out", s(&ph)]);
    let synth_cfg = root.join("synth.json");
    let shapes = protseg::pipeline::PhantomConfig::for_grid(16).shapes;
    fs::write(&synth_cfg, serde_json::to_string(&shapes).unwrap()).unwrap();
    ok(&["gen-synth", "--n", "6", "--seed", "2", "--config", s(&synth_cfg), "--out", s(&root.join("synth"))]);
    let cfg = tiny_config(root, 4);
    let out = root.join("ckpt");
    ok(&["train-step1", "--config", s(&cfg), "--out", s(&out)]);
    ok(&["train-step2", "--config", s(&cfg), "--out", s(&out)]);
    let v = ok(&["train-step3", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(v["prot_digest_unchanged"], true);

    let manifest = DatasetManifest::load(ph.join("dataset.json")).unwrap();
    let pred = root.join("pred");
    for e in manifest.entries.iter().filter(|e| e.split == Split::Test) {
        ok(&["infer", "--ckpt-dir", s(&out), "--image", s(&ph.join(&e.image_path)), "--out", s(&pred)]);
    }
    let report = root.join("report.json");
    let v = ok(&["eval", "--pred", s(&pred), "--gt", s(&ph.join("dataset.json")), "--out", s(&report)]);
    assert!(v["images"].as_u64().unwrap() >= 1);
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert!(r["per_image"].is_array());
}

#[test]
fn thread_count_does_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    ok(&["make-phantoms", "--n", "6", "--seed", "5", "--grid", "16", "--out", s(&root.join("ph"))]);
    let cfg = tiny_config(root, 6);
    let (a, b) = (root.join("t1"), root.join("t3"));
    ok(&["--threads", "1", "train-step1", "--config", s(&cfg), "--out", s(&a)]);
    ok(&["--threads", "3", "train-step1", "--config", s(&cfg), "--out", s(&b)]);
    for f in ["base.ckpt", "step1_loss.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}
