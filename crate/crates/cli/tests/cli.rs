use std::path::Path;
use std::process::{Command, Output};

fn fcnlp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fcnlp"))
        .args(args)
        .env("FCNLP_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn synth(dir: &Path) -> String {
    let out = dir.to_str().unwrap();
    let o = fcnlp(&["gen-synth", "--events", "3", "--per-event", "16", "--dim", "6", "--out", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    dir.join("synth.tfre").to_str().unwrap().to_string()
}

#[test]
fn gen_synth_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let a = synth(&tmp.path().join("a"));
    let b = synth(&tmp.path().join("b"));
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn invalid_tau_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path());
    let out = tmp.path().join("g");
    let o = fcnlp(&["build-graph", "--data", &data, "--tau", "1.01", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn unknown_flag_and_variant_exit_1() {
    assert_eq!(fcnlp(&["train", "--bogus"]).status.code(), Some(1));
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path());
    let o = fcnlp(&["train", "--data", &data, "--variant", "nope"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_data_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("none.tfre");
    let o = fcnlp(&["build-graph", "--data", missing.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_then_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path());
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(&cfg, "hidden = 6\nepochs = 3\ntau = 0.95\n").unwrap();
    let out = tmp.path().join("t");
    let o = fcnlp(&[
        "train", "--data", &data, "--config", cfg.to_str().unwrap(), "--epochs", "2",
        "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("hidden = 6"));
    assert!(stdout.contains("tau = 0.95"));
    assert!(stdout.contains("epochs = 2"));
    let losses = std::fs::read_to_string(out.join("losses.csv")).unwrap();
    assert_eq!(losses.lines().count(), 3);

    std::fs::write(&cfg, "hiden = 6\n").unwrap();
    let o = fcnlp(&["train", "--data", &data, "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn train_then_eval_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path());
    let t = tmp.path().join("t");
    let o = fcnlp(&[
        "train", "--data", &data, "--hidden", "8", "--epochs", "5", "--out", t.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["model.tfck", "losses.csv", "metrics.json", "manifest.json"] {
        assert!(t.join(f).exists(), "{f} missing");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(t.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert!(manifest["files"]["model.tfck"].as_str().unwrap().len() == 64);

    let e = tmp.path().join("e");
    let ck = t.join("model.tfck");
    let o = fcnlp(&[
        "eval", "--data", &data, "--checkpoint", ck.to_str().unwrap(), "--out", e.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read(t.join("metrics.json")).unwrap(),
        std::fs::read(e.join("metrics.json")).unwrap()
    );
}

#[test]
fn export_formats() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path());
    let x = tmp.path().join("x");
    let o = fcnlp(&["export-graph", "--data", &data, "--format", "dot", "--out", x.to_str().unwrap()]);
    assert!(o.status.success());
    let dot = std::fs::read_to_string(x.join("graph.dot")).unwrap();
    assert!(dot.starts_with("graph") || dot.starts_with("digraph"));
    let o = fcnlp(&["export-graph", "--data", &data, "--format", "xml"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn gradcheck_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = fcnlp(&["gradcheck", "--seeds", "1", "--out", tmp.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(tmp.path().join("gradcheck.csv").exists());
}
