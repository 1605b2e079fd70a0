//! Black-box tests of the `o2cap` binary: artifacts, exit codes,
//! reproducibility.

use std::path::Path;
use std::process::{Command, Output};

fn o2cap(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_o2cap"))
        .current_dir(dir)
        .args(args)
        .env_remove("O2CAP_THREADS")
        .output()
        .expect("binary runs")
}

/// Small synthesis so train-based tests stay quick.
const SMALL: &[&str] = &[
    "--set",
    "synth.num_ids=12",
    "--set",
    "synth.images_per_id=10",
    "--set",
    "synth.dim=16",
    "--set",
    "train.max_epochs=2",
];

#[test]
fn synth_writes_summary_and_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let out1 = o2cap(dir.path(), &["synth", "--set", "out.dir=a"]);
    let out2 = o2cap(dir.path(), &["synth", "--set", "out.dir=b"]);
    assert!(
        out1.status.success(),
        "{}",
        String::from_utf8_lossy(&out1.stderr)
    );
    let stdout = String::from_utf8_lossy(&out1.stdout);
    assert!(
        stdout.contains("N=800") && stdout.contains("C=6"),
        "{stdout}"
    );
    let a = std::fs::read(dir.path().join("a/dataset.o2eb")).unwrap();
    let b = std::fs::read(dir.path().join("b/dataset.o2eb")).unwrap();
    assert!(out2.status.success());
    assert_eq!(a, b);
    assert!(dir.path().join("a/config.resolved.json").exists());
}

#[test]
fn synth_bad_output_path_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = o2cap(dir.path(), &["synth", "--out", "missing/nested/dir/x.o2eb"]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = o2cap(dir.path(), &["synth", "--set", "train.learning_rate=1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_thread_cap_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_o2cap"))
        .current_dir(dir.path())
        .args(["synth"])
        .env("O2CAP_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_writes_artifacts_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--loss-mode", "o2cap"];
    args.extend_from_slice(SMALL);
    let out = o2cap(dir.path(), &args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in [
        "model.o2eb",
        "raw.o2eb",
        "checkpoint.json",
        "history.csv",
        "metrics.json",
        "config.resolved.json",
    ] {
        assert!(dir.path().join("run").join(f).exists(), "missing {f}");
    }
    let metrics: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("run/metrics.json")).unwrap(),
    )
    .unwrap();
    assert!(metrics["map"].is_number());
    assert!(metrics["cmc"]["r1"].is_number());
    assert!(metrics["assoc"]["iou"].is_number());
    let history = std::fs::read_to_string(dir.path().join("run/history.csv")).unwrap();
    assert!(history
        .starts_with("epoch,loss,map,r1,iou,prec_off,prec_on,prec_union,rec_off,rec_on,rec_union"));
    assert_eq!(history.lines().count(), 3);
}

#[test]
fn train_zero_epochs_checkpoint_equals_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--epochs", "0"];
    args.extend_from_slice(SMALL);
    let out = o2cap(dir.path(), &args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let model = std::fs::read(dir.path().join("run/model.o2eb")).unwrap();
    let raw = std::fs::read(dir.path().join("run/raw.o2eb")).unwrap();
    assert_eq!(model, raw);
}

#[test]
fn rerun_from_resolved_config_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--loss-mode", "off", "--set", "out.dir=first"];
    args.extend_from_slice(SMALL);
    let out = o2cap(dir.path(), &args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let resolved = dir.path().join("first/config.resolved.json");
    let out = o2cap(
        dir.path(),
        &[
            "train",
            "--config",
            resolved.to_str().unwrap(),
            "--set",
            "out.dir=second",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in [
        "history.csv",
        "model.o2eb",
        "checkpoint.json",
        "metrics.json",
    ] {
        let a = std::fs::read(dir.path().join("first").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("second").join(f)).unwrap();
        // The resolved config embeds out.dir, which legitimately differs.
        if f == "checkpoint.json" {
            let sa = String::from_utf8(a).unwrap().replace("first", "X");
            let sb = String::from_utf8(b).unwrap().replace("second", "X");
            assert_eq!(sa, sb, "{f} differs");
        } else {
            assert_eq!(a, b, "{f} differs");
        }
    }
}

#[test]
fn eval_missing_checkpoint_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = o2cap(dir.path(), &["eval", "--checkpoint", "nowhere"]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn eval_improves_over_fresh_model() {
    let dir = tempfile::tempdir().unwrap();
    let mut fresh = vec!["train", "--epochs", "0", "--set", "out.dir=fresh"];
    fresh.extend_from_slice(&SMALL[..6]); // synth keys only
    assert!(o2cap(dir.path(), &fresh).status.success());
    let mut trained = vec!["train", "--loss-mode", "o2cap", "--set", "out.dir=trained"];
    trained.extend_from_slice(SMALL);
    assert!(o2cap(dir.path(), &trained).status.success());

    let map_of = |ckpt: &str| -> f64 {
        let mut args = vec!["eval", "--checkpoint", ckpt];
        args.extend_from_slice(&SMALL[..6]);
        let out = o2cap(dir.path(), &args);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        let v: serde_json::Value =
            serde_json::from_str(String::from_utf8_lossy(&out.stdout).trim()).unwrap();
        v["map"].as_f64().unwrap()
    };
    assert!(map_of("trained") > map_of("fresh"));
}

#[test]
fn stats_recomputes_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--loss-mode", "o2cap"];
    args.extend_from_slice(SMALL);
    assert!(o2cap(dir.path(), &args).status.success());
    let out = o2cap(dir.path(), &["stats", "--checkpoint", "run"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&out.stdout).trim()).unwrap();
    assert!(v["assoc"]["iou"].as_f64().unwrap() > 0.0);
    assert!(v["num_proxies"].as_u64().unwrap() > 0);
    assert!(dir.path().join("run/stats.json").exists());
}

#[test]
fn malformed_checkpoint_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("ck")).unwrap();
    for f in ["model.o2eb", "raw.o2eb"] {
        std::fs::write(dir.path().join("ck").join(f), b"garbage").unwrap();
    }
    std::fs::write(dir.path().join("ck/checkpoint.json"), b"{}").unwrap();
    let out = o2cap(dir.path(), &["stats", "--checkpoint", "ck"]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}
