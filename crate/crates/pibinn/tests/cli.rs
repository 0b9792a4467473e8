//! End-to-end checks of the command-line binary: exit codes, determinism,
//! and artifact round trips.

use std::fs;
use std::path::Path;
use std::process::Command;

fn pibinn() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pibinn"))
}

fn write(path: &Path, text: &str) {
    fs::write(path, text).unwrap();
}

const TINY_DATASET: &str = r#"{
  "m": 8, "n": 16, "p_nonzero": 0.15,
  "n_train": 64, "n_test": 16, "noise_std": 0.0, "seed": 5
}"#;

fn tiny_train_config(name: &str) -> String {
    format!(
        r#"{{
  "dataset": {TINY_DATASET},
  "scheme": {{
    "name": "{name}",
    "model": {{ "k": 3 }},
    "quant": {{ "epochs": 3 }},
    "pretrain_epochs": 2,
    "stage2_epochs": 3
  }}
}}"#
    )
}

#[test]
fn gen_data_is_deterministic_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gen.json");
    write(&cfg, &format!(r#"{{"dataset": {TINY_DATASET}}}"#));
    let out1 = dir.path().join("d1");
    let out2 = dir.path().join("d2");
    for out in [&out1, &out2] {
        let st = pibinn()
            .args(["gen-data", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(out)
            .status()
            .unwrap();
        assert!(st.success());
    }
    for f in ["manifest.json", "A.bin", "Y.bin", "X.bin", "support.json"] {
        let a = fs::read(out1.join(f)).unwrap();
        let b = fs::read(out2.join(f)).unwrap();
        assert_eq!(a, b, "{f} not bit-identical across reruns");
    }
}

#[test]
fn train_emits_artifacts_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("train.json");
    write(&cfg, &tiny_train_config("t"));
    let out1 = dir.path().join("r1");
    let out2 = dir.path().join("r2");
    for out in [&out1, &out2] {
        let st = pibinn()
            .args(["train", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(out)
            .status()
            .unwrap();
        assert!(st.success());
    }
    // wall-clock timings legitimately vary between runs; everything else
    // must match exactly
    for f in ["losses.csv", "checkpoint/model.json", "checkpoint/weights.bin"] {
        let a = fs::read(out1.join(f)).unwrap();
        let b = fs::read(out2.join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between identical runs");
    }
    let a: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out1.join("report.json")).unwrap()).unwrap();
    let b: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out2.join("report.json")).unwrap()).unwrap();
    for key in [
        "train_nmse_db",
        "test_nmse_db",
        "gap_db",
        "bits",
        "params",
        "fk_curve",
        "layer_curve",
    ] {
        assert_eq!(a[key], b[key], "{key} differs between identical runs");
    }
}

#[test]
fn eval_matches_train_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("train.json");
    write(&cfg, &tiny_train_config("t"));
    let tr = dir.path().join("tr");
    assert!(pibinn()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&tr)
        .status()
        .unwrap()
        .success());

    let eval_cfg = dir.path().join("eval.json");
    write(
        &eval_cfg,
        &format!(
            r#"{{"checkpoint": "{}", "dataset": {TINY_DATASET}}}"#,
            tr.join("checkpoint").display()
        ),
    );
    let ev = dir.path().join("ev");
    assert!(pibinn()
        .args(["eval", "--config"])
        .arg(&eval_cfg)
        .arg("--out")
        .arg(&ev)
        .status()
        .unwrap()
        .success());

    let train_rep: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tr.join("report.json")).unwrap()).unwrap();
    let eval_rep: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(ev.join("report.json")).unwrap()).unwrap();
    for key in ["train_nmse_db", "test_nmse_db", "gap_db", "bits", "params"] {
        assert_eq!(train_rep[key], eval_rep[key], "{key} differs");
    }
}

#[test]
fn bits_prints_reference_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bits.json");
    write(
        &cfg,
        r#"{"model": "one_bit_dun", "k": 5, "m": 50, "n": 100}"#,
    );
    let out = pibinn()
        .args(["bits", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "25160");
}

#[test]
fn schema_violation_exits_2_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    write(
        &cfg,
        r#"{"dataset": {"m": 8, "n": 16, "n_train": 4, "n_test": 2, "bogus": true}}"#,
    );
    let out_dir = dir.path().join("never");
    let out = pibinn()
        .args(["gen-data", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(!out_dir.exists(), "output written despite config error");
}

#[test]
fn invalid_spec_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    write(
        &cfg,
        r#"{"dataset": {"m": 8, "n": 16, "n_train": 0, "n_test": 2}}"#,
    );
    let out = pibinn()
        .args(["gen-data", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("x"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_dataset_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("eval.json");
    write(
        &cfg,
        r#"{"checkpoint": "/nonexistent/ckpt", "dataset": "/nonexistent/data"}"#,
    );
    let out = pibinn()
        .args(["eval", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("x"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn diagnose_without_support_names_the_missing_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("train.json");
    write(&cfg, &tiny_train_config("t"));
    let tr = dir.path().join("tr");
    assert!(pibinn()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&tr)
        .status()
        .unwrap()
        .success());

    let diag_cfg = dir.path().join("diag.json");
    write(
        &diag_cfg,
        &format!(
            r#"{{"checkpoint": "{}", "dataset": {TINY_DATASET}}}"#,
            tr.join("checkpoint").display()
        ),
    );
    let out = pibinn()
        .args(["diagnose", "--config"])
        .arg(&diag_cfg)
        .arg("--out")
        .arg(dir.path().join("dg"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("support"), "error does not name the key: {msg}");
}

#[test]
fn diagnose_with_support_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("train.json");
    write(&cfg, &tiny_train_config("t"));
    let tr = dir.path().join("tr");
    assert!(pibinn()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&tr)
        .status()
        .unwrap()
        .success());

    let diag_cfg = dir.path().join("diag.json");
    write(
        &diag_cfg,
        &format!(
            r#"{{"checkpoint": "{}", "dataset": {TINY_DATASET}, "support": [1, 4, 9]}}"#,
            tr.join("checkpoint").display()
        ),
    );
    let d1 = dir.path().join("d1");
    let d2 = dir.path().join("d2");
    for out in [&d1, &d2] {
        assert!(pibinn()
            .args(["diagnose", "--config"])
            .arg(&diag_cfg)
            .arg("--out")
            .arg(out)
            .status()
            .unwrap()
            .success());
    }
    for f in ["diagnostics.json", "report.json", "report.csv"] {
        let a = fs::read(d1.join(f)).unwrap();
        let b = fs::read(d2.join(f)).unwrap();
        assert_eq!(a, b, "{f} differs across reruns");
    }
}

#[test]
fn compare_emits_one_row_per_scheme() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cmp.json");
    write(
        &cfg,
        &format!(
            r#"{{
  "dataset": {TINY_DATASET},
  "schemes": [
    {{"name": "onebit", "model": {{"k": 2}}, "quant": {{"epochs": 2}},
      "pretrain_epochs": 1, "stage2_epochs": 2}},
    {{"name": "ternary", "model": {{"k": 2, "quant_mode": "ternary"}},
      "quant": {{"epochs": 2}}, "pretrain_epochs": 1, "stage2_epochs": 0}}
  ]
}}"#
        ),
    );
    let out = dir.path().join("cmp");
    assert!(pibinn()
        .args(["compare", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap()
        .success());
    let csv = fs::read_to_string(out.join("comparison.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3, "header + 2 rows expected:\n{csv}");
    assert!(lines[1].starts_with("onebit,"));
    assert!(lines[2].starts_with("ternary,"));
    assert!(out.join("onebit.json").exists());
    assert!(out.join("ternary.json").exists());
}

#[test]
fn shipped_configs_parse_and_validate() {
    use pibinn::config::{
        load_config, BitsCmdConfig, CompareCmdConfig, DiagnoseCmdConfig, FmtCmdConfig,
        GenDataConfig, TrainCmdConfig,
    };
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in [
        "train_highres_k5.json",
        "train_onebit_k5.json",
        "train_onebit_k10.json",
        "train_onebit_k20.json",
        "train_onebit_ht_k5.json",
    ] {
        let cfg: TrainCmdConfig = load_config(&dir.join(name)).unwrap();
        cfg.scheme.validate().unwrap();
    }
    let gen: GenDataConfig = load_config(&dir.join("gen_data_synthetic.json")).unwrap();
    gen.dataset.validate().unwrap();
    let cmp: CompareCmdConfig = load_config(&dir.join("compare_block.json")).unwrap();
    assert_eq!(cmp.schemes.len(), 2);
    for s in &cmp.schemes {
        s.validate().unwrap();
    }
    let _: DiagnoseCmdConfig = load_config(&dir.join("diagnose_ht_k5.json")).unwrap();
    let _: BitsCmdConfig = load_config(&dir.join("bits_onebit_k5.json")).unwrap();
    let _: FmtCmdConfig = load_config(&dir.join("fmt_reports.json")).unwrap();
}

#[test]
fn fmt_renders_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("train.json");
    write(&cfg, &tiny_train_config("t"));
    let tr = dir.path().join("tr");
    assert!(pibinn()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&tr)
        .status()
        .unwrap()
        .success());
    let fmt_cfg = dir.path().join("fmt.json");
    write(
        &fmt_cfg,
        &format!(
            r#"{{"reports": ["{}"]}}"#,
            tr.join("report.json").display()
        ),
    );
    let out = pibinn()
        .args(["fmt", "--config"])
        .arg(&fmt_cfg)
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("report"), "missing header: {text}");
    assert!(text.lines().count() >= 2);
}
