use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use svae_core::analysis::read_pgm;
use svae_core::data::{load_checkpoint, write_stack, ImageStack};
use svae_core::model::TrainedModel;
use svae_core::svae::{SvaeHyper, SvaeModel};
use svae_core::Rng;

fn svae(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_svae"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn svae")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = svae(dir, args);
    assert!(
        out.status.success(),
        "svae {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    svae(dir, args).status.code().expect("exit code")
}

/// Whitened synthetic stack plus a small config in a fresh directory.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--count", "2", "--size", "32", "--seed", "4", "--out", "raw.bin"]);
    ok(dir.path(), &["whiten", "--input", "raw.bin", "--out", "white.bin"]);
    fs::write(
        dir.path().join("cfg.json"),
        r#"{
            "seed": 5,
            "data": {"stack": "white.bin", "patch_size": 4, "n_patches": 400, "test_fraction": 0.25},
            "model": {"latent_dim": 24, "hidden_dim": 16, "likelihood_scale": 0.2},
            "train": {"epochs": 2, "batch_size": 32},
            "sparse_coding": {"epochs": 1, "batch_size": 50},
            "generate": {"count": 7, "grid_cols": 4}
        }"#,
    )
    .unwrap();
    dir
}

fn read(p: PathBuf) -> Vec<u8> {
    fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn whiten_reports_zero_mean_unit_variance() {
    let dir = workspace();
    let out = ok(dir.path(), &["whiten", "--input", "raw.bin", "--out", "w2.bin"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!(v["mean"].as_f64().unwrap().abs() < 1e-9);
    assert!((v["variance"].as_f64().unwrap() - 1.0).abs() < 1e-6);
}

#[test]
fn whiten_rejects_bad_inputs_with_exit_2() {
    let dir = workspace();
    let odd = ImageStack::new(1, 12, 12, vec![0.5; 144]).unwrap();
    write_stack(&dir.path().join("odd.bin"), &odd).unwrap();
    assert_eq!(code(dir.path(), &["whiten", "--input", "odd.bin", "--out", "o.bin"]), 2);
    fs::copy(dir.path().join("raw.bin"), dir.path().join("lonely.bin")).unwrap();
    assert_eq!(code(dir.path(), &["whiten", "--input", "lonely.bin", "--out", "o.bin"]), 2);
}

#[test]
fn config_errors_exit_2() {
    let dir = workspace();
    fs::write(dir.path().join("bad.json"), r#"{"model": {"latent": 3}}"#).unwrap();
    assert_eq!(code(dir.path(), &["train", "--config", "bad.json", "--model", "svae", "--out", "r"]), 2);
    fs::write(dir.path().join("neg.json"), r#"{"model": {"beta": -1}}"#).unwrap();
    assert_eq!(code(dir.path(), &["train", "--config", "neg.json", "--model", "svae", "--out", "r"]), 2);
    assert_eq!(code(dir.path(), &["train", "--config", "cfg.json", "--model", "vae", "--out", "r"]), 2);
    assert_eq!(code(dir.path(), &["eval", "--config", "cfg.json", "--checkpoint", "none", "--out", "e.json"]), 2);
    // Nothing was created by the failed runs.
    assert!(!dir.path().join("r").exists());
}

#[test]
fn svae_norm_checkpoint_has_unit_columns() {
    let dir = workspace();
    ok(dir.path(), &["train", "--config", "cfg.json", "--model", "svae-norm", "--out", "run"]);
    let ckpt = load_checkpoint(&dir.path().join("run/checkpoint.svae")).unwrap();
    let TrainedModel::Svae(m) = &ckpt.model else { panic!("expected an SVAE") };
    assert!(m.normalize_decoder);
    // Stored at f32 precision.
    assert!(m.dict.column_norms().iter().all(|n| (n - 1.0).abs() < 1e-6));
    let telemetry = fs::read_to_string(dir.path().join("run/telemetry.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = telemetry.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    for l in &lines {
        assert!((l["min_column_norm"].as_f64().unwrap() - 1.0).abs() < 1e-9);
        assert!((l["max_column_norm"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn zero_epochs_saves_the_initialization() {
    let dir = workspace();
    ok(dir.path(), &["train", "--config", "cfg.json", "--model", "svae", "--epochs", "0", "--out", "run"]);
    let ckpt = load_checkpoint(&dir.path().join("run/checkpoint.svae")).unwrap();
    assert_eq!(ckpt.epoch, 0);
    let hyper = SvaeHyper {
        hidden_dim: 16,
        likelihood_scale: 0.2,
        ..SvaeHyper::default()
    };
    // Seed 5, initialization stream 3.
    let init = SvaeModel::new(16, 24, &hyper, &mut Rng::new(5, 3)).unwrap();
    let TrainedModel::Svae(m) = &ckpt.model else { panic!("expected an SVAE") };
    for (a, b) in m.param_slices().iter().zip(init.param_slices()) {
        for (x, y) in a.iter().zip(b) {
            assert_eq!(*x, *y as f32 as f64);
        }
    }
}

#[test]
fn reruns_are_byte_identical() {
    let dir = workspace();
    for run in ["a", "b"] {
        for model in ["sc", "svae"] {
            let out = format!("{run}_{model}");
            ok(dir.path(), &["train", "--config", "cfg.json", "--model", model, "--out", &out]);
            let ck = format!("{out}/checkpoint.svae");
            ok(dir.path(), &["eval", "--config", "cfg.json", "--checkpoint", &ck, "--trials", "3", "--out", &format!("{out}/eval.json")]);
            ok(dir.path(), &["analyze", "--config", "cfg.json", "--checkpoint", &ck, "--out", &format!("{out}/an")]);
        }
        ok(dir.path(), &["generate", "--config", "cfg.json", "--checkpoint", &format!("{run}_svae/checkpoint.svae"), "--out", &format!("{run}_gen.pgm")]);
    }
    for model in ["sc", "svae"] {
        for file in ["checkpoint.svae", "telemetry.jsonl", "eval.json", "an/filter_report.json", "an/filters_all.pgm"] {
            let a = read(dir.path().join(format!("a_{model}/{file}")));
            let b = read(dir.path().join(format!("b_{model}/{file}")));
            assert!(a == b, "{model}/{file} differs between runs");
        }
    }
    assert_eq!(read(dir.path().join("a_gen.pgm")), read(dir.path().join("b_gen.pgm")));
}

#[test]
fn eval_defaults_and_na_marker() {
    let dir = workspace();
    ok(dir.path(), &["train", "--config", "cfg.json", "--model", "sc", "--out", "sc"]);
    ok(dir.path(), &["train", "--config", "cfg.json", "--model", "svae", "--epochs", "1", "--out", "sv"]);
    let sc: serde_json::Value = serde_json::from_str(&ok(
        dir.path(),
        &["eval", "--config", "cfg.json", "--checkpoint", "sc/checkpoint.svae", "--out", "sc.json"],
    ))
    .unwrap();
    assert_eq!(sc["std_mse"], "N/A");
    assert_eq!(sc["trials"], 1);
    let sv: serde_json::Value = serde_json::from_str(&ok(
        dir.path(),
        &["eval", "--config", "cfg.json", "--checkpoint", "sv/checkpoint.svae", "--out", "sv.json"],
    ))
    .unwrap();
    assert_eq!(sv["trials"], 50);
    assert!(sv["std_mse"].as_f64().unwrap() >= 0.0);

    // A checkpoint trained on other data is a data error.
    fs::write(
        dir.path().join("wide.json"),
        r#"{"data": {"stack": "white.bin", "patch_size": 5, "n_patches": 100}}"#,
    )
    .unwrap();
    assert_eq!(code(dir.path(), &["eval", "--config", "wide.json", "--checkpoint", "sv/checkpoint.svae", "--out", "x.json"]), 2);
}

#[test]
fn analyze_partitions_filters_and_exports_full_grid() {
    let dir = workspace();
    ok(dir.path(), &["train", "--config", "cfg.json", "--model", "svae", "--out", "sv"]);
    let summary: serde_json::Value = serde_json::from_str(&ok(
        dir.path(),
        &["analyze", "--config", "cfg.json", "--checkpoint", "sv/checkpoint.svae", "--out", "an"],
    ))
    .unwrap();
    assert_eq!(summary["threshold"], 0.5);
    let report: serde_json::Value = serde_json::from_slice(&read(dir.path().join("an/filter_report.json"))).unwrap();
    let active = report["active_count"].as_u64().unwrap();
    let noise = report["noise_count"].as_u64().unwrap();
    assert_eq!(active + noise, 24);
    assert_eq!(report["filters"].as_array().unwrap().len(), 24);
    // 24 tiles of 4x4 in rows of 10: 3 grid rows.
    let grid = read_pgm(&dir.path().join("an/filters_all.pgm")).unwrap();
    assert_eq!((grid.width, grid.height), (10 * 5 - 1, 3 * 5 - 1));
}

#[test]
fn generate_renders_requested_tiles() {
    let dir = workspace();
    ok(dir.path(), &["train", "--config", "cfg.json", "--model", "svae", "--epochs", "1", "--out", "sv"]);
    ok(dir.path(), &["generate", "--config", "cfg.json", "--checkpoint", "sv/checkpoint.svae", "--count", "10", "--out", "g.pgm"]);
    let img = read_pgm(&dir.path().join("g.pgm")).unwrap();
    // 10 tiles of 4x4 in rows of 4: 3 grid rows.
    assert_eq!((img.width, img.height), (4 * 5 - 1, 3 * 5 - 1));
    ok(dir.path(), &["train", "--config", "cfg.json", "--model", "sc", "--out", "sc"]);
    assert_eq!(code(dir.path(), &["generate", "--config", "cfg.json", "--checkpoint", "sc/checkpoint.svae", "--out", "h.pgm"]), 2);
}
