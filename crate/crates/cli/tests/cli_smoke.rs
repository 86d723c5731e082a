use std::path::{Path, PathBuf};
use std::process::Command;

use oodens_cli::config::RunConfig;
use oodens_cli::layout::Layout;
use oodens_cli::pipeline;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_oodens")
}

fn tmp(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    if dir.exists() {
        std::fs::remove_dir_all(&dir).unwrap();
    }
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Small but complete config so smoke tests stay fast.
fn small_config_json() -> String {
    serde_json::json!({
        "seed": 11,
        "data": {
            "dims": 4,
            "classes": 3,
            "blob_radius": 3.0,
            "blob_sigma": 0.5,
            "train_n": 150,
            "test_n": 90,
            "ood_n": 90,
            "ood_recipes": [
                {"kind": "mean_shift", "name": "ood_near", "alpha": 1.0, "beta": 1.5, "gamma": 1.0},
                {"kind": "scale", "name": "ood_scale", "gamma": 2.5}
            ]
        },
        "arch": {"layer_widths": [4, 16, 16, 3], "feature_matrix_shape": [4, 4]},
        "train": {"epochs": 6, "batch_size": 32, "lr": 0.05},
        "seeds": [1, 2, 3],
        "detectors": {"odin_temperature": 1000.0, "odin_eps": 0.0, "knn_k": 3, "mahalanobis_eps_scale": 1e-6},
        "ensemble": {"k_list": [1, 2], "repeats": 2},
        "landscape": {"resolution": 5, "margin": 0.2, "radius": 1.0, "trajectory_stride": 3},
        "ablation": {"subspace_modes": 3, "r_max": 0.5, "k": 2},
        "theory": {
            "dims": 8, "modes": 3, "trials": 10, "norm_spread": 0.01, "max_angle_deg": 5.0,
            "mu_scale": 1.0, "sigma": 1.0, "alpha": 1.0, "beta": 1.0, "gamma": 1.0
        }
    })
    .to_string()
}

fn write_small_config(dir: &Path) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, small_config_json()).unwrap();
    path
}

#[test]
fn missing_config_flag_is_a_usage_error() {
    let out = Command::new(bin())
        .args(["gen-data", "--out", "/tmp/x"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn nonexistent_config_file_is_a_usage_error() {
    let dir = tmp("smoke-noconfig");
    let out = Command::new(bin())
        .args(["gen-data", "--config", "/definitely/not/here.json", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_config_is_a_data_error() {
    let dir = tmp("smoke-badjson");
    let cfg = dir.join("bad.json");
    std::fs::write(&cfg, "{ not json").unwrap();
    let out = Command::new(bin())
        .args(["gen-data", "--config"])
        .arg(&cfg)
        .args(["--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn duplicate_seeds_are_rejected() {
    let dir = tmp("smoke-dupseeds");
    let mut value: serde_json::Value = serde_json::from_str(&small_config_json()).unwrap();
    value["seeds"] = serde_json::json!([1, 1, 2]);
    let cfg = dir.join("config.json");
    std::fs::write(&cfg, value.to_string()).unwrap();
    let out = Command::new(bin())
        .args(["gen-data", "--config"])
        .arg(&cfg)
        .args(["--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn gen_data_writes_named_datasets_and_is_deterministic() {
    let dir = tmp("smoke-gendata");
    let cfg = write_small_config(&dir);
    let run = |out: &Path| {
        let status = Command::new(bin())
            .args(["gen-data", "--config"])
            .arg(&cfg)
            .args(["--out"])
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    };
    let out1 = dir.join("a");
    let out2 = dir.join("b");
    run(&out1);
    run(&out2);
    // 2 in-distribution splits + 2 OoD sets, two files each, plus manifest.
    let names: Vec<String> = std::fs::read_dir(out1.join("data"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(names.len(), 9, "{names:?}");
    for name in [
        "train_ind_x.mten",
        "test_ind_x.mten",
        "ood_near_x.mten",
        "ood_scale_x.mten",
    ] {
        assert!(names.iter().any(|n| n == name), "missing {name}");
        let a = std::fs::read(out1.join("data").join(name)).unwrap();
        let b = std::fs::read(out2.join("data").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn dump_rejects_missing_checkpoints_and_unknown_datasets() {
    let dir = tmp("smoke-dump-errors");
    let cfg = write_small_config(&dir);
    let out_dir = dir.join("run");
    let status = Command::new(bin())
        .args(["gen-data", "--config"])
        .arg(&cfg)
        .args(["--out"])
        .arg(&out_dir)
        .status()
        .unwrap();
    assert!(status.success());
    // Checkpoints were never trained: loading them is a data error.
    let out = Command::new(bin())
        .args(["dump", "--config"])
        .arg(&cfg)
        .args(["--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn staged_pipeline_matches_row_counts_and_identity_laws() {
    let dir = tmp("smoke-pipeline");
    let cfg_path = write_small_config(&dir);
    let config = RunConfig::load(&cfg_path).unwrap();
    let layout = Layout::new(dir.join("run"));
    pipeline::run_gen_data(&config, &layout).unwrap();
    pipeline::run_train_modes(&config, &layout).unwrap();
    pipeline::run_dump(&config, &layout, &[], &[]).unwrap();
    pipeline::run_eval(&config, &layout).unwrap();

    let summary = std::fs::read_to_string(layout.modes_summary()).unwrap();
    assert_eq!(summary.lines().count(), 1 + config.seeds.len());

    let runs = std::fs::read_to_string(layout.runs_csv()).unwrap();
    let rows: Vec<&str> = runs.lines().skip(1).collect();
    // Per detector and OoD set: one row per seed at k = 1.
    for detector in oodens_core::detectors::ALL_DETECTORS {
        for dataset in ["ood_near", "ood_scale"] {
            let count = rows
                .iter()
                .filter(|r| {
                    let mut f = r.split(',');
                    f.next() == Some(detector) && f.next() == Some(dataset) && f.next() == Some("1")
                })
                .count();
            assert_eq!(count, config.seeds.len(), "{detector}/{dataset}");
        }
    }

    // Re-running eval reproduces the CSV byte for byte.
    let before = std::fs::read(layout.runs_csv()).unwrap();
    pipeline::run_eval(&config, &layout).unwrap();
    assert_eq!(std::fs::read(layout.runs_csv()).unwrap(), before);

    // k = 1 rows computed through the ensemble path (singleton mode sets)
    // match the single-mode rows byte for byte.
    let singleton = pipeline::singleton_ensemble_records(&config, &layout).unwrap();
    let singleton_csv = oodens_core::metrics::runs_to_csv(&singleton);
    for row in singleton_csv.lines().skip(1) {
        assert!(
            rows.contains(&row),
            "ensemble-path row missing from runs.csv: {row}"
        );
    }
}

#[test]
fn odin_input_perturbation_runs_through_eval() {
    let dir = tmp("smoke-odin-eps");
    let mut value: serde_json::Value = serde_json::from_str(&small_config_json()).unwrap();
    value["detectors"]["odin_eps"] = serde_json::json!(0.05);
    let cfg = dir.join("config.json");
    std::fs::write(&cfg, value.to_string()).unwrap();
    let config = RunConfig::load(&cfg).unwrap();
    let layout = Layout::new(dir.join("run"));
    pipeline::run_gen_data(&config, &layout).unwrap();
    pipeline::run_train_modes(&config, &layout).unwrap();
    pipeline::run_dump(&config, &layout, &[], &[]).unwrap();
    pipeline::run_eval(&config, &layout).unwrap();

    // Perturbed ODIN rows must exist and differ from the unperturbed run.
    let perturbed = std::fs::read_to_string(layout.runs_csv()).unwrap();
    let mut plain_config = config.clone();
    plain_config.detectors.odin_eps = 0.0;
    let plain_layout = Layout::new(dir.join("plain"));
    pipeline::run_gen_data(&plain_config, &plain_layout).unwrap();
    pipeline::run_train_modes(&plain_config, &plain_layout).unwrap();
    pipeline::run_dump(&plain_config, &plain_layout, &[], &[]).unwrap();
    pipeline::run_eval(&plain_config, &plain_layout).unwrap();
    let plain = std::fs::read_to_string(plain_layout.runs_csv()).unwrap();

    let odin_rows = |text: &str| -> Vec<String> {
        text.lines()
            .filter(|l| l.starts_with("odin,"))
            .map(str::to_string)
            .collect()
    };
    assert!(!odin_rows(&perturbed).is_empty());
    assert_ne!(odin_rows(&perturbed), odin_rows(&plain));
    // Non-ODIN detectors are untouched by the perturbation setting.
    let msp_rows = |text: &str| -> Vec<String> {
        text.lines()
            .filter(|l| l.starts_with("msp,"))
            .map(str::to_string)
            .collect()
    };
    assert_eq!(msp_rows(&perturbed), msp_rows(&plain));
}

#[test]
fn numeric_failures_exit_with_code_4() {
    let dir = tmp("smoke-numeric");
    // A separation this large pins the closed-form accuracies to 1, which
    // makes the probit gap undefined.
    let mut value: serde_json::Value = serde_json::from_str(&small_config_json()).unwrap();
    value["theory"]["mu_scale"] = serde_json::json!(200.0);
    let cfg = dir.join("config.json");
    std::fs::write(&cfg, value.to_string()).unwrap();
    let out = Command::new(bin())
        .args(["theory", "--config"])
        .arg(&cfg)
        .args(["--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("shrink"));
}

#[test]
fn unknown_dataset_name_is_a_usage_error() {
    let dir = tmp("smoke-dump-unknown");
    let cfg = write_small_config(&dir);
    let out_dir = dir.join("run");
    for sub in ["gen-data", "train-modes"] {
        let status = Command::new(bin())
            .args([sub, "--config"])
            .arg(&cfg)
            .args(["--out"])
            .arg(&out_dir)
            .status()
            .unwrap();
        assert!(status.success());
    }
    let out = Command::new(bin())
        .args(["dump", "--config"])
        .arg(&cfg)
        .args(["--out"])
        .arg(&out_dir)
        .args(["--dataset", "nope"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
