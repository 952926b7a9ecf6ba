//! End-to-end tests of the command-line binary: exit codes, emitted files,
//! determinism, and overwrite semantics.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn magpie() -> Command {
    Command::new(env!("CARGO_BIN_EXE_magpie"))
}

fn tmp(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("magpie-cli-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_quick_config(dir: &Path, epochs: usize, seed: u64) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(
        &path,
        format!(
            r#"{{"epochs": {epochs}, "seed": {seed}, "hidden_dim": 16, "num_layers": 2, "heads": 4}}"#
        ),
    )
    .unwrap();
    path
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

#[test]
fn missing_config_exits_2_and_names_the_path() {
    let dir = tmp("missing-config");
    let out = magpie()
        .args(["pretrain", "--config", "/no/such/config.json", "--out"])
        .arg(dir.join("run"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("/no/such/config.json"), "{stderr}");
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tmp("unknown-key");
    let config = dir.join("config.json");
    fs::write(&config, r#"{"epochs": 1, "not_a_field": true}"#).unwrap();
    let out = magpie()
        .args(["pretrain", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.join("run"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("not_a_field"), "{stderr}");
}

#[test]
fn one_epoch_run_writes_checkpoint_metrics_and_manifest() {
    let dir = tmp("one-epoch");
    let config = write_quick_config(&dir, 1, 3);
    let run = dir.join("run");
    let out = magpie()
        .args(["pretrain", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&run)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run.join("checkpoint.bin").exists());
    assert!(run.join("manifest.json").exists());
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines.len(), 2, "{metrics}");
    assert_eq!(lines[0], "epoch,fr,sample,sr,bs,ca,total");
    assert!(lines[1].starts_with("1,"));

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "pretrain");
    assert_eq!(manifest["dataset"], "sbm");
    assert!(manifest["config_digest"].as_str().unwrap().len() == 64);
}

#[test]
fn identical_configs_give_identical_metrics() {
    let dir = tmp("determinism");
    let config = write_quick_config(&dir, 3, 9);
    for run in ["a", "b"] {
        let out = magpie()
            .args(["pretrain", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(dir.join(run))
            .output()
            .unwrap();
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = fs::read(dir.join("a").join("metrics.csv")).unwrap();
    let b = fs::read(dir.join("b").join("metrics.csv")).unwrap();
    assert_eq!(a, b);

    let ma: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("a/manifest.json")).unwrap()).unwrap();
    let mb: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("b/manifest.json")).unwrap()).unwrap();
    assert_eq!(ma["config_digest"], mb["config_digest"]);
}

#[test]
fn rerun_refuses_without_force_and_overwrites_with_it() {
    let dir = tmp("force");
    let config = write_quick_config(&dir, 1, 5);
    let run = dir.join("run");
    let first = magpie()
        .args(["pretrain", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&run)
        .output()
        .unwrap();
    assert_eq!(code(&first), 0);

    let refused = magpie()
        .args(["pretrain", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&run)
        .output()
        .unwrap();
    assert_eq!(code(&refused), 2);
    assert!(String::from_utf8_lossy(&refused.stderr).contains("--force"));

    let forced = magpie()
        .args(["pretrain", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&run)
        .arg("--force")
        .output()
        .unwrap();
    assert_eq!(code(&forced), 0);
}

#[test]
fn probe_emits_csv_rows_and_summary() {
    let dir = tmp("probe");
    let config = write_quick_config(&dir, 2, 7);
    let run = dir.join("run");
    assert_eq!(
        code(
            &magpie()
                .args(["pretrain", "--config"])
                .arg(&config)
                .arg("--out")
                .arg(&run)
                .output()
                .unwrap()
        ),
        0
    );
    let probe_dir = dir.join("probe");
    let out = magpie()
        .args(["probe", "--checkpoint"])
        .arg(run.join("checkpoint.bin"))
        .args(["--dataset", "sbm", "--seeds", "3", "--out"])
        .arg(&probe_dir)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let csv = fs::read_to_string(probe_dir.join("probe.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "dataset,protocol,seed,accuracy");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("sbm,transductive,0,"));

    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(probe_dir.join("summary.json")).unwrap())
            .unwrap();
    assert!(summary["mean"].as_f64().unwrap() > 0.0);
    assert!(summary["std"].as_f64().unwrap() >= 0.0);
}

#[test]
fn sweep_rejects_invalid_rates_before_any_run() {
    let dir = tmp("sweep-invalid");
    let config = write_quick_config(&dir, 1, 1);
    let run = dir.join("run");
    let out = magpie()
        .args(["sweep", "--config"])
        .arg(&config)
        .args(["--param", "p_f", "--values", "0.5,1.5", "--out"])
        .arg(&run)
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    assert!(!run.join("sweep.csv").exists());
}

#[test]
fn sweep_writes_curve_and_plot() {
    let dir = tmp("sweep");
    let config = write_quick_config(&dir, 1, 2);
    let run = dir.join("run");
    let out = magpie()
        .args(["sweep", "--config"])
        .arg(&config)
        .args(["--param", "p_s", "--values", "0.1,0.3", "--out"])
        .arg(&run)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(run.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("p_s,accuracy_mean,accuracy_std"));
    assert!(run.join("sweep.png").exists());
}

#[test]
fn single_value_sweep_still_plots() {
    let dir = tmp("sweep-one");
    let config = write_quick_config(&dir, 1, 2);
    let run = dir.join("run");
    let out = magpie()
        .args(["sweep", "--config"])
        .arg(&config)
        .args(["--param", "p_f", "--values", "0.5", "--out"])
        .arg(&run)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert_eq!(
        fs::read_to_string(run.join("sweep.csv")).unwrap().lines().count(),
        2
    );
    assert!(run.join("sweep.png").exists());
}

#[test]
fn empty_ablation_equals_full_model_only() {
    let dir = tmp("ablate-empty");
    let config = write_quick_config(&dir, 1, 4);
    let run = dir.join("run");
    let out = magpie()
        .args(["ablate", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&run)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(run.join("ablation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("full,"));
}

#[test]
fn ablation_table_has_one_row_per_component_plus_full() {
    let dir = tmp("ablate");
    let config = write_quick_config(&dir, 1, 4);
    let run = dir.join("run");
    let out = magpie()
        .args(["ablate", "--config"])
        .arg(&config)
        .args(["--components", "AM,CA", "--out"])
        .arg(&run)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(run.join("ablation.csv")).unwrap();
    let names: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(names, vec!["full", "-AM", "-CA"]);
}

#[test]
fn unknown_ablation_component_exits_2() {
    let dir = tmp("ablate-bad");
    let config = write_quick_config(&dir, 1, 4);
    let out = magpie()
        .args(["ablate", "--config"])
        .arg(&config)
        .args(["--components", "XX", "--out"])
        .arg(dir.join("run"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn gen_sbm_round_trips_through_pretrain() {
    let dir = tmp("gen-sbm");
    let data = dir.join("data");
    let out = magpie()
        .args(["gen-sbm", "--blocks", "2", "--nodes-per-block", "12"])
        .args(["--p-in", "0.4", "--p-out", "0.05", "--feature-dim", "4"])
        .args(["--out"])
        .arg(&data)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["edges.tsv", "features.csv", "labels.txt", "split.txt"] {
        assert!(data.join(f).exists(), "{f} missing");
    }

    let config = write_quick_config(&dir, 1, 8);
    let run = dir.join("run");
    let trained = magpie()
        .args(["pretrain", "--config"])
        .arg(&config)
        .arg("--dataset")
        .arg(&data)
        .arg("--out")
        .arg(&run)
        .output()
        .unwrap();
    assert_eq!(code(&trained), 0, "{}", String::from_utf8_lossy(&trained.stderr));
    assert!(run.join("checkpoint.bin").exists());
}

#[test]
fn plot_embeddings_separates_a_separable_fixture() {
    let dir = tmp("plot");
    // Strongly separated two-block fixture.
    let data = dir.join("data");
    assert_eq!(
        code(
            &magpie()
                .args(["gen-sbm", "--blocks", "2", "--nodes-per-block", "20"])
                .args(["--p-in", "0.5", "--p-out", "0.02"])
                .args(["--feature-dim", "6", "--separation", "4.0", "--noise", "0.3"])
                .args(["--out"])
                .arg(&data)
                .output()
                .unwrap()
        ),
        0
    );
    let config = write_quick_config(&dir, 5, 6);
    let run = dir.join("run");
    assert_eq!(
        code(
            &magpie()
                .args(["pretrain", "--config"])
                .arg(&config)
                .arg("--dataset")
                .arg(&data)
                .arg("--out")
                .arg(&run)
                .output()
                .unwrap()
        ),
        0
    );
    let plot_dir = dir.join("embed");
    let out = magpie()
        .args(["plot-embeddings", "--checkpoint"])
        .arg(run.join("checkpoint.bin"))
        .arg("--dataset")
        .arg(&data)
        .arg("--out")
        .arg(&plot_dir)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(plot_dir.join("embeddings.png").exists());

    // Cluster check on the emitted coordinates: center distance must beat
    // three times the mean intra-cluster radius.
    let csv = fs::read_to_string(plot_dir.join("coordinates.csv")).unwrap();
    let mut by_class: Vec<Vec<(f64, f64)>> = vec![Vec::new(), Vec::new()];
    for line in csv.lines().skip(1) {
        let parts: Vec<&str> = line.split(',').collect();
        let (x, y): (f64, f64) = (parts[1].parse().unwrap(), parts[2].parse().unwrap());
        let class: usize = parts[3].parse().unwrap();
        by_class[class].push((x, y));
    }
    let center = |pts: &[(f64, f64)]| {
        let n = pts.len() as f64;
        (
            pts.iter().map(|p| p.0).sum::<f64>() / n,
            pts.iter().map(|p| p.1).sum::<f64>() / n,
        )
    };
    let c0 = center(&by_class[0]);
    let c1 = center(&by_class[1]);
    let center_dist = ((c0.0 - c1.0).powi(2) + (c0.1 - c1.1).powi(2)).sqrt();
    let radius = |pts: &[(f64, f64)], c: (f64, f64)| {
        pts.iter()
            .map(|p| ((p.0 - c.0).powi(2) + (p.1 - c.1).powi(2)).sqrt())
            .sum::<f64>()
            / pts.len() as f64
    };
    let mean_radius = 0.5 * (radius(&by_class[0], c0) + radius(&by_class[1], c1));
    assert!(
        center_dist > 3.0 * mean_radius,
        "clusters not separated: centers {center_dist:.3}, mean radius {mean_radius:.3}"
    );
}

#[test]
fn plot_embeddings_is_deterministic() {
    let dir = tmp("plot-det");
    let config = write_quick_config(&dir, 1, 11);
    let run = dir.join("run");
    assert_eq!(
        code(
            &magpie()
                .args(["pretrain", "--config"])
                .arg(&config)
                .arg("--out")
                .arg(&run)
                .output()
                .unwrap()
        ),
        0
    );
    let mut csvs = Vec::new();
    for tag in ["p1", "p2"] {
        let plot_dir = dir.join(tag);
        assert_eq!(
            code(
                &magpie()
                    .args(["plot-embeddings", "--checkpoint"])
                    .arg(run.join("checkpoint.bin"))
                    .args(["--dataset", "sbm", "--out"])
                    .arg(&plot_dir)
                    .output()
                    .unwrap()
            ),
            0
        );
        csvs.push(fs::read(plot_dir.join("coordinates.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn convert_cora_writes_native_files() {
    let dir = tmp("convert");
    fs::write(
        dir.join("toy.content"),
        "3\t1\t0\tA\n1\t0\t1\tB\n2\t1\t1\tA\n",
    )
    .unwrap();
    fs::write(dir.join("toy.cites"), "1\t2\n2\t3\n").unwrap();
    let out_dir = dir.join("native");
    let out = magpie()
        .args(["convert-cora", "--content"])
        .arg(dir.join("toy.content"))
        .arg("--cites")
        .arg(dir.join("toy.cites"))
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("edges.tsv").exists());
    assert!(out_dir.join("labels.txt").exists());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("3 nodes"), "{stdout}");
}

#[test]
fn incompatible_checkpoint_dimension_exits_2() {
    let dir = tmp("incompat");
    // Train on a 4-dim dataset, probe against the 16-dim builtin.
    let data = dir.join("data");
    assert_eq!(
        code(
            &magpie()
                .args(["gen-sbm", "--blocks", "2", "--nodes-per-block", "10"])
                .args(["--p-in", "0.4", "--p-out", "0.05", "--feature-dim", "4", "--out"])
                .arg(&data)
                .output()
                .unwrap()
        ),
        0
    );
    let config = write_quick_config(&dir, 1, 2);
    let run = dir.join("run");
    assert_eq!(
        code(
            &magpie()
                .args(["pretrain", "--config"])
                .arg(&config)
                .arg("--dataset")
                .arg(&data)
                .arg("--out")
                .arg(&run)
                .output()
                .unwrap()
        ),
        0
    );
    let out = magpie()
        .args(["probe", "--checkpoint"])
        .arg(run.join("checkpoint.bin"))
        .args(["--dataset", "sbm", "--out"])
        .arg(dir.join("probe"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("feature_dim"));
}
