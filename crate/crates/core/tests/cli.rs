use std::path::Path;
use std::process::{Command, Output};

use dnls_core::measure::Ensemble;
use dnls_core::spectral::fl_norm;
use dnls_core::{SpectralState, C64};

fn dnls(args: &[&str], env_dir: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dnls"));
    cmd.args(args).env_remove("DNLS_OUTPUT_DIR");
    if let Some(d) = env_dir {
        cmd.env("DNLS_OUTPUT_DIR", d);
    }
    cmd.output().expect("binary runs")
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn sample_writes_ensemble_and_replays_from_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a");
    let out = dnls(
        &["sample", "--n-modes", "4", "--samples", "300", "--seed", "9", "--cutoff-b", "1.5", "--output-dir", first.to_str().unwrap()],
        None,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["resolved_config.toml", "manifest.json", "ensemble.bin", "samples.csv", "moments.csv"] {
        assert!(first.join(f).exists(), "missing {f}");
    }
    let ens = Ensemble::read(&first.join("ensemble.bin")).unwrap();
    assert_eq!((ens.count(), ens.bandwidth, ens.cutoff_b), (300, 4, 1.5));
    assert!(ens.tilt > 0.0);

    let manifest: serde_json::Value = serde_json::from_str(&read(&first.join("manifest.json"))).unwrap();
    assert_eq!(manifest["command"], "sample");
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["passed"], true);

    let second = dir.path().join("b");
    let cfg = first.join("resolved_config.toml");
    let out = dnls(&["sample", "--config", cfg.to_str().unwrap(), "--output-dir", second.to_str().unwrap()], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["samples.csv", "moments.csv"] {
        assert_eq!(read(&first.join(f)), read(&second.join(f)), "{f} differs on replay");
    }
    assert_eq!(std::fs::read(first.join("ensemble.bin")).unwrap(), std::fs::read(second.join("ensemble.bin")).unwrap());
}

#[test]
fn output_dir_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dnls(&["sample", "--n-modes", "2", "--samples", "10"], Some(dir.path()));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("samples.csv").exists());
}

#[test]
fn evolve_and_norms() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = SpectralState::zeros(4);
    s.set(0, C64::new(0.3, 0.0));
    s.set(1, C64::new(0.2, 0.1));
    s.set(-2, C64::new(0.0, 0.1));
    let input = dir.path().join("u0.json");
    std::fs::write(&input, serde_json::to_string(&s).unwrap()).unwrap();

    let out_dir = dir.path().join("run");
    let out = dnls(
        &[
            "evolve", "--input", input.to_str().unwrap(), "--dt", "1e-3", "--t-final", "0.1", "--record-every", "10",
            "--snapshots", "true", "--output-dir", out_dir.to_str().unwrap(),
        ],
        None,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let traj = read(&out_dir.join("trajectory.csv"));
    let mut lines = traj.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let mcol = header.iter().position(|h| *h == "m").expect("mass column");
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 11);
    let (m0, m1) = (rows[0][mcol], rows.last().unwrap()[mcol]);
    assert!((m1 - m0).abs() < 1e-10 * m0);
    assert!(out_dir.join("snapshots.bin").exists());

    let out = dnls(&["norms", "--input", input.to_str().unwrap(), "--s", "0.5", "--r", "2"], None);
    assert!(out.status.success());
    let printed: f64 = String::from_utf8(out.stdout).unwrap().trim().parse().unwrap();
    assert_eq!(printed, fl_norm(&s, 0.5, 2.0).unwrap());

    let final_state: SpectralState = serde_json::from_str(&read(&out_dir.join("final_state.json"))).unwrap();
    assert_eq!(final_state.bandwidth(), 4);
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(dnls(&["nonsense"], None).status.code(), Some(2));
    assert_eq!(dnls(&["sample", "--samples", "many"], None).status.code(), Some(2));
    assert_eq!(dnls(&["norms"], None).status.code(), Some(2));
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "n_modes = 4\nnot_a_key = 1\n").unwrap();
    let out = dnls(&["sample", "--config", bad.to_str().unwrap(), "--output-dir", dir.path().to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not_a_key"));
    assert_eq!(dnls(&["experiment", "no-such-experiment", "--output-dir", dir.path().to_str().unwrap()], None).status.code(), Some(2));
    assert_eq!(dnls(&["--help"], None).status.code(), Some(0));
}

#[test]
fn experiment_from_config_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("xn.toml");
    std::fs::write(&cfg, "[experiments.xn-decay]\nn_list = [4, 8, 16]\nsamples = 4000\nseed = 3\n").unwrap();
    let out_dir = dir.path().join("exp");
    let out = dnls(&["experiment", "xn-decay", "--config", cfg.to_str().unwrap(), "--output-dir", out_dir.to_str().unwrap()], None);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("xn-decay"), "{stdout}");
    assert!(matches!(out.status.code(), Some(0) | Some(1)));
    let result: serde_json::Value = serde_json::from_str(&read(&out_dir.join("xn-decay.result.json"))).unwrap();
    assert_eq!(result["rows"].as_array().unwrap().len(), 3);
    assert_eq!(out.status.code() == Some(0), result["passed"] == true);
    assert!(out_dir.join("xn-decay.rows.csv").exists());
}
