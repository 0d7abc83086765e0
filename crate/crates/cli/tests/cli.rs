use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn hom(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hom")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn defaults_print_and_reload() {
    let dir = tempfile::tempdir().unwrap();
    let out = hom(&["predict", "--show-defaults"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("dv_z_cm_per_s"));
    let cfg = write_config(dir.path(), "defaults.toml", &text);
    let a = hom(&["--config", &cfg, "predict"]);
    let b = hom(&["predict"]);
    assert!(a.status.success(), "{}", stderr(&a));
    let (ja, jb): (Value, Value) =
        (serde_json::from_slice(&a.stdout).unwrap(), serde_json::from_slice(&b.stdout).unwrap());
    assert_eq!(ja["config_hash"], jb["config_hash"]);
}

#[test]
fn predictions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "pair.toml",
        "[source]\nfamily = \"fixed_fock\"\nmean_n_a = 1.0\nmean_n_b = 1.0\n\n[schedule]\nsplitter_transmittance = 0.5\n",
    );
    let report_path = dir.path().join("predict.json");
    let out = hom(&["--config", &cfg, "predict", "--out", report_path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: Value = serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert!((report["single_mode"]["visibility"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!((report["measured_bound"]["v_max"].as_f64().unwrap() - 0.604).abs() < 1e-3);
    let tmsv = report["tmsv_curve"].as_array().unwrap();
    let half = tmsv.iter().find(|p| p["mean_n"] == 0.5).unwrap();
    assert!((half["visibility"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert!((report["classical_bound"].as_f64().unwrap() - 0.5).abs() < 1e-9);
}

#[test]
fn config_errors_exit_with_code_two_and_a_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", "run_seed = 3\n[schedule]\neta = 1.7\n");
    let out = hom(&["--config", &cfg, "predict"]);
    assert_eq!(out.status.code(), Some(2));
    let msg = stderr(&out);
    assert!(msg.contains("line 3") && msg.contains("schedule.eta"), "{msg}");

    let cfg = write_config(dir.path(), "syntax.toml", "[scan]\nshots_per_tau = \n");
    assert_eq!(hom(&["--config", &cfg, "predict"]).status.code(), Some(2));
}

fn small_scan_config(dir: &Path, shots: usize) -> String {
    write_config(dir, "small.toml", &format!("[scan]\ntau_grid_us = [500.0, 550.0]\nshots_per_tau = {shots}\n"))
}

#[test]
fn simulate_is_deterministic_and_writes_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_scan_config(dir.path(), 5);
    let (p1, p2, p3) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"), dir.path().join("c.jsonl"));
    for p in [&p1, &p2] {
        let out = hom(&["--config", &cfg, "simulate", "--out", p.to_str().unwrap()]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let out = hom(&["--config", &cfg, "--seed", "7", "simulate", "--out", p3.to_str().unwrap()]);
    assert!(out.status.success());

    let a = fs::read_to_string(&p1).unwrap();
    assert_eq!(a.lines().count(), 10);
    assert_eq!(a, fs::read_to_string(&p2).unwrap());
    assert_ne!(a, fs::read_to_string(&p3).unwrap());

    let meta: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("a.jsonl.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["shots"], 10);
    assert_eq!(meta["run_seed"], 42);
    assert_eq!(meta["config_hash"].as_str().unwrap().len(), 64);
    let meta7: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("c.jsonl.meta.json")).unwrap()).unwrap();
    assert_eq!(meta7["run_seed"], 7);
    assert_ne!(meta["config_hash"], meta7["config_hash"]);
}

#[test]
fn reference_scenario_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let events = dir.path().join("scan.jsonl");
    let out = hom(&["simulate", "--out", events.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report_dir = dir.path().join("report");
    let out = hom(&["analyze", events.to_str().unwrap(), "--out", report_dir.to_str().unwrap(), "--volume-scan"]);
    assert!(out.status.success(), "{}", stderr(&out));

    let fit: Value = serde_json::from_str(&fs::read_to_string(report_dir.join("dip_fit.json")).unwrap()).unwrap();
    let v = fit["fit"]["visibility"].as_f64().unwrap();
    let v_err = fit["fit"]["confidence_68"]["visibility"].as_f64().unwrap();
    let tau0 = fit["fit"]["tau0_us"].as_f64().unwrap();
    // Compatible with the measured 0.65 ± 0.07 at two combined standard deviations.
    assert!((v - 0.65).abs() <= 2.0 * (0.07f64.powi(2) + v_err * v_err).sqrt(), "V = {v} ± {v_err}");
    assert!((tau0 - 550.0).abs() <= 50.0, "tau0 = {tau0}");
    assert_eq!(fit["config_hash"].as_str().unwrap().len(), 64);

    let dip = fs::read_to_string(report_dir.join("dip_scan.csv")).unwrap();
    assert_eq!(dip.lines().next().unwrap(), "tau_us,g2,stderr,n_c_mean,n_d_mean");
    assert_eq!(dip.lines().count(), 10);
    let stability = fs::read_to_string(report_dir.join("stability.csv")).unwrap();
    assert_eq!(stability.lines().count(), 10);
    for name in ["volume_scan_z.csv", "volume_scan_perp.csv"] {
        let scan = fs::read_to_string(report_dir.join(name)).unwrap();
        assert_eq!(scan.lines().next().unwrap(), "size,visibility,err");
    }
}

#[test]
fn calibration_of_an_upstream_record() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cal.toml", "[scan]\ntau_grid_us = [0.0]\nshots_per_tau = 40000\n");
    let events = dir.path().join("source.jsonl");
    let out = hom(&["--config", &cfg, "simulate", "--source-only", "--out", events.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = hom(&[
        "--config",
        &cfg,
        "analyze",
        events.to_str().unwrap(),
        "--calibration",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("calibration.json")).unwrap()).unwrap();
    let ratio_a = report["incident_a"]["ratio"].as_f64().unwrap();
    let ratio_b = report["incident_b"]["ratio"].as_f64().unwrap();
    assert!((ratio_a - 0.25).abs() < 0.02, "{ratio_a}");
    assert!((ratio_b - 0.40).abs() < 0.02, "{ratio_b}");
    assert!(report["bound"]["v_max"].as_f64().unwrap() > 0.5);
}

fn shot_line(id: u64, tau: f64, n_c: usize, n_d: usize) -> String {
    let mut events = vec!["[0.0,0.0,12.1]"; n_c];
    events.extend(std::iter::repeat_n("[0.0,0.0,7.0]", n_d));
    format!("{{\"shot_id\":{id},\"tau_us\":{tau},\"phase\":0.5,\"events\":[{}]}}\n", events.join(","))
}

#[test]
fn noiseless_dip_file_is_recovered() {
    // One shot per delay; N_c N_d follows the model up to integer rounding.
    let dir = tempfile::tempdir().unwrap();
    let n_c = 200;
    let mut text = String::new();
    for i in 0..13 {
        let tau = 400.0 + 25.0 * i as f64;
        let u: f64 = (tau - 550.0) / 64.0;
        let g = 1.0 - 0.65 * (-0.5 * u * u).exp();
        let n_d = (g * 1e6 / n_c as f64).round() as usize;
        text += &shot_line(i, tau, n_c, n_d);
    }
    let events = dir.path().join("synthetic.jsonl");
    fs::write(&events, text).unwrap();
    let out = hom(&["analyze", events.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let fit: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("dip_fit.json")).unwrap()).unwrap();
    let f = &fit["fit"];
    assert!((f["visibility"].as_f64().unwrap() - 0.65).abs() < 1e-3);
    assert!((f["tau0_us"].as_f64().unwrap() - 550.0).abs() < 0.1);
    assert!((f["sigma_us"].as_f64().unwrap() - 64.0).abs() < 0.1);
}

#[test]
fn data_errors_exit_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let out = hom(&["analyze", empty.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));

    let mut text = String::new();
    for i in 0..10 {
        text += &shot_line(i, 550.0, 1, 1);
    }
    text += "{\"shot_id\": 10, \"tau_us\": 550.0\n";
    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, text).unwrap();
    let out = hom(&["analyze", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("line 11"), "{}", stderr(&out));
}

#[test]
fn sparse_malformed_lines_are_skipped_with_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::new();
    for i in 0..300u64 {
        let tau = 400.0 + 50.0 * (i % 6) as f64;
        text += &shot_line(i, tau, (i % 3) as usize, (i % 2) as usize);
        if i == 150 {
            text += "not json\n";
        }
    }
    let events = dir.path().join("events.jsonl");
    fs::write(&events, text).unwrap();
    let out = hom(&["analyze", events.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(stderr(&out).contains(":152: skipped malformed line"), "{}", stderr(&out));
    assert!(dir.path().join("dip_scan.csv").exists());
}

#[test]
fn too_few_delays_is_a_fit_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::new();
    for i in 0..20u64 {
        text += &shot_line(i, 500.0 + 50.0 * (i % 3) as f64, 1, 1);
    }
    let events = dir.path().join("three.jsonl");
    fs::write(&events, text).unwrap();
    let out = hom(&["analyze", events.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
    assert!(dir.path().join("dip_scan.csv").exists());
}
