use std::path::Path;
use std::process::Command;

use commsim::config::SelectBy;
use commsim::exec::{cmd_run, cmd_sweep, Axis};
use commsim::parse_config;
use commsim_core::telemetry::trace_from_csv;

fn config(out: &Path, extra: &str) -> String {
    format!(
        r#"{{
      "problem": {{"family": "het_quadratic", "n": 4, "d": 20, "v": 1.0, "sigma": 0.2, "v0": 1.0}},
      "algorithm": {{"method": "marina_p", "downlink": {{"kind": "perm_k"}}}},
      "stop": {{"eps": 1e-6, "max_iters": 5000}},
      "repeats": 3,
      "output": {{"dir": {out:?}}}{extra}
    }}"#
    )
}

#[test]
fn run_writes_traces_and_their_average() {
    let dir = tempfile::tempdir().unwrap();
    let text = config(dir.path(), "").replace(r#""eps": 1e-6, "max_iters": 5000"#, r#""eps": 1e-30, "max_iters": 50"#);
    let report = cmd_run(&parse_config(&text).unwrap()).unwrap();
    assert!(report.ok());
    let read = |name: &str| trace_from_csv(&std::fs::read_to_string(dir.path().join(name)).unwrap()).unwrap();
    let seeds: Vec<_> = (0..3).map(|s| read(&format!("trace_seed{s}.csv"))).collect();
    let avg = read("trace_avg.csv");
    assert_eq!(avg.len(), 51);
    for (t, rec) in avg.iter().enumerate() {
        let mean = seeds.iter().map(|tr| tr[t].grad_norm_sq).sum::<f64>() / 3.0;
        assert!((rec.grad_norm_sq - mean).abs() <= 1e-12 * mean.max(1e-300));
    }
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);
}

#[test]
fn sweep_selects_the_cheapest_multiplier() {
    let dir = tempfile::tempdir().unwrap();
    let text = config(dir.path(), r#", "sweep": {"n": [2, 4], "gamma_exponents": [-3, -2, -1, 0]}"#);
    let cfg = parse_config(&text).unwrap();
    let report = cmd_sweep(&cfg, &[Axis::N, Axis::GammaMultiplier]).unwrap();
    assert!(report.ok());
    assert_eq!(report.cells.len(), 2);
    for cell in &report.cells {
        assert!(cell.selected);
        let best = cell.tried.iter().filter_map(|(_, s)| *s).fold(f64::INFINITY, f64::min);
        assert_eq!(cell.chosen.score(SelectBy::Total), Some(best));
    }
    let table = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(table.lines().filter(|l| l.ends_with(",yes")).count(), 2);
    for n in [2, 4] {
        assert!(dir.path().join(format!("marina_p_n{n}.csv")).exists());
        assert!(dir.path().join(format!("marina_p_n{n}_seed0.csv")).exists());
    }
}

#[test]
fn sweep_ties_go_to_the_smaller_multiplier() {
    let dir = tempfile::tempdir().unwrap();
    // Every multiplier meets this target at t = 0 with zero cost.
    let text = config(dir.path(), r#", "sweep": {"gamma_exponents": [2, 0, 1]}"#).replace("1e-6", "1e9");
    let report = cmd_sweep(&parse_config(&text).unwrap(), &[Axis::GammaMultiplier]).unwrap();
    assert_eq!(report.cells[0].chosen.multiplier, 1.0);
}

#[test]
fn sweep_axes_parse() {
    assert_eq!("n".parse::<Axis>().unwrap(), Axis::N);
    assert_eq!("gamma".parse::<Axis>().unwrap(), Axis::GammaMultiplier);
    assert_eq!("algorithm".parse::<Axis>().unwrap(), Axis::Algorithm);
    assert!("beta".parse::<Axis>().is_err());
}

fn commsim() -> Command {
    Command::new(env!("CARGO_BIN_EXE_commsim"))
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, config(&dir.path().join("out"), "")).unwrap();
    assert_eq!(commsim().arg("run").arg(&path).status().unwrap().code(), Some(0));
    assert!(dir.path().join("out/summary.csv").exists());

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"problem\": 1}").unwrap();
    assert_eq!(commsim().arg("run").arg(&bad).status().unwrap().code(), Some(2));
    assert_eq!(commsim().args(["verify", "nonsense"]).status().unwrap().code(), Some(2));

    let out = commsim().args(["verify", "permk"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().count() >= 6 && text.lines().all(|l| l.starts_with("PASS")));
}

#[test]
fn estimate_reports_exact_and_sampled_constants() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("req.json");
    std::fs::write(&path, r#"{"compressor": {"kind": "rand_k", "k": 2}, "d": 10, "n": 3, "samples": 20000}"#).unwrap();
    let out = commsim().arg("estimate").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["omega"], 4.0);
    let theta = v["theta_hat"].as_f64().unwrap();
    assert!((theta / (4.0 / 3.0) - 1.0).abs() < 0.15, "{theta}");
}
