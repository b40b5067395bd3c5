mod common;

use std::fs;

use common::{body, smoke};
use ponlab::config::ModelId;
use ponlab::experiment;
use ponlab::io::{read_csv, BER_HEADER, COMPLEXITY_HEADER, HISTORY_HEADER};
use ponlab::sweep::run_sweep;
use ponlab_core::metrics::median;

#[test]
fn one_point_sweep_writes_every_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke(dir.path(), &["sato-21"], &[-6.0], 1 << 12);
    let out = run_sweep(&cfg, dir.path(), 1, true).unwrap();
    assert_eq!(out.exit_code(), 0);
    assert_eq!(out.reports.len(), 1);

    assert_eq!(fs::read_to_string(dir.path().join("config.toml")).unwrap(), cfg.text);
    for name in ["ber_vs_rop.csv", "complexity.csv", "reports.csv", "curves.csv", "gains.csv", "runtime.csv"] {
        let text = fs::read_to_string(dir.path().join(name)).unwrap();
        assert_eq!(text.lines().next().unwrap(), format!("# config_sha256={}", cfg.hash), "{name}");
    }
    let t = read_csv(&dir.path().join("ber_vs_rop.csv")).unwrap();
    let (header, rows) = (t.header, t.rows);
    assert_eq!(header, BER_HEADER);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], "sato-21");
    assert_eq!(rows[0][1].parse::<f64>().unwrap(), -6.0);
    let errors: u64 = rows[0][3].parse().unwrap();
    let bits: u64 = rows[0][4].parse().unwrap();
    assert!(bits > 0);
    assert_eq!(rows[0][2].parse::<f64>().unwrap(), errors as f64 / bits as f64);
    assert_eq!(fs::read_to_string(dir.path().join("errors.log")).unwrap(), "");
}

#[test]
fn rows_follow_models_then_rops() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke(dir.path(), &["sato-21", "sato-51"], &[-10.0, -7.0, -4.0], 1 << 12);
    let out = run_sweep(&cfg, dir.path(), 2, true).unwrap();
    assert_eq!(out.exit_code(), 0);
    let rows = read_csv(&dir.path().join("ber_vs_rop.csv")).unwrap().rows;
    let keys: Vec<(String, String)> = rows.iter().map(|r| (r[0].clone(), r[1].clone())).collect();
    let expected: Vec<(String, String)> = ["sato-21", "sato-51"]
        .iter()
        .flat_map(|m| ["-10", "-7", "-4"].map(|r| (m.to_string(), r.to_string())))
        .collect();
    assert_eq!(keys, expected);
}

#[test]
fn complexity_rows_recompute_from_the_ber_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke(dir.path(), &["sato-21", "sato-51"], &[-12.0, -9.0, -6.0], 1 << 12);
    run_sweep(&cfg, dir.path(), 1, true).unwrap();
    let ber = read_csv(&dir.path().join("ber_vs_rop.csv")).unwrap().rows;
    let t = read_csv(&dir.path().join("complexity.csv")).unwrap();
    let (header, rows) = (t.header, t.rows);
    assert_eq!(header, COMPLEXITY_HEADER);
    assert_eq!(rows.len(), 2);
    for row in rows {
        let bers: Vec<f64> = ber.iter().filter(|r| r[0] == row[0]).map(|r| r[2].parse().unwrap()).collect();
        let mber = median(&bers).unwrap();
        let rmps: u64 = row[1].parse().unwrap();
        assert_eq!(rmps, experiment::rmps(&cfg.config, row[0].parse::<ModelId>().unwrap()).unwrap());
        assert_eq!(row[2].parse::<f64>().unwrap(), mber);
        let expected = 1.0 / (mber * rmps as f64);
        let got: f64 = row[3].parse().unwrap();
        assert!(((got - expected) / expected).abs() < 1e-12, "{got} vs {expected}");
    }
}

#[test]
fn network_points_leave_history_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke(dir.path(), &["fconvnet-64"], &[-6.0], 1 << 12);
    let out = run_sweep(&cfg, dir.path(), 1, true).unwrap();
    assert_eq!(out.exit_code(), 0);
    let t = read_csv(&dir.path().join("history/fconvnet-64_rop-6.csv")).unwrap();
    let (header, rows) = (t.header, t.rows);
    assert_eq!(header, HISTORY_HEADER);
    assert!(!rows.is_empty() && rows.len() <= 2);
    assert!(dir.path().join("checkpoints/fconvnet-64_rop-6.bin").is_file());
    assert!(dir.path().join("checkpoints/fconvnet-64_rop-6.json").is_file());
}

#[test]
fn failed_point_is_logged_and_left_out() {
    let dir = tempfile::tempdir().unwrap();
    // 40 dBm into the amplifier makes its gain integration blow up
    let cfg = smoke(dir.path(), &["sato-21"], &[-6.0, 40.0], 1 << 12);
    let out = run_sweep(&cfg, dir.path(), 1, true).unwrap();
    assert_eq!(out.exit_code(), 2);
    assert_eq!(out.failures.len(), 1);
    let rows = read_csv(&dir.path().join("ber_vs_rop.csv")).unwrap().rows;
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][1], "-6");
    let log = fs::read_to_string(dir.path().join("errors.log")).unwrap();
    assert_eq!(log.lines().count(), 1);
    assert!(log.starts_with("sato-21 rop_dbm=40:"), "{log}");
}

#[test]
fn all_points_failing_is_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke(dir.path(), &["sato-21"], &[40.0], 1 << 12);
    assert_eq!(run_sweep(&cfg, dir.path(), 1, true).unwrap().exit_code(), 1);
}

#[test]
fn repeated_sweeps_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    // same text in both runs, so the hash and every CSV line must agree
    let text = common::smoke_text(a.path(), &["fconvnet-64", "sato-21"], &[-8.0, -5.0], 1 << 12);
    let cfg = ponlab::config::LoadedConfig::from_text(text).unwrap();
    run_sweep(&cfg, a.path(), 1, true).unwrap();
    run_sweep(&cfg, b.path(), 2, true).unwrap();
    for name in ["ber_vs_rop.csv", "complexity.csv", "reports.csv", "gains.csv", "curves.csv", "history/fconvnet-64_rop-8.csv"] {
        assert_eq!(body(&a.path().join(name)), body(&b.path().join(name)), "{name}");
    }
    let w = |d: &std::path::Path| fs::read(d.join("checkpoints/fconvnet-64_rop-5.bin")).unwrap();
    assert_eq!(w(a.path()), w(b.path()));
}
