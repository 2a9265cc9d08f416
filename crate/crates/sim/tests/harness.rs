use tlmp_sim::io::{read_csv, read_json, write_csv, write_json};
use tlmp_sim::sweep::{run_point, run_sweep, Axis, SweepRow};
use tlmp_sim::{run_trial, trial_seed, SimConfig};

fn small() -> SimConfig {
    let mut c = SimConfig::default();
    for (k, v) in [
        ("n", "128"),
        ("m", "8"),
        ("k", "4"),
        ("b", "12"),
        ("l", "4"),
        ("t_max", "40"),
        ("trials", "4"),
        ("seed", "11"),
    ] {
        c.set(k, v).unwrap();
    }
    c
}

#[test]
fn genie_instance_decodes() {
    let mut c = SimConfig::default();
    for (k, v) in [
        ("n", "256"),
        ("m", "16"),
        ("k", "4"),
        ("b", "16"),
        ("l", "4"),
        ("snr_db", "60"),
        ("init_snr_db", "40"),
    ] {
        c.set(k, v).unwrap();
    }
    for i in 0..5 {
        let r = run_trial(&c, trial_seed(3, i)).unwrap();
        assert_eq!(r.pe, 0.0, "trial {i}");
        assert!(r.nmse_db < -30.0, "trial {i}: {} dB", r.nmse_db);
    }
}

#[test]
fn single_value_single_trial_matches_run_trial() {
    let mut c = small();
    c.trials = 1;
    let rows = run_sweep(&c, Some((Axis::N, &[128.0]))).unwrap();
    assert_eq!(rows.len(), 1);
    let direct = run_trial(&c, trial_seed(c.seed, 0)).unwrap();
    let row = &rows[0];
    assert_eq!(row.pe_mean, direct.pe);
    assert_eq!(row.iters_mean, direct.iterations as f64);
    assert_eq!(row.nmse_db_mean.to_bits(), direct.nmse_db.to_bits());
    assert_eq!(row.pe_stderr, 0.0);
    assert_eq!(row.per_trial[0].cost_trace, direct.cost_trace);
}

#[test]
fn rows_sorted_by_value() {
    let mut c = small();
    c.trials = 1;
    let rows = run_sweep(&c, Some((Axis::SnrDb, &[20.0, 5.0, 10.0]))).unwrap();
    let v: Vec<f64> = rows.iter().map(|r| r.value).collect();
    assert_eq!(v, vec![5.0, 10.0, 20.0]);
    assert!(rows.iter().all(|r| r.axis == "snr_db"));
}

#[test]
fn unknown_axis_and_invalid_point_fail() {
    assert!("q".parse::<Axis>().is_err());
    let c = small();
    // b = 12 is not a multiple of 5
    assert!(run_sweep(&c, Some((Axis::L, &[5.0]))).is_err());
}

#[test]
fn parallel_matches_sequential() {
    let c = small();
    let par = run_point(&c).unwrap();
    let seq: Vec<_> = (0..c.trials as u64)
        .map(|i| run_trial(&c, trial_seed(c.seed, i)).unwrap())
        .collect();
    let a = SweepRow::aggregate("none", 0.0, par);
    let b = SweepRow::aggregate("none", 0.0, seq);
    assert_eq!(a.pe_mean.to_bits(), b.pe_mean.to_bits());
    assert_eq!(a.pe_stderr.to_bits(), b.pe_stderr.to_bits());
    assert_eq!(a.iters_mean.to_bits(), b.iters_mean.to_bits());
    assert_eq!(a.nmse_db_mean.to_bits(), b.nmse_db_mean.to_bits());
}

#[test]
fn stderr_matches_direct_computation() {
    let c = small();
    let row = SweepRow::aggregate("none", 0.0, run_point(&c).unwrap());
    let pe: Vec<f64> = row.per_trial.iter().map(|t| t.pe).collect();
    let n = pe.len() as f64;
    let m = pe.iter().sum::<f64>() / n;
    let sd = (pe.iter().map(|p| (p - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((row.pe_stderr - sd / n.sqrt()).abs() < 1e-15);
}

#[test]
fn file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let rows = run_sweep(&small(), Some((Axis::K, &[2.0, 4.0]))).unwrap();

    let p = dir.path().join("out.json");
    write_json(&rows, std::fs::File::create(&p).unwrap()).unwrap();
    let back = read_json(std::fs::File::open(&p).unwrap()).unwrap();
    assert_eq!(back, rows);

    let p = dir.path().join("out.csv");
    write_csv(&rows, std::fs::File::create(&p).unwrap()).unwrap();
    let back = read_csv(std::fs::File::open(&p).unwrap()).unwrap();
    for (a, b) in back.iter().zip(&rows) {
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.pe_mean.to_bits(), b.pe_mean.to_bits());
        assert_eq!(a.pe_stderr.to_bits(), b.pe_stderr.to_bits());
        assert_eq!(a.runtime_ms_mean.to_bits(), b.runtime_ms_mean.to_bits());
    }
}

#[test]
fn json_schema() {
    let rows = run_sweep(&small(), None).unwrap();
    let mut buf = Vec::new();
    write_json(&rows, &mut buf).unwrap();
    let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
    let row = &v.as_array().unwrap()[0];
    for key in [
        "axis",
        "value",
        "trials",
        "pe_mean",
        "pe_stderr",
        "iters_mean",
        "nmse_db_mean",
        "runtime_ms_mean",
    ] {
        assert!(row[key].is_number() || row[key].is_string(), "{key}");
    }
    let t = &row["per_trial"].as_array().unwrap()[0];
    for key in ["seed", "pe", "iterations", "nmse_db", "runtime_ms", "final_g"] {
        assert!(t[key].is_number(), "{key}");
    }
    assert!(t["cost_trace"].is_array());
}
