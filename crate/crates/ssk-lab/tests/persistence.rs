use ssk_lab::experiments::{load, persist, ExperimentRecord, FailureKind, Statistic};
use ssk_lab::model::ModelParams;
use std::io::Write;

fn params() -> ModelParams {
    ModelParams::new(50, 0.5, 0.3).unwrap()
}

fn records(n: usize, offset: u64) -> Vec<ExperimentRecord> {
    (0..n as u64)
        .map(|i| {
            let k = i + offset;
            let failed = k % 97 == 13;
            let x = (k as f64 * 0.618_033_988_749_895).sin() * 1e3 / (k as f64 + 0.1);
            ExperimentRecord {
                index: k,
                seed: k.wrapping_mul(0x9e37_79b9_7f4a_7c15),
                value: (!failed).then_some(x),
                aux: (!failed).then_some(x * std::f64::consts::PI),
                saddle: Some(2.0 + 1.0 / (k as f64 + 3.0)),
                lambda1: Some(2.0 - 1e-17 * k as f64),
                elapsed_ms: 0.1 * k as f64,
                failure: failed.then_some(FailureKind::Solver),
                reason: failed.then(|| "no bracket".to_string()),
            }
        })
        .collect()
}

#[test]
fn write_then_read_is_bitwise_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("runs.jsonl");
    let recs = records(1000, 0);
    persist(&recs, Statistic::FreeEnergyGaussian, &params(), &path).unwrap();
    let back = load(&path).unwrap();
    assert_eq!(back.statistic, Statistic::FreeEnergyGaussian);
    assert_eq!(back.params, params());
    assert_eq!(back.skipped, 0);
    assert_eq!(back.records.len(), 1000);
    for (a, b) in recs.iter().zip(&back.records) {
        assert_eq!(a, b);
        assert_eq!(a.value.map(f64::to_bits), b.value.map(f64::to_bits));
        assert_eq!(a.aux.map(f64::to_bits), b.aux.map(f64::to_bits));
    }
}

#[test]
fn appending_runs_adds_counts() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("runs.jsonl");
    persist(&records(300, 0), Statistic::ReplicaOverlapMean, &params(), &path).unwrap();
    persist(&records(200, 300), Statistic::ReplicaOverlapMean, &params(), &path).unwrap();
    let back = load(&path).unwrap();
    assert_eq!(back.records.len(), 500);
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("ssk-lab ")).count(), 1);
}

#[test]
fn appending_a_different_run_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("runs.jsonl");
    persist(&records(3, 0), Statistic::ReplicaOverlapMean, &params(), &path).unwrap();
    assert!(persist(&records(3, 3), Statistic::ReplicaOverlapVar, &params(), &path).is_err());
    let other = ModelParams::new(51, 0.5, 0.3).unwrap();
    assert!(persist(&records(3, 3), Statistic::ReplicaOverlapMean, &other, &path).is_err());
    assert_eq!(load(&path).unwrap().records.len(), 3);
}

#[test]
fn corrupt_row_is_skipped_and_counted() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("runs.jsonl");
    persist(&records(10, 0), Statistic::FreeEnergyMicro, &params(), &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[5] = "{\"index\": 4, \"seed\": tru";
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    let back = load(&path).unwrap();
    assert_eq!(back.skipped, 1);
    assert_eq!(back.records.len(), 9);
}

#[test]
fn foreign_or_future_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("runs.jsonl");
    std::fs::write(&path, "hello world\n").unwrap();
    assert!(load(&path).is_err());
    let mut f = std::fs::File::create(&path).unwrap();
    writeln!(f, "ssk-lab v99 free_energy_micro {{}}").unwrap();
    drop(f);
    let err = load(&path).unwrap_err().to_string();
    assert!(err.contains("version"), "{err}");
}
