use std::path::PathBuf;

use knockoff_mlr::io::{read_csv, read_jsonl, write_csv, write_results};
use knockoff_mlr::model::StatMethod;
use knockoff_mlr::sim::{
    run_experiment, CoefDist, CovKind, ExperimentConfig, Framework, KnockoffSetting, ResponseModel,
    ResultRecord,
};
use knockoff_mlr::knockoffs::SMethod;
use nalgebra::DMatrix;
use serde_json::Value;

fn schema() -> jsonschema::Validator {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("schema/result_record.v1.json");
    let text = std::fs::read_to_string(path).unwrap();
    jsonschema::validator_for(&serde_json::from_str(&text).unwrap()).unwrap()
}

fn config() -> ExperimentConfig {
    ExperimentConfig {
        n: 80,
        p: 12,
        cov_kind: CovKind::ErdosRenyi { sparsity: 0.8 },
        sparsity: 0.25,
        coef_dist: CoefDist::Laplace,
        tau: 0.7,
        response: ResponseModel::Linear,
        knockoff: KnockoffSetting { framework: Framework::ModelX, s_method: SMethod::Equicorrelated },
        statistics: vec![StatMethod::Lcd, StatMethod::Lsm],
        q: 0.2,
        n_reps: 3,
        seed: 2,
        gibbs: None,
    }
}

#[test]
fn matrix_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    let m = DMatrix::from_fn(5, 3, |i, j| ((i * 31 + j * 17) as f64).sin() * 10f64.powi(i as i32 - 2));
    let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
    write_csv(&path, &m, Some(&names)).unwrap();
    let t = read_csv(&path, true).unwrap();
    assert_eq!(t.header.as_deref(), Some(names.as_slice()));
    assert!(m.iter().zip(t.data.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn records_validate_against_schema() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.jsonl");
    let records = run_experiment(&config()).unwrap();
    write_results(&path, &records).unwrap();
    let v = schema();
    let text = std::fs::read_to_string(&path).unwrap();
    for line in text.lines() {
        let value: Value = serde_json::from_str(line).unwrap();
        assert!(v.is_valid(&value), "{line}");
    }
    let back: Vec<ResultRecord> = read_jsonl(&path).unwrap();
    assert_eq!(back, records);
}

#[test]
fn failure_records_validate_and_bad_records_do_not() {
    let v = schema();
    let failed = serde_json::json!({
        "rep": 0, "method": "mlr", "knockoff": "fixed_x_mvr", "n_rej": null, "fdp": null,
        "power": null, "seed": 7, "runtime_ms": null, "error": "unsupported: x"
    });
    assert!(v.is_valid(&failed));
    let mut missing = failed.clone();
    missing.as_object_mut().unwrap().remove("seed");
    assert!(!v.is_valid(&missing));
    let mut extra = failed.clone();
    extra["extra"] = 1.into();
    assert!(!v.is_valid(&extra));
    let mut half = failed;
    half.as_object_mut().unwrap().remove("error");
    assert!(!v.is_valid(&half), "null metrics need an error field");
}

#[test]
fn config_json_round_trip_and_defaults() {
    let text = r#"{"n":50,"p":10,"cov_kind":{"kind":"ar1"},"sparsity":0.1,"coef_dist":"uniform",
        "tau":1.0,"response":{"gam":"cubic"},"knockoff":{"framework":"fixed_x","s_method":"equicorrelated"},
        "statistics":["lcd","oracle_mlr"],"q":0.1,"n_reps":2,"seed":1}"#;
    let cfg: ExperimentConfig = serde_json::from_str(text).unwrap();
    assert_eq!(cfg.cov_kind, CovKind::ar1());
    let again: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(again, cfg);
    let typo = text.replace("\"seed\"", "\"sead\"");
    assert!(serde_json::from_str::<ExperimentConfig>(&typo).is_err());
}
