use std::path::Path;
use std::process::{Command, Output};

use nalgebra::DMatrix;
use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_knockoff-mlr");

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(BIN).args(args).current_dir(dir).env_remove("KNOCKOFF_MLR_THREADS").output().unwrap()
}

fn stdout_json(o: &Output) -> Value {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn stderr_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stderr).unwrap()
}

/// Writes `x.csv`, `y.csv` and `beta.csv` for a linear model.
fn write_data(dir: &Path, n: usize, p: usize, signal: f64, seed: u64) {
    use knockoff_mlr::numeric::rng_stream;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rng_stream(seed, 99);
    let x = DMatrix::<f64>::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
    let beta = nalgebra::DVector::from_fn(p, |j, _| if j < p / 3 { signal } else { 0.0 });
    let noise = nalgebra::DVector::<f64>::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
    let y = &x * &beta + noise;
    knockoff_mlr::io::write_csv(&dir.join("x.csv"), &x, None).unwrap();
    knockoff_mlr::io::write_csv(&dir.join("y.csv"), &DMatrix::from_column_slice(n, 1, y.as_slice()), None)
        .unwrap();
    knockoff_mlr::io::write_csv(&dir.join("beta.csv"), &DMatrix::from_column_slice(p, 1, beta.as_slice()), None)
        .unwrap();
}

#[test]
fn filter_example() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("w.csv"), "3\n-2.5\n2\n1.5\n-1\n0.5\n").unwrap();
    let v = stdout_json(&run(&["filter", "--w", "w.csv", "--q", "1.0"], dir.path()));
    assert_eq!(v["rejected"], serde_json::json!([1, 3, 4, 6]));
    assert_eq!(v["threshold"], 0.5);
}

#[test]
fn exit_codes_and_error_json() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["nonsense"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["error"], "usage");

    std::fs::write(dir.path().join("w.csv"), "1\n2\n").unwrap();
    let o = run(&["filter", "--w", "w.csv", "--q", "0"], dir.path());
    assert_eq!(o.status.code(), Some(2));

    std::fs::write(dir.path().join("bad.csv"), "1,2\n3,oops\n").unwrap();
    let o = run(&["knockoffs", "--x", "bad.csv", "--out-xk", "k.csv"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let e = stderr_json(&o);
    assert_eq!(e["error"], "data");
    assert_eq!((e["row"].as_u64(), e["col"].as_u64()), (Some(2), Some(2)));

    let o = run(&["filter", "--w", "missing.csv"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_json(&o)["kind"], "io");

    let o = run(&["--help"], dir.path());
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn knockoffs_stats_filter_diagnose_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_data(d, 120, 12, 1.0, 1);
    let o = run(&["knockoffs", "--x", "x.csv", "--out-xk", "xk.csv", "--out-s", "s.csv"], d);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let xk = knockoff_mlr::io::read_csv(&d.join("xk.csv"), false).unwrap().data;
    assert_eq!(xk.shape(), (120, 12));

    let args = [
        "stats", "--x", "x.csv", "--xk", "xk.csv", "--y", "y.csv", "--method", "mlr", "--n-sample", "300",
        "--burn-in", "50", "--out", "w.json", "--trace-out", "trace.json", "--seed", "4",
    ];
    assert!(run(&args, d).status.success());
    let w: Value = serde_json::from_str(&std::fs::read_to_string(d.join("w.json")).unwrap()).unwrap();
    assert_eq!(w["w"].as_array().unwrap().len(), 12);
    assert_eq!(w["method"], "mlr");

    let rej = stdout_json(&run(&["filter", "--w", "w.json", "--q", "0.2"], d));
    assert!(rej["rejected"].as_array().unwrap().iter().all(|j| j.as_u64().unwrap() >= 1));

    let diag = stdout_json(&run(&["diagnose", "--trace", "trace.json", "--cov-out", "cov.csv"], d));
    assert_eq!(diag["samples"], 600);
    assert!(diag["max_offdiag_abs"].as_f64().unwrap() >= 0.0);
    assert!(d.join("cov.csv").exists());

    // Lasso statistics produce no trace.
    let o = run(&["stats", "--x", "x.csv", "--xk", "xk.csv", "--y", "y.csv", "--method", "lcd", "--trace-out", "t.json"], d);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn stats_are_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_data(d, 80, 6, 1.0, 2);
    assert!(run(&["knockoffs", "--x", "x.csv", "--out-xk", "xk.csv", "--framework", "model-x"], d).status.success());
    let args = [
        "stats", "--x", "x.csv", "--xk", "xk.csv", "--y", "y.csv", "--framework", "model-x", "--n-sample",
        "200", "--burn-in", "20", "--seed", "9",
    ];
    let a = run(&args, d);
    let b = run(&[&args[..], &["--threads", "1"]].concat(), d);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn pipeline_with_oracle_finds_signals() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_data(d, 300, 30, 1.0, 3);
    let args = ["pipeline", "--x", "x.csv", "--y", "y.csv", "--raw", "--method", "oracle", "--oracle-beta", "beta.csv", "--q", "0.2"];
    let v = stdout_json(&run(&args, d));
    let rej: Vec<u64> = v["rejected"].as_array().unwrap().iter().map(|j| j.as_u64().unwrap()).collect();
    assert!(rej.iter().filter(|&&j| j <= 10).count() >= 8, "{rej:?}");
    let o = run(&["pipeline", "--x", "x.csv", "--y", "y.csv", "--method", "oracle"], d);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn response_column_inside_design_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("xy.csv"),
        "a,b,y\n".to_string()
            + &(0..40)
                .map(|i| {
                    let a = ((i * 7) % 11) as f64 - 5.0;
                    let b = ((i * 5) % 13) as f64 - 6.0;
                    format!("{a},{b},{}\n", a + 0.3 * ((i * 3) % 7) as f64)
                })
                .collect::<String>(),
    )
    .unwrap();
    let v = stdout_json(&run(
        &["pipeline", "--x", "xy.csv", "--header", "--y-col", "y", "--method", "lcd", "--framework", "model-x", "--q", "0.5"],
        d,
    ));
    assert_eq!(v["statistics"]["w"].as_array().unwrap().len(), 2);
    let by_number = stdout_json(&run(
        &["pipeline", "--x", "xy.csv", "--header", "--y-col", "3", "--method", "lcd", "--framework", "model-x", "--q", "0.5"],
        d,
    ));
    assert_eq!(by_number["statistics"]["w"], v["statistics"]["w"]);
    let o = run(&["pipeline", "--x", "xy.csv", "--header", "--y-col", "0", "--method", "lcd"], d);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["pipeline", "--x", "xy.csv", "--header", "--method", "lcd"], d);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_is_byte_identical_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("cfg.json"),
        r#"{"n":80,"p":12,"cov_kind":{"kind":"ar1"},"sparsity":0.25,"coef_dist":"uniform","tau":1.0,
            "response":"linear","knockoff":{"framework":"fixed_x","s_method":"mvr"},
            "statistics":["lcd","lsm","mlr","oracle_mlr"],"q":0.2,"n_reps":4,"seed":3,
            "gibbs":{"n_sample":200,"burn_in":50}}"#,
    )
    .unwrap();
    let a = run(&["simulate", "--config", "cfg.json", "--threads", "1"], d);
    let b = run(&["simulate", "--config", "cfg.json", "--threads", "8", "--summary", "s.json"], d);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(String::from_utf8_lossy(&a.stdout).lines().count(), 16);
    let s: Value = serde_json::from_str(&std::fs::read_to_string(d.join("s.json")).unwrap()).unwrap();
    assert_eq!(s.as_array().unwrap().len(), 4);

    std::fs::write(d.join("typo.json"), r#"{"n":80,"pp":12}"#).unwrap();
    let o = run(&["simulate", "--config", "typo.json"], d);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn thread_count_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("w.csv"), "1\n-2\n").unwrap();
    let o = Command::new(BIN)
        .args(["filter", "--w", "w.csv"])
        .current_dir(dir.path())
        .env("KNOCKOFF_MLR_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

/// Global null through the binary: FDR is controlled.
#[test]
fn pipeline_null_fdr() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let q = 0.05;
    let mut fdps = Vec::new();
    for seed in 0..500u64 {
        write_data(d, 60, 10, 0.0, 1000 + seed);
        let s = seed.to_string();
        let v = stdout_json(&run(
            &["pipeline", "--x", "x.csv", "--y", "y.csv", "--method", "lcd", "--q", "0.05", "--seed", &s],
            d,
        ));
        // Every rejection is false under the global null.
        fdps.push(if v["rejected"].as_array().unwrap().is_empty() { 0.0 } else { 1.0 });
    }
    let n = fdps.len() as f64;
    let mean = fdps.iter().sum::<f64>() / n;
    let se = (mean * (1.0 - mean) / n).sqrt();
    assert!(mean <= q + 3.0 * se, "FDR {mean} > {q} + 3·{se}");
}
