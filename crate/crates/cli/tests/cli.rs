use std::process::{Command, Output};

use serde_json::Value;

fn potts(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_potts")).args(args).output().unwrap()
}

fn json(args: &[&str]) -> Value {
    let out = potts(args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn eval_parisi_at_zero_temperature_is_log_two() {
    let v = json(&["eval-parisi", "--kappa", "2", "--beta", "0", "--lambda", "0", "--path", "uniform-r1"]);
    assert!((v["value"].as_f64().unwrap() - 2f64.ln()).abs() < 1e-12);
}

#[test]
fn one_site_free_energy_is_log_three() {
    let v = json(&["free-energy", "--N", "1", "--kappa", "3", "--beta", "1", "--samples", "10000"]);
    let est = v["estimate"].as_f64().unwrap();
    let se = v["se"].as_f64().unwrap();
    assert!((est - 3f64.ln()).abs() <= 3.0 * se.max(1e-15), "{est} ± {se}");
}

#[test]
fn bound_check_reports_all_three_sides() {
    let v = json(&["bound-check", "--N", "8", "--kappa", "2", "--beta", "1", "--samples", "50", "--reps", "50"]);
    assert!(v["upper"].as_f64().unwrap() >= v["lower"].as_f64().unwrap());
    assert!(v["pass"].is_boolean());
    assert!(v["middle_se"].as_f64().unwrap() > 0.0);
}

#[test]
fn bound_check_at_zero_temperature_is_flat() {
    let v = json(&["bound-check", "--N", "6", "--kappa", "3", "--beta", "0", "--samples", "5", "--reps", "20", "--refine-evals", "60"]);
    let l3 = 3f64.ln();
    assert!((v["middle"].as_f64().unwrap() - l3).abs() < 1e-12);
    assert!((v["upper"].as_f64().unwrap() - l3).abs() < 1e-9);
    assert!(v["lower"].as_f64().unwrap() <= l3 + 1e-12);
    assert_eq!(v["pass"], Value::Bool(true));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = potts(&["eval-parisi", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn invalid_input_exits_with_two() {
    let out = potts(&["eval-parisi", "--kappa", "2", "--d", "0.5,0.6"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn oversized_enumeration_exits_with_three() {
    let out = potts(&["free-energy", "--N", "40", "--kappa", "3"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn flags_override_the_config_file() {
    let dir = std::env::temp_dir().join(format!("potts-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("run.json");
    std::fs::write(&cfg, r#"{"seed": 4, "eval-parisi": {"kappa": 3, "beta": 0.0}}"#).unwrap();
    let c = cfg.to_str().unwrap();
    let from_file = json(&["--config", c, "eval-parisi"]);
    assert!((from_file["value"].as_f64().unwrap() - 3f64.ln()).abs() < 1e-9);
    let overridden = json(&["--config", c, "eval-parisi", "--kappa", "2"]);
    assert!((overridden["value"].as_f64().unwrap() - 2f64.ln()).abs() < 1e-9);
    std::fs::write(&cfg, r#"{"eval-parisi": {"kapa": 3}}"#).unwrap();
    assert_eq!(potts(&["--config", c, "eval-parisi"]).status.code(), Some(2));
}

#[test]
fn csv_goes_to_the_output_file() {
    let dir = std::env::temp_dir().join(format!("potts-csv-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let out = dir.join("fe.csv");
    let o = out.to_str().unwrap();
    let status = potts(&["free-energy", "--N", "4", "--kappa", "2", "--samples", "3", "--format", "csv", "--out", o]);
    assert!(status.status.success());
    let mut r = csv::Reader::from_path(&out).unwrap();
    assert_eq!(
        r.headers().unwrap().iter().collect::<Vec<_>>(),
        ["N", "kappa", "beta", "d", "estimate", "se", "method"]
    );
    let row = r.records().next().unwrap().unwrap();
    let est = &row[4];
    // 17 significant digits.
    assert_eq!(est.split('e').next().unwrap().replace(['.', '-'], "").len(), 17);
}

#[test]
fn output_does_not_depend_on_threads() {
    let args = ["diag-gg", "--arrays", "300", "--atoms", "50", "--resamples", "20", "--seed", "3"];
    let one = potts(&[&args[..], &["--threads", "1"]].concat());
    let eight = potts(&[&args[..], &["--threads", "8"]].concat());
    assert!(one.status.success());
    assert_eq!(one.stdout, eight.stdout);
}

/// Every subcommand runs with small budgets and its JSON parses back.
#[test]
fn every_subcommand_round_trips() {
    let runs: &[&[&str]] = &[
        &["eval-parisi", "--kappa", "3", "--beta", "1", "--lambda", "0.2", "--path", "random-r2"],
        &["eval-parisi", "--method", "cascade-mc", "--reps", "20", "--atoms", "30"],
        &["optimize", "--kappa", "2", "--beta", "1", "--d", "0.5,0.5", "--starts", "2"],
        &["optimize", "--kappa", "2", "--beta", "1", "--grid-mesh", "0.25", "--starts", "1", "--max-evals", "200"],
        &["free-energy", "--N", "4", "--kappa", "2", "--d", "0.5,0.5", "--method", "mcmc", "--samples", "2", "--sweeps", "200", "--burn-in", "50", "--ladder", "4"],
        &["cascade-verify", "--paths", "1", "--reps", "20", "--atoms", "30", "--cascades", "100"],
        &["diag-gg", "--arrays", "100", "--atoms", "30", "--resamples", "10", "--n", "3", "--f", "one"],
        &["diag-sync", "--arrays", "20", "--replicas", "6", "--atoms", "30"],
        &["diag-interp", "--reps", "20", "--atoms", "20"],
        &["diag-legendre", "--M", "2,4", "--reps", "20", "--atoms", "20", "--lambda-steps", "3"],
        &["ass-check", "--draws", "200"],
    ];
    for args in runs {
        let v = json(args);
        let text = serde_json::to_string(&v).unwrap();
        let back: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v, back, "{args:?}");
    }
}

fn typed<T: serde::de::DeserializeOwned + serde::Serialize>(args: &[&str]) {
    let v = json(args);
    let parsed: T = serde_json::from_value(v.clone()).unwrap();
    assert_eq!(serde_json::to_value(&parsed).unwrap(), v, "{args:?}");
}

#[test]
fn reports_parse_into_their_types() {
    use potts_core::model::{AssReport, FreeEnergyReport, McmcReport};
    use potts_core::optimize::OptimizerReport;
    typed::<FreeEnergyReport>(&["free-energy", "--N", "3", "--kappa", "2", "--samples", "4"]);
    typed::<McmcReport>(&[
        "free-energy", "--N", "4", "--kappa", "2", "--d", "0.5,0.5", "--method", "mcmc", "--samples", "2",
        "--sweeps", "100", "--burn-in", "20", "--ladder", "3",
    ]);
    typed::<OptimizerReport>(&["optimize", "--kappa", "2", "--d", "0.3,0.7", "--starts", "1"]);
    typed::<AssReport>(&["ass-check", "--draws", "100"]);
    typed::<potts_cli::BoundReport>(&["bound-check", "--N", "4", "--samples", "5", "--reps", "10", "--starts", "1"]);
}
