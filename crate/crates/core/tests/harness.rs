use std::collections::BTreeSet;

use fmapg::exec::Exec;
use fmapg::harness::config::VerifyExperiment;
use fmapg::harness::output::{sidecar_path, CSV_HEADER};
use fmapg::harness::{
    execute, run_config, run_verification_suite, Experiment, ExperimentConfig, ExperimentKind, OutputFormat,
    RunOptions,
};

fn bandit_config() -> ExperimentConfig {
    let mut config = ExperimentConfig::with_defaults(ExperimentKind::Bandit);
    if let Experiment::Bandit(b) = &mut config.experiment {
        b.horizon = 40;
        b.record_every = 20;
    }
    config
}

#[test]
fn bandit_protocol_has_one_run_per_cell() {
    let (rows, meta, _, _) = execute(&bandit_config(), &RunOptions::default()).unwrap();
    let runs: BTreeSet<(String, u64, u64)> = rows
        .iter()
        .filter(|r| r.metric == "regret")
        .map(|r| (r.algorithm.clone(), r.eta.unwrap().to_bits(), r.seed.unwrap()))
        .collect();
    assert_eq!(runs.len(), 3 * 5 * 50);
    assert_eq!(rows.iter().filter(|r| r.metric == "selected_eta").count(), 3);
    assert!(meta.failures.is_empty());
}

#[test]
fn csv_and_json_carry_the_same_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = bandit_config();
    if let Experiment::Bandit(b) = &mut config.experiment {
        b.n_env_seeds = 2;
        b.eta_grid = vec![0.05];
    }
    let csv_path = dir.path().join("out.csv");
    let csv = run_config(&config, &RunOptions { out: Some(csv_path.clone()), ..Default::default() }).unwrap();
    config.output.format = OutputFormat::Json;
    let json_path = dir.path().join("out.json");
    run_config(&config, &RunOptions { out: Some(json_path.clone()), ..Default::default() }).unwrap();

    let mut reader = csv::Reader::from_path(&csv_path).unwrap();
    assert_eq!(reader.headers().unwrap(), CSV_HEADER.as_slice());
    let records: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
    let items = json.as_array().unwrap();
    assert_eq!(records.len(), csv.rows);
    assert_eq!(items.len(), records.len());
    for (rec, item) in records.iter().zip(items) {
        assert_eq!(rec[6], *item["metric"].as_str().unwrap());
        let value: f64 = rec[7].parse().unwrap();
        assert_eq!(value, item["value"].as_f64().unwrap());
    }
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(sidecar_path(&csv_path)).unwrap()).unwrap();
    assert_eq!(meta["rows"], csv.rows);
    assert!(meta["decisions"]["eta_selection"].is_string());
}

#[test]
fn results_do_not_depend_on_execution_mode() {
    for kind in [ExperimentKind::Cliff, ExperimentKind::TabularRandom] {
        let mut config = ExperimentConfig::with_defaults(kind);
        match &mut config.experiment {
            Experiment::Cliff(c) => c.outer_iters = 60,
            Experiment::TabularRandom(t) => {
                t.instances = 6;
                t.outer_iters = 8;
            }
            _ => unreachable!(),
        }
        let seq = execute(&config, &RunOptions { exec: Exec::Sequential, ..Default::default() }).unwrap().0;
        let par = execute(&config, &RunOptions { exec: Exec::Parallel, threads: Some(3), ..Default::default() })
            .unwrap()
            .0;
        assert_eq!(seq, par);
    }
}

#[test]
fn cliff_rows_report_optimum_and_selection() {
    let mut config = ExperimentConfig::with_defaults(ExperimentKind::Cliff);
    if let Experiment::Cliff(c) = &mut config.experiment {
        c.outer_iters = 200;
    }
    let (rows, ..) = execute(&config, &RunOptions::default()).unwrap();
    let optimum = rows.iter().find(|r| r.metric == "optimal_return").unwrap().value;
    assert!((optimum - 10.0 * 0.9f64.powi(8)).abs() < 1e-9);
    assert!(rows.iter().any(|r| r.algorithm == "mdpo" && r.metric == "selected_eta"));
    assert!(rows.iter().any(|r| r.algorithm == "sppo" && r.metric == "return" && r.step == Some(200)));
}

#[test]
fn default_verification_counts_pass() {
    let report = run_verification_suite(0, &VerifyExperiment::default(), Exec::Parallel);
    assert!(report.passed(), "{}", report.summary());
}

#[test]
fn invalid_configs_are_rejected_before_running() {
    let mut config = bandit_config();
    if let Experiment::Bandit(b) = &mut config.experiment {
        b.eta_grid.clear();
    }
    assert!(execute(&config, &RunOptions::default()).is_err());
    assert!(ExperimentConfig::from_json(r#"{"experiment": {"kind": "bandit", "horizon": 0}}"#).is_err());
}

#[test]
fn shipped_configs_load() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let config = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        config.validate().unwrap();
        seen += 1;
    }
    assert_eq!(seen, 4);
    let cliff = ExperimentConfig::load(&std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/cliff.json")).unwrap();
    assert_eq!(cliff.experiment, ExperimentConfig::with_defaults(ExperimentKind::Cliff).experiment);
}
