//! Experiment harness: configuration, orchestration, result emission and the
//! verification suite.

pub mod config;
pub mod experiments;
pub mod output;
pub mod verification;

use std::path::{Path, PathBuf};

use serde_json::json;

pub use config::{Experiment, ExperimentConfig, ExperimentKind, OutputFormat};
pub use output::ResultRow;
pub use verification::{run_verification_suite, CheckResult, VerificationReport};

use crate::exec::{with_threads, Exec};
use crate::{Error, Result};

/// Process exit statuses.
pub mod exit {
    pub const OK: i32 = 0;
    pub const VALIDATION: i32 = 1;
    pub const VERIFICATION: i32 = 2;
    pub const NUMERICAL: i32 = 3;
}

/// Exit status for an error that aborted a run before results were written.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Validation { .. } | Error::Configuration(_) | Error::InvalidInput(_) | Error::Json(_) => {
            exit::VALIDATION
        }
        Error::Io(_) | Error::Csv(_) => exit::VALIDATION,
        _ => exit::NUMERICAL,
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides `output.path`.
    pub out: Option<PathBuf>,
    /// Worker threads; `None` uses the default pool.
    pub threads: Option<usize>,
    pub exec: Exec,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub results: PathBuf,
    pub metadata: PathBuf,
    pub rows: usize,
    pub failures: usize,
    pub verification: Option<VerificationReport>,
    pub exit_code: i32,
}

/// Rows and sidecar metadata for a validated config, without touching the filesystem.
pub fn execute(config: &ExperimentConfig, options: &RunOptions) -> Result<(Vec<ResultRow>, output::Metadata, Option<VerificationReport>, bool)> {
    config.validate()?;
    let id = config.experiment_id();
    let exec = options.exec;
    let (outcome, report) = with_threads(options.threads, || match &config.experiment {
        Experiment::Bandit(b) => (experiments::run_bandit_experiment(&id, b, config.seed, exec), None),
        Experiment::Cliff(c) => (experiments::run_cliff_experiment(&id, c, config.seed, exec), None),
        Experiment::TabularRandom(t) => {
            (experiments::run_tabular_experiment(&id, t, config.seed, exec), None)
        }
        Experiment::Verify(v) => {
            let report = run_verification_suite(config.seed, v, exec);
            let mut outcome = experiments::Outcome { rows: report.rows(&id), ..Default::default() };
            outcome.decisions.insert("counts".into(), json!(v));
            (outcome, Some(report))
        }
    });
    let meta = output::Metadata {
        experiment: id,
        crate_version: env!("CARGO_PKG_VERSION"),
        config: serde_json::to_value(config)?,
        decisions: outcome.decisions,
        failures: outcome.failures,
        rows: outcome.rows.len(),
        generated_at: output::now_unix(),
    };
    Ok((outcome.rows, meta, report, outcome.numerical_failure))
}

/// Validate, run every cell, write the results file and its metadata sidecar.
pub fn run_config(config: &ExperimentConfig, options: &RunOptions) -> Result<RunSummary> {
    let default_name = format!(
        "{}.{}",
        config.experiment_id().replace('/', "_"),
        match config.output.format {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        }
    );
    let path = output::resolve_output_path(
        options.out.as_deref(),
        config.output.path.as_deref(),
        &default_name,
    );
    let (rows, meta, report, numerical) = execute(config, options)?;
    output::write_rows(&rows, &path, config.output.format)?;
    let metadata = output::write_metadata(&meta, &path)?;

    let exit_code = if report.as_ref().is_some_and(|r| !r.passed()) {
        exit::VERIFICATION
    } else if !meta.failures.is_empty() {
        if numerical { exit::NUMERICAL } else { exit::VALIDATION }
    } else {
        exit::OK
    };
    Ok(RunSummary {
        results: path,
        metadata,
        rows: rows.len(),
        failures: meta.failures.len(),
        verification: report,
        exit_code,
    })
}

/// Load a config file, or fall back to the defaults for `kind`.
pub fn load_or_default(path: Option<&Path>, kind: ExperimentKind) -> Result<ExperimentConfig> {
    let config = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::with_defaults(kind),
    };
    if config.experiment.kind() != kind {
        return Err(Error::validation(
            "experiment.kind",
            format!(
                "config describes a {} experiment, expected {}",
                config.experiment.kind().name(),
                kind.name()
            ),
        ));
    }
    Ok(config)
}
