//! Result rows and their CSV / JSON serialization.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use super::config::OutputFormat;
use crate::Result;

pub const CSV_HEADER: [&str; 8] = ["experiment", "algorithm", "eta", "m", "seed", "step", "metric", "value"];

/// Directory override for relative output paths.
pub const OUT_DIR_ENV: &str = "FMAPG_OUT_DIR";

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment: String,
    pub algorithm: String,
    pub eta: Option<f64>,
    pub m: Option<usize>,
    pub seed: Option<u64>,
    pub step: Option<usize>,
    pub metric: String,
    pub value: f64,
}

/// Round-trippable float text: 17 significant digits, `inf` / `-inf` / `nan` otherwise.
pub fn format_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn opt<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_csv<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    writer.write_record(CSV_HEADER)?;
    for r in rows {
        writer.write_record([
            r.experiment.clone(),
            r.algorithm.clone(),
            r.eta.map(format_float).unwrap_or_default(),
            opt(r.m),
            opt(r.seed),
            opt(r.step),
            r.metric.clone(),
            format_float(r.value),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

fn json_float(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::String(format_float(x))
    }
}

pub fn write_json<W: Write>(rows: &[ResultRow], mut out: W) -> Result<()> {
    let values: Vec<Value> = rows
        .iter()
        .map(|r| {
            json!({
                "experiment": r.experiment,
                "algorithm": r.algorithm,
                "eta": r.eta.map(json_float),
                "m": r.m,
                "seed": r.seed,
                "step": r.step,
                "metric": r.metric,
                "value": json_float(r.value),
            })
        })
        .collect();
    serde_json::to_writer_pretty(&mut out, &values)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn write_rows(rows: &[ResultRow], path: &Path, format: OutputFormat) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    match format {
        OutputFormat::Csv => write_csv(rows, file),
        OutputFormat::Json => write_json(rows, file),
    }
}

/// Everything needed to interpret a results file.
#[derive(Debug, Clone, Serialize)]
pub struct Metadata {
    pub experiment: String,
    pub crate_version: &'static str,
    pub config: Value,
    /// Defaulted modelling choices that shape the results.
    pub decisions: BTreeMap<String, Value>,
    /// Cells that failed, keyed by cell id.
    pub failures: BTreeMap<String, String>,
    pub rows: usize,
    /// Wall-clock seconds since the Unix epoch; the only field that varies between reruns.
    pub generated_at: u64,
}

pub fn sidecar_path(results: &Path) -> PathBuf {
    let mut name = results.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    results.with_file_name(name)
}

pub fn write_metadata(meta: &Metadata, results: &Path) -> Result<PathBuf> {
    let path = sidecar_path(results);
    let mut text = serde_json::to_string_pretty(meta)?;
    text.push('\n');
    std::fs::write(&path, text)?;
    Ok(path)
}

pub fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Resolve the results path: `--out` beats the config; relative paths are placed under
/// `$FMAPG_OUT_DIR` when it is set.
pub fn resolve_output_path(cli: Option<&Path>, config: Option<&Path>, default_name: &str) -> PathBuf {
    let path = cli
        .or(config)
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(default_name));
    match std::env::var_os(OUT_DIR_ENV) {
        Some(dir) if path.is_relative() => PathBuf::from(dir).join(path),
        _ => path,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(value: f64) -> ResultRow {
        ResultRow {
            experiment: "e".into(),
            algorithm: "a,b".into(),
            eta: Some(0.1),
            m: None,
            seed: Some(3),
            step: Some(0),
            metric: "return".into(),
            value,
        }
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        write_csv(&[row(1.0 / 3.0), row(f64::INFINITY)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.split('\n').collect();
        assert_eq!(lines[0], "experiment,algorithm,eta,m,seed,step,metric,value");
        assert_eq!(lines[1], "e,\"a,b\",1.0000000000000001e-1,,3,0,return,3.3333333333333331e-1");
        assert!(lines[2].ends_with(",inf"));
        assert!(!text.contains('\r'));
    }

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, 4.304672100000001, -1e-300, 123456789.123] {
            assert_eq!(format_float(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn sidecar_naming() {
        assert_eq!(sidecar_path(Path::new("out/r.csv")), PathBuf::from("out/r.csv.meta.json"));
    }
}
