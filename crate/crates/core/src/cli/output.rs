use std::cmp::Ordering;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::optim::IterationRecord;

pub const ROW_SCHEMA: &str = "rician-emi/result-rows/v1";
pub const REPORT_SCHEMA: &str = "rician-emi/validation-report/v1";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: String,
    pub r: usize,
    pub t: usize,
    pub snr_db: f64,
    pub quantity: String,
    pub value: f64,
    /// Empty for exact (deterministic) quantities.
    pub stderr: Option<f64>,
    pub seed: u64,
    pub wall_time_ms: Option<f64>,
}

impl ResultRow {
    fn canonical_cmp(&self, other: &Self) -> Ordering {
        (self.r, self.t)
            .cmp(&(other.r, other.t))
            .then(self.snr_db.total_cmp(&other.snr_db))
            .then_with(|| self.quantity.cmp(&other.quantity))
    }
}

/// One line of the optimizer trace file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceLine {
    pub r: usize,
    pub t: usize,
    pub snr_db: f64,
    #[serde(flatten)]
    pub record: IterationRecord,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub rows: Vec<ResultRow>,
    /// Extra `key: value` metadata (LOS angles per size and the like).
    pub metadata: Vec<String>,
    pub traces: Vec<TraceLine>,
}

impl RunOutput {
    /// Rows for `(r, t, snr_db, quantity)`, if present.
    pub fn value(&self, r: usize, t: usize, snr_db: f64, quantity: &str) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|row| row.r == r && row.t == t && row.snr_db == snr_db && row.quantity == quantity)
    }

    pub fn sort(&mut self) {
        self.rows.sort_by(ResultRow::canonical_cmp);
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: "<csv output>".into(),
            source,
        },
        other => Error::Config(format!("CSV serialization failed: {other:?}")),
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// `#` header lines: schema, version, config hash, the effective config and
/// run metadata.
pub fn header_lines(schema: &str, cfg: &ExperimentConfig, metadata: &[String]) -> Result<Vec<String>> {
    let mut lines = vec![
        format!("# schema: {schema}"),
        format!("# version: {VERSION}"),
        format!("# config_sha256: {}", cfg.hash()?),
    ];
    lines.extend(cfg.canonical_toml()?.lines().map(|l| format!("# config: {l}")));
    lines.extend(metadata.iter().map(|m| format!("# {m}")));
    Ok(lines)
}

pub fn write_rows<W: Write>(out: W, cfg: &ExperimentConfig, run: &RunOutput) -> Result<()> {
    let mut sorted = run.clone();
    sorted.sort();
    write_records(out, &header_lines(ROW_SCHEMA, cfg, &sorted.metadata)?, &sorted.rows)
}

pub(crate) fn write_records<W: Write, T: Serialize>(mut out: W, header: &[String], records: &[T]) -> Result<()> {
    let stdout_err = |source| Error::Io {
        path: "<output>".into(),
        source,
    };
    for line in header {
        writeln!(out, "{line}").map_err(stdout_err)?;
    }
    let mut w = csv::Writer::from_writer(out);
    for rec in records {
        w.serialize(rec).map_err(csv_err)?;
    }
    w.flush().map_err(stdout_err)?;
    Ok(())
}

/// Writes to `path`, or to stdout when `path` is `None`.
pub fn with_output<F>(path: Option<&Path>, f: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    match path {
        Some(p) => {
            let file = File::create(p).map_err(io_err(p))?;
            let mut w = BufWriter::new(file);
            f(&mut w).map_err(|e| reattach_path(e, p))?;
            w.flush().map_err(io_err(p))
        }
        None => f(&mut std::io::stdout().lock()),
    }
}

fn reattach_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Io { source, .. } => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    }
}

/// One JSON object per line.
pub fn write_trace(path: &Path, lines: &[TraceLine]) -> Result<()> {
    with_output(Some(path), |w| {
        for line in lines {
            let text = serde_json::to_string(line).map_err(|e| Error::Config(e.to_string()))?;
            writeln!(w, "{text}").map_err(io_err(path))?;
        }
        Ok(())
    })
}

/// Default trace location next to the CSV: `foo.csv` → `foo.trace.jsonl`.
pub fn default_trace_path(output: &Path) -> std::path::PathBuf {
    output.with_extension("trace.jsonl")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::config::Scenario;

    fn row(r: usize, snr: f64, q: &str) -> ResultRow {
        ResultRow {
            scenario: "optimize".into(),
            r,
            t: r,
            snr_db: snr,
            quantity: q.into(),
            value: 1.5,
            stderr: None,
            seed: 3,
            wall_time_ms: None,
        }
    }

    #[test]
    fn rows_are_sorted_and_headers_echo_config() {
        let cfg = ExperimentConfig::preset(Scenario::Optimize);
        let run = RunOutput {
            rows: vec![row(4, 10.0, "b"), row(2, 10.0, "a"), row(4, -5.0, "a"), row(4, 10.0, "a")],
            metadata: vec!["los: test".into()],
            traces: vec![],
        };
        let mut buf = Vec::new();
        write_rows(&mut buf, &cfg, &run).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let header: Vec<&str> = text.lines().take_while(|l| l.starts_with('#')).collect();
        assert_eq!(header[0], format!("# schema: {ROW_SCHEMA}"));
        assert!(header.iter().any(|l| l.starts_with("# config: scenario = \"optimize\"")));
        assert!(header.contains(&"# los: test"));
        let body: Vec<&str> = text.lines().skip(header.len()).collect();
        assert_eq!(body[0], "scenario,r,t,snr_db,quantity,value,stderr,seed,wall_time_ms");
        assert_eq!(body[1], "optimize,2,2,10.0,a,1.5,,3,");
        assert!(body[2].starts_with("optimize,4,4,-5.0,a"));
        assert!(body[4].starts_with("optimize,4,4,10.0,b"));
    }
}
