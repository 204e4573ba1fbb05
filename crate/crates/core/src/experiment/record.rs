use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TimeCfError};

/// Outcome of one training run, evaluated on the test split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub dataset: String,
    pub variant: String,
    pub lookback: usize,
    pub horizon: usize,
    pub seed: u64,
    pub mse: f64,
    pub mae: f64,
    pub param_count: usize,
    pub wall_clock_seconds: f64,
    pub fingerprint: String,
}

impl ResultRecord {
    /// Equality ignoring wall-clock time.
    pub fn same_outcome(&self, other: &ResultRecord) -> bool {
        let mut a = self.clone();
        a.wall_clock_seconds = other.wall_clock_seconds;
        &a == other
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = TimeCfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(TimeCfError::Usage(format!(
                "unknown format {other:?} (expected table, csv or json)"
            ))),
        }
    }
}

/// Appends one JSON line to `path`, creating parent directories.
pub fn append_record(path: &Path, record: &ResultRecord) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|source| TimeCfError::Path {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|source| TimeCfError::Path {
            path: path.to_path_buf(),
            source,
        })?;
    writeln!(file, "{}", serde_json::to_string(record)?)?;
    Ok(())
}

/// Reads a JSON-lines results store. Blank lines are skipped.
pub fn read_records(path: &Path) -> Result<Vec<ResultRecord>> {
    let file = std::fs::File::open(path).map_err(|source| TimeCfError::Path {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| TimeCfError::Format {
                line: i + 1,
                detail: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

pub fn records_from_csv(text: &str) -> Result<Vec<ResultRecord>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| TimeCfError::Format {
                line: i + 2,
                detail: e.to_string(),
            })
        })
        .collect()
}

/// Renders `records` in the requested format.
pub fn emit_results(records: &[ResultRecord], format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Table => table(records),
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in records {
                w.serialize(r)
                    .map_err(|e| TimeCfError::Usage(e.to_string()))?;
            }
            let bytes = w
                .into_inner()
                .map_err(|e| TimeCfError::Usage(e.to_string()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
        ReportFormat::Json => {
            let mut out = String::new();
            for r in records {
                out.push_str(&serde_json::to_string(r)?);
                out.push('\n');
            }
            Ok(out)
        }
    }
}

struct Row {
    horizon: usize,
    mse: f64,
    mae: f64,
    seeds: usize,
}

/// Seed-averaged metrics per (dataset, variant, horizon), with an average
/// row per group.
fn table(records: &[ResultRecord]) -> Result<String> {
    if records.is_empty() {
        return Err(TimeCfError::Usage("no result records to report".into()));
    }
    let mut groups: Vec<((&str, &str), Vec<&ResultRecord>)> = Vec::new();
    for r in records {
        let key = (r.dataset.as_str(), r.variant.as_str());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    let mut out = String::new();
    writeln!(
        out,
        "{:<12} {:<18} {:>8} {:>10} {:>10} {:>6}",
        "dataset", "variant", "horizon", "mse", "mae", "seeds"
    )
    .unwrap();
    for ((dataset, variant), rs) in groups {
        let mut horizons: Vec<usize> = rs.iter().map(|r| r.horizon).collect();
        horizons.sort_unstable();
        horizons.dedup();
        let rows: Vec<Row> = horizons
            .iter()
            .map(|&h| {
                let hs: Vec<_> = rs.iter().filter(|r| r.horizon == h).collect();
                let n = hs.len() as f64;
                Row {
                    horizon: h,
                    mse: hs.iter().map(|r| r.mse).sum::<f64>() / n,
                    mae: hs.iter().map(|r| r.mae).sum::<f64>() / n,
                    seeds: hs.len(),
                }
            })
            .collect();
        for row in &rows {
            writeln!(
                out,
                "{:<12} {:<18} {:>8} {:>10.4} {:>10.4} {:>6}",
                dataset, variant, row.horizon, row.mse, row.mae, row.seeds
            )
            .unwrap();
        }
        let n = rows.len() as f64;
        writeln!(
            out,
            "{:<12} {:<18} {:>8} {:>10.4} {:>10.4} {:>6}",
            dataset,
            variant,
            "avg",
            rows.iter().map(|r| r.mse).sum::<f64>() / n,
            rows.iter().map(|r| r.mae).sum::<f64>() / n,
            ""
        )
        .unwrap();
    }
    Ok(out)
}
