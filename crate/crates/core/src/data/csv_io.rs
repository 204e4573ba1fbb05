use std::fs::File;
use std::io::Read;
use std::path::Path;

use chrono::{NaiveDateTime, TimeDelta};

use super::Matrix;
use crate::error::{Result, TimeCfError};

const DATE_FORMATS: [&str; 2] = ["%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M"];

/// Multivariate series with equally spaced, strictly increasing timestamps.
#[derive(Clone, Debug)]
pub struct RawSeries {
    timestamps: Vec<NaiveDateTime>,
    values: Matrix,
    channels: Vec<String>,
}

impl RawSeries {
    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    /// `[rows x channels]`.
    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    /// Spacing between consecutive rows (`None` for fewer than two rows).
    pub fn spacing(&self) -> Option<TimeDelta> {
        match self.timestamps.as_slice() {
            [a, b, ..] => Some(*b - *a),
            _ => None,
        }
    }
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    DATE_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s.trim(), f).ok())
}

/// Reads a dataset whose first column is `date` and whose remaining columns
/// are numeric channels.
pub fn load_csv(path: &Path) -> Result<RawSeries> {
    let file = File::open(path).map_err(|source| TimeCfError::Path {
        path: path.to_path_buf(),
        source,
    })?;
    parse_csv(file)
}

pub fn parse_csv(reader: impl Read) -> Result<RawSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| TimeCfError::Format {
        line: 1,
        detail: e.to_string(),
    })?;
    if header.get(0).map(str::trim) != Some("date") {
        return Err(TimeCfError::Format {
            line: 1,
            detail: format!("first column must be \"date\", got {:?}", header.get(0)),
        });
    }
    let channels: Vec<String> = header
        .iter()
        .skip(1)
        .map(|s| s.trim().to_string())
        .collect();
    if channels.is_empty() {
        return Err(TimeCfError::Format {
            line: 1,
            detail: "no value columns".into(),
        });
    }
    let width = channels.len();

    let mut timestamps: Vec<NaiveDateTime> = Vec::new();
    let mut values = Vec::new();
    let mut spacing: Option<TimeDelta> = None;
    for record in rdr.records() {
        let record = record.map_err(|e| TimeCfError::Format {
            line: e.position().map_or(0, |p| p.line() as usize),
            detail: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != width + 1 {
            return Err(TimeCfError::Format {
                line,
                detail: format!("expected {} fields, found {}", width + 1, record.len()),
            });
        }
        let ts = parse_timestamp(&record[0]).ok_or_else(|| TimeCfError::Format {
            line,
            detail: format!("unparseable timestamp {:?}", &record[0]),
        })?;
        if let Some(&prev) = timestamps.last() {
            let step = ts - prev;
            if step <= TimeDelta::zero() {
                return Err(TimeCfError::Format {
                    line,
                    detail: format!("timestamp {ts} does not increase after {prev}"),
                });
            }
            match spacing {
                None => spacing = Some(step),
                Some(s) if s != step => {
                    return Err(TimeCfError::Format {
                        line,
                        detail: format!("irregular spacing: {step} after {s}"),
                    })
                }
                Some(_) => {}
            }
        }
        timestamps.push(ts);
        for (c, field) in record.iter().skip(1).enumerate() {
            let field = field.trim();
            if field.is_empty() {
                return Err(TimeCfError::Format {
                    line,
                    detail: format!("missing value in column {:?}", channels[c]),
                });
            }
            let v: f64 = field.parse().map_err(|_| TimeCfError::Format {
                line,
                detail: format!("unparseable value {field:?} in column {:?}", channels[c]),
            })?;
            if !v.is_finite() {
                return Err(TimeCfError::Format {
                    line,
                    detail: format!("non-finite value in column {:?}", channels[c]),
                });
            }
            values.push(v);
        }
    }
    let rows = timestamps.len();
    Ok(RawSeries {
        timestamps,
        values: Matrix::new(rows, width, values)?,
        channels,
    })
}
