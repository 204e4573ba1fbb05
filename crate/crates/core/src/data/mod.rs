//! Dataset ingestion: CSV loading, chronological splits, standardization,
//! calendar features and channel-independent sliding windows.

mod csv_io;
mod scaler;
mod split;
mod time_features;
mod windows;

pub use csv_io::{load_csv, parse_csv, RawSeries};
pub use scaler::Scaler;
pub use split::{split, SplitMode, SplitRanges, SplitSpec};
pub use time_features::{feature_count, time_features, Freq};
pub use windows::{make_windows, WindowInstance, WindowSet};

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TimeCfError};

/// Row-major real matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(TimeCfError::dim(
                "matrix",
                format!(
                    "{rows} x {cols} needs {} values, got {}",
                    rows * cols,
                    data.len()
                ),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn column(&self, c: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.rows).map(move |r| self.get(r, c))
    }

    /// Copy of the given row range.
    pub fn slice_rows(&self, range: Range<usize>) -> Matrix {
        Matrix {
            rows: range.len(),
            cols: self.cols,
            data: self.data[range.start * self.cols..range.end * self.cols].to_vec(),
        }
    }
}

/// Standardized train/val/test windows plus the scaler fitted on train.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub train: WindowSet,
    pub val: WindowSet,
    pub test: WindowSet,
    pub scaler: Scaler,
    pub ranges: SplitRanges,
    pub freq: Freq,
    pub channels: Vec<String>,
}

/// Splits `raw`, fits the scaler on the training rows only, standardizes
/// every row with it and cuts each split into windows.
pub fn prepare(raw: &RawSeries, spec: &SplitSpec, freq: Freq) -> Result<PreparedData> {
    let ranges = split(raw, spec)?;
    let scaler = Scaler::fit(&raw.values().slice_rows(ranges.train.clone()))?;
    let standardized = scaler.transform(raw.values())?;
    let marks = time_features(raw.timestamps(), freq);
    let window = |r: &Range<usize>| {
        make_windows(
            standardized.slice_rows(r.clone()),
            marks.slice_rows(r.clone()),
            spec.lookback,
            spec.horizon,
        )
    };
    Ok(PreparedData {
        train: window(&ranges.train)?,
        val: window(&ranges.val)?,
        test: window(&ranges.test)?,
        scaler,
        ranges,
        freq,
        channels: raw.channels().to_vec(),
    })
}
