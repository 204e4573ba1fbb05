//! Calendar features scaled affinely onto `[-0.5, 0.5]`.

use chrono::{Datelike, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::TimeCfError;

/// Sampling frequency that selects the feature set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Freq {
    /// Hourly: hour-of-day, day-of-week, day-of-month, month-of-year.
    #[serde(rename = "h")]
    Hourly,
    /// Minute-level: minute-of-hour plus the hourly set.
    #[serde(rename = "t")]
    Minutely,
}

impl std::str::FromStr for Freq {
    type Err = TimeCfError;

    fn from_str(s: &str) -> Result<Self, TimeCfError> {
        match s {
            "h" => Ok(Freq::Hourly),
            "t" => Ok(Freq::Minutely),
            other => Err(TimeCfError::Config(format!(
                "unknown frequency {other:?} (expected h or t)"
            ))),
        }
    }
}

impl Freq {
    /// Sub-hourly spacing selects minute features.
    pub fn from_spacing(spacing: chrono::TimeDelta) -> Self {
        if spacing < chrono::TimeDelta::hours(1) {
            Freq::Minutely
        } else {
            Freq::Hourly
        }
    }
}

pub fn feature_count(freq: Freq) -> usize {
    match freq {
        Freq::Hourly => 4,
        Freq::Minutely => 5,
    }
}

fn scaled(value: u32, max: u32) -> f64 {
    f64::from(value) / f64::from(max) - 0.5
}

/// `[rows x feature_count(freq)]` calendar features.
pub fn time_features(timestamps: &[NaiveDateTime], freq: Freq) -> Matrix {
    let width = feature_count(freq);
    let mut data = Vec::with_capacity(timestamps.len() * width);
    for ts in timestamps {
        if freq == Freq::Minutely {
            data.push(scaled(ts.minute(), 59));
        }
        data.push(scaled(ts.hour(), 23));
        data.push(scaled(ts.weekday().num_days_from_monday(), 6));
        data.push(scaled(ts.day0(), 30));
        data.push(scaled(ts.month0(), 11));
    }
    Matrix::new(timestamps.len(), width, data).expect("width matches pushes")
}
