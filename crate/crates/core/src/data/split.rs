use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::RawSeries;
use crate::error::{Result, TimeCfError};

const DAYS_PER_MONTH: usize = 30;
const SECONDS_PER_DAY: i64 = 86_400;

/// How the chronological borders are placed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// 12 / 4 / 4 thirty-day months at the native sampling rate.
    EttMonths,
    /// 0.7 / 0.1 / 0.2 of the rows.
    Fractional,
}

impl std::str::FromStr for SplitMode {
    type Err = TimeCfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ett-months" => Ok(SplitMode::EttMonths),
            "fractional" => Ok(SplitMode::Fractional),
            other => Err(TimeCfError::Config(format!(
                "unknown split mode {other:?} (expected ett-months or fractional)"
            ))),
        }
    }
}

impl SplitMode {
    /// ETT-family datasets use month borders, everything else fractions.
    pub fn for_dataset(name: &str) -> Self {
        if name.to_ascii_uppercase().starts_with("ETT") {
            SplitMode::EttMonths
        } else {
            SplitMode::Fractional
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub lookback: usize,
    pub horizon: usize,
}

/// Row ranges of each split. `val` and `test` start `lookback` rows before
/// their label borders so the first window has full context.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
    pub val_border: usize,
    pub test_border: usize,
}

impl SplitRanges {
    pub fn val_labels(&self) -> Range<usize> {
        self.val_border..self.val.end
    }

    pub fn test_labels(&self) -> Range<usize> {
        self.test_border..self.test.end
    }
}

/// Chronological train / val / test borders.
pub fn split(raw: &RawSeries, spec: &SplitSpec) -> Result<SplitRanges> {
    let rows = raw.rows();
    let (t, f) = (spec.lookback, spec.horizon);
    if t == 0 || f == 0 {
        return Err(TimeCfError::Config(
            "lookback and horizon must be >= 1".into(),
        ));
    }
    let (train_end, val_end, test_end) = match spec.mode {
        SplitMode::EttMonths => {
            let spacing = raw
                .spacing()
                .ok_or_else(|| TimeCfError::Config("need at least two rows".into()))?
                .num_seconds();
            if spacing <= 0 || SECONDS_PER_DAY % spacing != 0 {
                return Err(TimeCfError::Config(format!(
                    "month borders need a spacing that divides one day, got {spacing}s"
                )));
            }
            let month = DAYS_PER_MONTH * (SECONDS_PER_DAY / spacing) as usize;
            let borders = (12 * month, 16 * month, 20 * month);
            if rows < borders.2 {
                return Err(TimeCfError::Config(format!(
                    "ett-months split needs at least {} rows, dataset has {rows}",
                    borders.2
                )));
            }
            borders
        }
        SplitMode::Fractional => {
            let train = rows * 7 / 10;
            let test = rows * 2 / 10;
            (train, rows - test, rows)
        }
    };
    let ranges = SplitRanges {
        train: 0..train_end,
        val: train_end.saturating_sub(t)..val_end,
        test: val_end.saturating_sub(t)..test_end,
        val_border: train_end,
        test_border: val_end,
    };
    let short = |label: &str, have: usize, need: usize| {
        TimeCfError::Config(format!(
            "{label} split has {have} label rows but lookback {t} + horizon {f} need at least {need}; \
             dataset has {rows} rows"
        ))
    };
    if train_end < t + f {
        return Err(short("train", train_end, t + f));
    }
    if val_end - train_end < f {
        return Err(short("validation", val_end - train_end, f));
    }
    if test_end - val_end < f {
        return Err(short("test", test_end - val_end, f));
    }
    Ok(ranges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::parse_csv;

    fn hourly(rows: usize) -> RawSeries {
        let start = chrono::NaiveDate::from_ymd_opt(2016, 7, 1)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap();
        let mut text = String::from("date,a\n");
        for r in 0..rows {
            let ts = start + chrono::TimeDelta::hours(r as i64);
            text.push_str(&format!("{},{}\n", ts.format("%Y-%m-%d %H:%M:%S"), r));
        }
        parse_csv(text.as_bytes()).unwrap()
    }

    #[test]
    fn ett_hourly_borders() {
        let raw = hourly(17_420);
        let spec = SplitSpec {
            mode: SplitMode::EttMonths,
            lookback: 96,
            horizon: 96,
        };
        let r = split(&raw, &spec).unwrap();
        assert_eq!(r.train, 0..8640);
        assert_eq!(r.val_labels(), 8640..11_520);
        assert_eq!(r.test_labels(), 11_520..14_400);
        assert_eq!(r.val.start, 8640 - 96);
        assert_eq!(r.test.start, 11_520 - 96);
    }

    #[test]
    fn fractional_borders_on_100_rows() {
        let raw = hourly(100);
        let spec = SplitSpec {
            mode: SplitMode::Fractional,
            lookback: 4,
            horizon: 2,
        };
        let r = split(&raw, &spec).unwrap();
        assert_eq!((r.val_border, r.test_border, r.test.end), (70, 80, 100));
        assert_eq!(r.val, 66..80);
    }

    #[test]
    fn too_short_names_minimum() {
        let raw = hourly(1000);
        let spec = SplitSpec {
            mode: SplitMode::EttMonths,
            lookback: 96,
            horizon: 96,
        };
        let err = split(&raw, &spec).unwrap_err().to_string();
        assert!(err.contains("14400"), "{err}");
    }

    #[test]
    fn fractional_window_shortage() {
        let raw = hourly(100);
        let spec = SplitSpec {
            mode: SplitMode::Fractional,
            lookback: 48,
            horizon: 24,
        };
        assert!(matches!(split(&raw, &spec), Err(TimeCfError::Config(_))));
    }

    #[test]
    fn dataset_name_picks_mode() {
        assert_eq!(SplitMode::for_dataset("ETTh1"), SplitMode::EttMonths);
        assert_eq!(SplitMode::for_dataset("weather"), SplitMode::Fractional);
    }
}
