use std::sync::Arc;

use super::Matrix;
use crate::error::{Result, TimeCfError};

/// One univariate training example cut from a single channel.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowInstance {
    pub channel: usize,
    /// Lookback values, length `T`.
    pub x: Vec<f64>,
    /// Target values, length `F`, starting right after `x`.
    pub y: Vec<f64>,
    /// `[T x F_t]` row-major calendar features aligned with `x`.
    pub x_mark: Vec<f64>,
    /// `[F x F_t]` row-major calendar features aligned with `y`.
    pub y_mark: Vec<f64>,
}

/// Every `(start, channel)` window of one split. Instances are materialized
/// on demand; index `i` maps to start `i / channels` and channel
/// `i % channels`.
#[derive(Clone, Debug)]
pub struct WindowSet {
    values: Arc<Matrix>,
    marks: Arc<Matrix>,
    lookback: usize,
    horizon: usize,
    starts: usize,
}

/// Channel-independent sliding windows with one instance per start position
/// and channel.
pub fn make_windows(
    values: Matrix,
    marks: Matrix,
    lookback: usize,
    horizon: usize,
) -> Result<WindowSet> {
    if marks.rows() != values.rows() {
        return Err(TimeCfError::dim(
            "make_windows",
            format!(
                "{} value rows but {} feature rows",
                values.rows(),
                marks.rows()
            ),
        ));
    }
    if lookback == 0 || horizon == 0 {
        return Err(TimeCfError::Config(
            "lookback and horizon must be >= 1".into(),
        ));
    }
    let need = lookback + horizon;
    if values.rows() < need {
        return Err(TimeCfError::Config(format!(
            "split has {} rows, windows need at least {need}",
            values.rows()
        )));
    }
    Ok(WindowSet {
        starts: values.rows() - need + 1,
        values: Arc::new(values),
        marks: Arc::new(marks),
        lookback,
        horizon,
    })
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.starts * self.channels()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn starts(&self) -> usize {
        self.starts
    }

    pub fn channels(&self) -> usize {
        self.values.cols()
    }

    pub fn lookback(&self) -> usize {
        self.lookback
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn feature_width(&self) -> usize {
        self.marks.cols()
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn instance(&self, index: usize) -> WindowInstance {
        assert!(
            index < self.len(),
            "window {index} out of range {}",
            self.len()
        );
        let channels = self.channels();
        let (start, channel) = (index / channels, index % channels);
        let mid = start + self.lookback;
        let end = mid + self.horizon;
        let fw = self.marks.cols();
        let marks = self.marks.data();
        WindowInstance {
            channel,
            x: (start..mid).map(|r| self.values.get(r, channel)).collect(),
            y: (mid..end).map(|r| self.values.get(r, channel)).collect(),
            x_mark: marks[start * fw..mid * fw].to_vec(),
            y_mark: marks[mid * fw..end * fw].to_vec(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = WindowInstance> + '_ {
        (0..self.len()).map(|i| self.instance(i))
    }
}
