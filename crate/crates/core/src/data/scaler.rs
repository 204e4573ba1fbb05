use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Result, TimeCfError};

/// Lower bound applied to fitted standard deviations.
pub const MIN_STD: f64 = 1e-8;

/// Per-channel z-score fitted on the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Scaler {
    /// Population mean and standard deviation of every column.
    pub fn fit(train: &Matrix) -> Result<Self> {
        if train.rows() == 0 {
            return Err(TimeCfError::Config(
                "cannot fit scaler on an empty split".into(),
            ));
        }
        let n = train.rows() as f64;
        let mut mean = Vec::with_capacity(train.cols());
        let mut std = Vec::with_capacity(train.cols());
        for c in 0..train.cols() {
            let m = train.column(c).sum::<f64>() / n;
            let var = train.column(c).map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            let mut s = var.sqrt();
            if s < MIN_STD {
                log::warn!("channel {c} is constant on the training split; clamping its std");
                s = MIN_STD;
            }
            mean.push(m);
            std.push(s);
        }
        Ok(Self { mean, std })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    fn check(&self, values: &Matrix) -> Result<()> {
        if values.cols() != self.mean.len() {
            return Err(TimeCfError::dim(
                "scaler",
                format!(
                    "fitted on {} channels, got {}",
                    self.mean.len(),
                    values.cols()
                ),
            ));
        }
        Ok(())
    }

    pub fn transform(&self, values: &Matrix) -> Result<Matrix> {
        self.check(values)?;
        let cols = values.cols();
        let data = values
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % cols]) / self.std[i % cols])
            .collect();
        Matrix::new(values.rows(), cols, data)
    }

    pub fn inverse_transform(&self, values: &Matrix) -> Result<Matrix> {
        self.check(values)?;
        let cols = values.cols();
        let data = values
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v * self.std[i % cols] + self.mean[i % cols])
            .collect();
        Matrix::new(values.rows(), cols, data)
    }
}
