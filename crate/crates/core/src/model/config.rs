use serde::{Deserialize, Serialize};

use crate::error::{Result, TimeCfError};
use crate::tensor::pool_len;

/// How the conv-residual scale is treated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaMode {
    /// One trainable scalar per block, initialized to `alpha_conv_init`.
    Learnable,
    /// Constant `alpha_conv_init`; a zero constant removes the conv branch.
    Fixed,
}

/// Channel structure of the conv-residual stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConvMode {
    /// `D -> D` kernels mixing all features.
    Full,
    /// One kernel per feature.
    Depthwise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Lookback length `T`.
    pub lookback: usize,
    /// Forecast length `F`.
    pub horizon: usize,
    /// Number of channels `N` in the source dataset.
    pub channels: usize,
    /// Pooling window `d` between consecutive scales.
    pub pool_window: usize,
    /// Number of scales `k`, including the input scale.
    pub scales: usize,
    /// Embedding width `D`.
    pub d_model: usize,
    /// Number of stacked mixing blocks `L`.
    pub blocks: usize,
    pub decomp_kernel: usize,
    pub ffn_hidden: usize,
    pub alpha_conv_init: f64,
    pub alpha_mode: AlphaMode,
    pub conv_mode: ConvMode,
    /// Width of the calendar feature vector.
    pub time_features: usize,
}

impl ModelConfig {
    /// Defaults for ETT-sized datasets.
    pub fn ett(lookback: usize, horizon: usize, channels: usize) -> Self {
        Self {
            lookback,
            horizon,
            channels,
            pool_window: 2,
            scales: 4,
            d_model: 16,
            blocks: 2,
            decomp_kernel: 25,
            ffn_hidden: 32,
            alpha_conv_init: 1.0,
            alpha_mode: AlphaMode::Learnable,
            conv_mode: ConvMode::Full,
            time_features: 4,
        }
    }

    /// Defaults for wider datasets (Weather, ECL).
    pub fn wide(lookback: usize, horizon: usize, channels: usize) -> Self {
        Self {
            d_model: 32,
            ffn_hidden: 64,
            ..Self::ett(lookback, horizon, channels)
        }
    }

    /// The small configuration used for finite-difference checks.
    pub fn tiny() -> Self {
        Self {
            lookback: 16,
            horizon: 8,
            channels: 1,
            pool_window: 2,
            scales: 3,
            d_model: 4,
            blocks: 2,
            decomp_kernel: 5,
            ffn_hidden: 8,
            alpha_conv_init: 1.0,
            alpha_mode: AlphaMode::Learnable,
            conv_mode: ConvMode::Full,
            time_features: 4,
        }
    }

    /// Sequence length of every scale, finest first.
    pub fn scale_lengths(&self) -> Vec<usize> {
        let mut lengths = Vec::with_capacity(self.scales);
        let mut len = self.lookback;
        for i in 0..self.scales {
            if i > 0 {
                len = pool_len(len, self.pool_window);
            }
            lengths.push(len);
        }
        lengths
    }

    /// False when the conv residual is disabled by a fixed zero scale.
    pub fn conv_enabled(&self) -> bool {
        !(self.alpha_mode == AlphaMode::Fixed && self.alpha_conv_init == 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(TimeCfError::Config(msg));
        if self.lookback < 2 {
            return fail(format!("lookback must be >= 2, got {}", self.lookback));
        }
        if self.horizon == 0 {
            return fail("horizon must be >= 1".into());
        }
        if self.channels == 0 {
            return fail("channels must be >= 1".into());
        }
        if self.scales == 0 {
            return fail("scales must be >= 1".into());
        }
        if self.scales > 1 && self.pool_window < 2 {
            return fail(format!(
                "pool_window must be >= 2 with several scales, got {}",
                self.pool_window
            ));
        }
        let lengths = self.scale_lengths();
        if lengths.windows(2).any(|w| w[1] >= w[0]) {
            return fail(format!(
                "lookback {} cannot be pooled {} times by {}: lengths {lengths:?} stop decreasing",
                self.lookback,
                self.scales - 1,
                self.pool_window
            ));
        }
        if self.blocks < 2 {
            return fail(format!("blocks must be >= 2, got {}", self.blocks));
        }
        if self.decomp_kernel.is_multiple_of(2) {
            return fail(format!(
                "decomp_kernel must be odd, got {}",
                self.decomp_kernel
            ));
        }
        if self.d_model == 0 || self.ffn_hidden == 0 || self.time_features == 0 {
            return fail("d_model, ffn_hidden and time_features must be >= 1".into());
        }
        if !self.alpha_conv_init.is_finite() {
            return fail("alpha_conv_init must be finite".into());
        }
        Ok(())
    }

    /// Names of the fields whose values differ, with both values.
    pub fn diff(&self, other: &ModelConfig) -> Vec<String> {
        let a = serde_json::to_value(self).expect("config serializes");
        let b = serde_json::to_value(other).expect("config serializes");
        let (a, b) = (a.as_object().unwrap(), b.as_object().unwrap());
        a.iter()
            .filter(|(k, v)| b.get(*k) != Some(v))
            .map(|(k, v)| format!("{k}: {v} vs {}", b[k]))
            .collect()
    }
}
