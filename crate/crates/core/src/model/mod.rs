//! The forecaster: instance normalization, multi-scale downsampling,
//! embedding, stacked decomposable-mixing blocks and per-scale heads.

mod checkpoint;
mod config;
pub mod ops;
mod params;

pub use checkpoint::{CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use config::{AlphaMode, ConvMode, ModelConfig};
pub use ops::{
    conv_residual, decompose, embed, mix_seasons, mix_trends, multiscale_downsample, pdmc_forward,
    predict_head, revin_denormalize, revin_normalize, RevInStats,
};
pub use params::{count_parameters, layout, Bound, Init, ParamSpec, ParamStore};

use crate::data::WindowInstance;
use crate::error::{Result, TimeCfError};
use crate::tensor::{Tape, Tensor, Var};

/// Model inputs for a batch of univariate windows.
#[derive(Clone, Debug)]
pub struct Batch {
    /// RevIN-normalized lookbacks, `[B x T]`.
    x: Tensor,
    /// Calendar features, `[B x T x F_t]`.
    marks: Tensor,
    stats: Vec<RevInStats>,
    /// Targets `[B x F]`, when known.
    targets: Option<Tensor>,
}

impl Batch {
    /// `lookbacks[b]` has length `T`, `marks[b]` is `[T x F_t]` row-major and
    /// `targets[b]`, when given, has length `F`.
    pub fn new(
        cfg: &ModelConfig,
        lookbacks: &[&[f64]],
        marks: &[&[f64]],
        targets: Option<&[&[f64]]>,
    ) -> Result<Self> {
        let (t, f, ft) = (cfg.lookback, cfg.horizon, cfg.time_features);
        let batch = lookbacks.len();
        if batch == 0 {
            return Err(TimeCfError::Usage("empty batch".into()));
        }
        if marks.len() != batch || targets.is_some_and(|y| y.len() != batch) {
            return Err(TimeCfError::dim(
                "batch",
                "inputs, features and targets differ in count",
            ));
        }
        let mut x = Vec::with_capacity(batch * t);
        let mut m = Vec::with_capacity(batch * t * ft);
        let mut stats = Vec::with_capacity(batch);
        let mut y = Vec::with_capacity(batch * f);
        for b in 0..batch {
            let wrap = |source| TimeCfError::Batch {
                index: b,
                source: Box::new(source),
            };
            if lookbacks[b].len() != t {
                return Err(wrap(TimeCfError::dim(
                    "batch",
                    format!(
                        "lookback length {} but model expects {t}",
                        lookbacks[b].len()
                    ),
                )));
            }
            if marks[b].len() != t * ft {
                return Err(wrap(TimeCfError::dim(
                    "batch",
                    format!(
                        "{} time-feature values but model expects {t} x {ft}",
                        marks[b].len()
                    ),
                )));
            }
            if let Some(targets) = targets {
                if targets[b].len() != f {
                    return Err(wrap(TimeCfError::dim(
                        "batch",
                        format!("target length {} but horizon is {f}", targets[b].len()),
                    )));
                }
                y.extend_from_slice(targets[b]);
            }
            let (norm, s) = revin_normalize(lookbacks[b]);
            x.extend(norm);
            m.extend_from_slice(marks[b]);
            stats.push(s);
        }
        Ok(Self {
            x: Tensor::new(&[batch, t], x)?,
            marks: Tensor::new(&[batch, t, ft], m)?,
            stats,
            targets: match targets {
                Some(_) => Some(Tensor::new(&[batch, f], y)?),
                None => None,
            },
        })
    }

    pub fn from_instances(cfg: &ModelConfig, instances: &[WindowInstance]) -> Result<Self> {
        let xs: Vec<&[f64]> = instances.iter().map(|w| w.x.as_slice()).collect();
        let ms: Vec<&[f64]> = instances.iter().map(|w| w.x_mark.as_slice()).collect();
        let ys: Vec<&[f64]> = instances.iter().map(|w| w.y.as_slice()).collect();
        Self::new(cfg, &xs, &ms, Some(&ys))
    }

    pub fn len(&self) -> usize {
        self.stats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stats.is_empty()
    }

    pub fn stats(&self) -> &[RevInStats] {
        &self.stats
    }

    pub fn targets(&self) -> Option<&Tensor> {
        self.targets.as_ref()
    }
}

/// Configuration plus learnable state.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
}

impl Model {
    /// Seeded initialization; the config is validated first.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = ParamStore::init(&config, seed);
        Ok(Self { config, params })
    }

    /// All-zero parameters: forecasts equal each lookback's mean.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let params = ParamStore::zeros(&config);
        Ok(Self { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        if params.specs() != layout(&config).as_slice() {
            return Err(TimeCfError::Checkpoint(
                "parameter layout does not match the configuration".into(),
            ));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Records the full forward pass on `tape`; returns denormalized
    /// forecasts `[B x F]`.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, batch: &Batch) -> Result<Var> {
        let cfg = &self.config;
        let b = batch.len();
        let ft = cfg.time_features;
        let x = tape.constant(batch.x.clone());
        let series = multiscale_downsample(tape, x, cfg.pool_window, cfg.scales)?;
        let lens = cfg.scale_lengths();

        let mut marks = batch.marks.data().to_vec();
        let mut scales = Vec::with_capacity(cfg.scales);
        for (i, (&s, &len)) in series.iter().zip(&lens).enumerate() {
            if i > 0 {
                let prev = lens[i - 1];
                marks = marks
                    .chunks(prev * ft)
                    .flat_map(|rows| ops::downsample_marks(rows, prev, ft, cfg.pool_window))
                    .collect();
            }
            let m = tape.constant(Tensor::new(&[b, len, ft], marks.clone())?);
            scales.push(embed(tape, p, s, m)?);
        }
        for block in 0..cfg.blocks {
            scales = pdmc_forward(tape, p, cfg, block, scales)?;
        }
        let out = predict_head(tape, p, cfg, &scales)?;
        let std = batch.stats.iter().map(|s| s.std).collect();
        let mean = batch.stats.iter().map(|s| s.mean).collect();
        tape.row_affine(out, std, mean)
    }

    /// Forecasts for a batch without recording gradients.
    pub fn predict_batch(&self, batch: &Batch) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let out = self.forward(&mut tape, &p, batch)?;
        Ok(tape
            .value(out)
            .data()
            .chunks(self.config.horizon)
            .map(<[f64]>::to_vec)
            .collect())
    }

    /// Forecast of every instance, in input order.
    pub fn predict(&self, instances: &[WindowInstance]) -> Result<Vec<Vec<f64>>> {
        self.predict_batch(&Batch::from_instances(&self.config, instances)?)
    }
}
