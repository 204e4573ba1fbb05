use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::objective::{evaluate, BatchObjective, Metrics};
use super::optim::OptimizerKind;
use super::sam::{gated_step, OptimizerState, SamUpdate};
use super::LossBreakdown;
use crate::data::{WindowInstance, WindowSet};
use crate::error::{Result, TimeCfError};
use crate::model::Model;

/// Number of updates after which sharpness-aware steps take over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamThreshold {
    Updates(u64),
    /// As many updates as one epoch has batches.
    OneEpoch,
    Never,
}

impl SamThreshold {
    pub fn resolve(self, batches_per_epoch: u64) -> u64 {
        match self {
            SamThreshold::Updates(n) => n,
            SamThreshold::OneEpoch => batches_per_epoch,
            SamThreshold::Never => u64::MAX,
        }
    }
}

impl FromStr for SamThreshold {
    type Err = TimeCfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "epoch" => Ok(SamThreshold::OneEpoch),
            "inf" | "never" => Ok(SamThreshold::Never),
            n => n.parse().map(SamThreshold::Updates).map_err(|_| {
                TimeCfError::Config(format!(
                    "sam threshold must be an update count, \"epoch\" or \"inf\", got {s:?}"
                ))
            }),
        }
    }
}

impl fmt::Display for SamThreshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SamThreshold::Updates(n) => write!(f, "{n}"),
            SamThreshold::OneEpoch => f.write_str("epoch"),
            SamThreshold::Never => f.write_str("inf"),
        }
    }
}

impl Serialize for SamThreshold {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SamThreshold {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(u64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(n) => Ok(SamThreshold::Updates(n)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the frequency term in the loss.
    pub alpha_loss: f64,
    /// SAM neighborhood radius.
    pub rho: f64,
    pub lr: f64,
    /// Per-epoch multiplicative learning-rate decay.
    pub lr_decay: f64,
    pub lr_floor: f64,
    pub sam_threshold: SamThreshold,
    pub sam_update: SamUpdate,
    pub optimizer: OptimizerKind,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha_loss: 0.5,
            rho: 0.05,
            lr: 0.01,
            lr_decay: 0.5,
            lr_floor: 1e-5,
            sam_threshold: SamThreshold::OneEpoch,
            sam_update: SamUpdate::BaseOptimizer,
            optimizer: OptimizerKind::Adam,
            epochs: 10,
            patience: 3,
            batch_size: 128,
            seed: 2021,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(TimeCfError::Config(m));
        if !(0.0..=1.0).contains(&self.alpha_loss) {
            return fail(format!(
                "alpha_loss must lie in [0, 1], got {}",
                self.alpha_loss
            ));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return fail(format!("rho must be finite and >= 0, got {}", self.rho));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be finite and > 0, got {}", self.lr));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return fail(format!(
                "lr_decay must lie in (0, 1], got {}",
                self.lr_decay
            ));
        }
        if !(self.lr_floor >= 0.0 && self.lr_floor.is_finite()) {
            return fail(format!(
                "lr_floor must be finite and >= 0, got {}",
                self.lr_floor
            ));
        }
        if self.epochs == 0 {
            return fail("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        Ok(())
    }

    /// Learning rate used during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        (self.lr * self.lr_decay.powi(epoch as i32)).max(self.lr_floor)
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub epoch: usize,
    /// Updates applied so far.
    pub step: u64,
    /// Epoch means of the training loss terms.
    pub freq: f64,
    pub mse: f64,
    pub total: f64,
    pub val_mse: f64,
    pub val_mae: f64,
    pub lr: f64,
    pub sam_engaged: bool,
}

#[derive(Clone, Debug)]
pub struct FitReport {
    /// Parameters of the epoch with the lowest validation MSE.
    pub best: Model,
    pub best_val: Metrics,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub log: Vec<LogRecord>,
}

/// Trains `model` in place and returns the best-validation snapshot.
/// `on_epoch` sees every log record as soon as it is produced.
pub fn fit(
    model: &mut Model,
    train: &WindowSet,
    val: &WindowSet,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&LogRecord) -> Result<()>,
) -> Result<FitReport> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(TimeCfError::Config(
            "train and validation splits must be non-empty".into(),
        ));
    }
    let batches_per_epoch = train.len().div_ceil(cfg.batch_size) as u64;
    let threshold = cfg.sam_threshold.resolve(batches_per_epoch);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = OptimizerState::new(cfg.optimizer, model.params().tensors());
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut best: Option<(Model, Metrics, usize)> = None;
    let mut stale = 0usize;
    let mut log = Vec::new();
    let mut epochs_run = 0;
    let mut bad_in_a_row = 0usize;

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        let mut counted = 0usize;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let instances: Vec<WindowInstance> = idx.iter().map(|&i| train.instance(i)).collect();
            let snapshot = model.clone();
            let objective =
                BatchObjective::new(&snapshot, &instances, cfg.alpha_loss, cfg.deterministic)?;
            let result = gated_step(
                &objective,
                model.params_mut().tensors_mut(),
                &mut state,
                lr,
                cfg.rho,
                threshold,
                cfg.sam_update,
            );
            match result {
                Ok(loss) => {
                    bad_in_a_row = 0;
                    sum.add_weighted(&loss, instances.len() as f64);
                    counted += instances.len();
                }
                Err(TimeCfError::NonFiniteLoss { .. }) => {
                    bad_in_a_row += 1;
                    log::warn!("epoch {epoch} batch {b}: non-finite loss, update skipped");
                    if bad_in_a_row >= 2 {
                        return Err(TimeCfError::NonFiniteLoss { batch: b });
                    }
                }
                Err(e) => return Err(e),
            }
        }
        epochs_run += 1;
        let val_metrics = evaluate(model, val)?;
        let n = counted.max(1) as f64;
        let record = LogRecord {
            epoch,
            step: state.updates,
            freq: sum.freq / n,
            mse: sum.mse / n,
            total: sum.total / n,
            val_mse: val_metrics.mse,
            val_mae: val_metrics.mae,
            lr,
            sam_engaged: state.sam_engaged,
        };
        log::info!(
            "epoch {epoch}: train {:.6} (freq {:.6}, mse {:.6}) val mse {:.6} mae {:.6}",
            record.total,
            record.freq,
            record.mse,
            record.val_mse,
            record.val_mae
        );
        on_epoch(&record)?;
        log.push(record);

        let improved = best
            .as_ref()
            .is_none_or(|(_, m, _)| val_metrics.mse < m.mse);
        if improved {
            best = Some((model.clone(), val_metrics, epoch));
            stale = 0;
        } else {
            stale += 1;
        }
        if stale >= cfg.patience {
            break;
        }
    }
    let (best, best_val, best_epoch) = best.expect("at least one epoch ran");
    Ok(FitReport {
        best,
        best_val,
        best_epoch,
        epochs_run,
        log,
    })
}
