use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{feature_count, Freq, RawSeries, SplitMode};
use crate::error::{Result, TimeCfError};
use crate::model::{AlphaMode, ConvMode, ModelConfig};
use crate::train::{OptimizerKind, SamThreshold, SamUpdate, TrainConfig};

/// Environment variable consulted when no dataset root is given.
pub const DATASET_ROOT_ENV: &str = "TIMECF_DATASET_ROOT";
pub const DEFAULT_DATASET: &str = "ETTh1";
pub const DEFAULT_LOOKBACK: usize = 96;
pub const DEFAULT_HORIZONS: [usize; 4] = [96, 192, 336, 720];
pub const DEFAULT_SEEDS: [u64; 3] = [2021, 2022, 2023];

/// Optional model fields of a config file or command line.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOverrides {
    pub pool_window: Option<usize>,
    pub scales: Option<usize>,
    pub d_model: Option<usize>,
    pub blocks: Option<usize>,
    pub decomp_kernel: Option<usize>,
    pub ffn_hidden: Option<usize>,
    pub alpha_conv_init: Option<f64>,
    pub alpha_mode: Option<AlphaMode>,
    pub conv_mode: Option<ConvMode>,
}

/// Optional training fields of a config file or command line.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOverrides {
    pub alpha_loss: Option<f64>,
    pub rho: Option<f64>,
    pub lr: Option<f64>,
    pub lr_decay: Option<f64>,
    pub lr_floor: Option<f64>,
    pub sam_threshold: Option<SamThreshold>,
    pub sam_update: Option<SamUpdate>,
    pub optimizer: Option<OptimizerKind>,
    pub epochs: Option<usize>,
    pub patience: Option<usize>,
    pub batch_size: Option<usize>,
    pub deterministic: Option<bool>,
}

/// Everything a config file may set. Every field has a command-line
/// counterpart; unset fields fall back to the next layer.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Overrides {
    pub dataset: Option<String>,
    pub data: Option<PathBuf>,
    pub dataset_root: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub lookback: Option<usize>,
    pub horizons: Option<Vec<usize>>,
    pub seeds: Option<Vec<u64>>,
    pub freq: Option<Freq>,
    pub split: Option<SplitMode>,
    pub no_conv: Option<bool>,
    pub no_samfre: Option<bool>,
    pub model: ModelOverrides,
    pub train: TrainOverrides,
}

macro_rules! layer {
    ($dst:expr, $src:expr, $($field:ident),*) => {
        $( if $src.$field.is_some() { $dst.$field = $src.$field.clone(); } )*
    };
}

impl Overrides {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| TimeCfError::Path {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| TimeCfError::Config(format!("{}: {e}", path.display())))
    }

    /// `self` with every field set in `top` replaced.
    pub fn layered(mut self, top: &Overrides) -> Self {
        layer!(
            self,
            top,
            dataset,
            data,
            dataset_root,
            out,
            lookback,
            horizons,
            seeds,
            freq,
            split,
            no_conv,
            no_samfre
        );
        layer!(
            self.model,
            top.model,
            pool_window,
            scales,
            d_model,
            blocks,
            decomp_kernel,
            ffn_hidden,
            alpha_conv_init,
            alpha_mode,
            conv_mode
        );
        layer!(
            self.train,
            top.train,
            alpha_loss,
            rho,
            lr,
            lr_decay,
            lr_floor,
            sam_threshold,
            sam_update,
            optimizer,
            epochs,
            patience,
            batch_size,
            deterministic
        );
        self
    }
}

/// One fully resolved run: a dataset, one horizon and one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: String,
    pub data: PathBuf,
    pub freq: Option<Freq>,
    pub split: SplitMode,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub no_conv: bool,
    pub no_samfre: bool,
    pub out: PathBuf,
}

/// A grid of runs sharing everything except horizon and seed.
#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    pub base: ExperimentConfig,
    pub horizons: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Plan {
    /// Applies `o` over the built-in defaults, resolves the dataset path
    /// (falling back to `env_root`), forces ablation fields and validates.
    /// Nothing is read from disk.
    pub fn resolve(o: &Overrides, env_root: Option<PathBuf>) -> Result<Self> {
        let dataset = o.dataset.clone().unwrap_or_else(|| DEFAULT_DATASET.into());
        let data = match (&o.data, o.dataset_root.clone().or(env_root)) {
            (Some(path), _) => path.clone(),
            (None, Some(root)) => root.join(format!("{dataset}.csv")),
            (None, None) => {
                return Err(TimeCfError::Config(format!(
                    "no dataset location: pass --data, --dataset-root or set {DATASET_ROOT_ENV}"
                )))
            }
        };
        let lookback = o.lookback.unwrap_or(DEFAULT_LOOKBACK);
        let horizons = o
            .horizons
            .clone()
            .unwrap_or_else(|| DEFAULT_HORIZONS.to_vec());
        let seeds = o.seeds.clone().unwrap_or_else(|| DEFAULT_SEEDS.to_vec());
        if horizons.is_empty() || seeds.is_empty() {
            return Err(TimeCfError::Config(
                "need at least one horizon and one seed".into(),
            ));
        }

        let wide =
            ["weather", "ecl", "electricity"].contains(&dataset.to_ascii_lowercase().as_str());
        let mut model = if wide {
            ModelConfig::wide(lookback, horizons[0], 1)
        } else {
            ModelConfig::ett(lookback, horizons[0], 1)
        };
        let m = &o.model;
        macro_rules! set {
            ($dst:expr, $src:expr, $($field:ident),*) => {
                $( if let Some(v) = $src.$field.clone() { $dst.$field = v; } )*
            };
        }
        if let Some(d) = m.d_model {
            // the hidden width follows the embedding width unless set explicitly
            model.ffn_hidden = 2 * d;
        }
        set!(
            model,
            m,
            pool_window,
            scales,
            d_model,
            blocks,
            decomp_kernel,
            ffn_hidden,
            alpha_conv_init,
            alpha_mode,
            conv_mode
        );
        if let Some(freq) = o.freq {
            model.time_features = feature_count(freq);
        }

        let mut train = TrainConfig {
            seed: seeds[0],
            ..TrainConfig::default()
        };
        let t = &o.train;
        set!(
            train,
            t,
            alpha_loss,
            rho,
            lr,
            lr_decay,
            lr_floor,
            sam_threshold,
            sam_update,
            optimizer,
            epochs,
            patience,
            batch_size,
            deterministic
        );

        let mut base = ExperimentConfig {
            split: o.split.unwrap_or_else(|| SplitMode::for_dataset(&dataset)),
            dataset,
            data,
            freq: o.freq,
            model,
            train,
            no_conv: o.no_conv.unwrap_or(false),
            no_samfre: o.no_samfre.unwrap_or(false),
            out: o.out.clone().unwrap_or_else(|| PathBuf::from("runs")),
        };
        base.apply_ablations();
        let plan = Plan {
            base,
            horizons,
            seeds,
        };
        for run in plan.runs() {
            run.validate()?;
        }
        Ok(plan)
    }

    /// Every (horizon, seed) combination, horizons outermost.
    pub fn runs(&self) -> Vec<ExperimentConfig> {
        let mut out = Vec::new();
        for &h in &self.horizons {
            for &s in &self.seeds {
                let mut cfg = self.base.clone();
                cfg.model.horizon = h;
                cfg.train.seed = s;
                out.push(cfg);
            }
        }
        out
    }
}

impl ExperimentConfig {
    /// Forces the fields implied by the ablation flags.
    pub fn apply_ablations(&mut self) {
        if self.no_conv {
            self.model.alpha_mode = AlphaMode::Fixed;
            self.model.alpha_conv_init = 0.0;
        }
        if self.no_samfre {
            self.train.alpha_loss = 0.0;
            self.train.sam_threshold = SamThreshold::Never;
        }
    }

    pub fn variant(&self) -> &'static str {
        match (self.no_conv, self.no_samfre) {
            (false, false) => "full",
            (true, false) => "no-conv",
            (false, true) => "no-samfre",
            (true, true) => "no-conv-no-samfre",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.is_empty() {
            return Err(TimeCfError::Config("dataset name is empty".into()));
        }
        self.model.validate()?;
        self.train.validate()?;
        if self.no_conv && self.model.conv_enabled() {
            return Err(TimeCfError::Config(
                "no_conv requires a fixed zero conv scale".into(),
            ));
        }
        if self.no_samfre
            && (self.train.alpha_loss != 0.0 || self.train.sam_threshold != SamThreshold::Never)
        {
            return Err(TimeCfError::Config(
                "no_samfre requires alpha_loss = 0 and no SAM phase".into(),
            ));
        }
        Ok(())
    }

    /// Fills in what depends on the data: channel count, frequency and the
    /// calendar feature width.
    pub fn bind_data(&mut self, raw: &RawSeries) -> Result<()> {
        let freq = match (self.freq, raw.spacing()) {
            (Some(f), _) => f,
            (None, Some(spacing)) => Freq::from_spacing(spacing),
            (None, None) => {
                return Err(TimeCfError::Config(
                    "dataset needs at least two rows".into(),
                ))
            }
        };
        self.freq = Some(freq);
        self.model.channels = raw.channels().len();
        self.model.time_features = feature_count(freq);
        self.validate()
    }

    /// File stem shared by this run's checkpoint and log.
    pub fn run_name(&self) -> String {
        format!(
            "{}_T{}_F{}_{}_s{}",
            self.dataset,
            self.model.lookback,
            self.model.horizon,
            self.variant(),
            self.train.seed
        )
    }

    /// SHA-256 over the canonical JSON of this config, the data digest and
    /// the crate version. File locations are left out: the same experiment
    /// on the same bytes has the same fingerprint wherever it runs.
    pub fn fingerprint(&self, data_digest: &str) -> String {
        let mut config = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = config.as_object_mut() {
            map.remove("data");
            map.remove("out");
        }
        let doc = serde_json::json!({
            "config": config,
            "data_sha256": data_digest,
            "version": env!("CARGO_PKG_VERSION"),
        });
        hex(&Sha256::digest(doc.to_string().as_bytes()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_data() -> Overrides {
        Overrides {
            data: Some("/data/ETTh1.csv".into()),
            ..Overrides::default()
        }
    }

    #[test]
    fn defaults_resolve() {
        let plan = Plan::resolve(&with_data(), None).unwrap();
        assert_eq!(plan.horizons, DEFAULT_HORIZONS);
        assert_eq!(plan.seeds, DEFAULT_SEEDS);
        assert_eq!(plan.runs().len(), 12);
        assert_eq!(plan.base.split, SplitMode::EttMonths);
        assert_eq!(plan.base.model.d_model, 16);
    }

    #[test]
    fn missing_location_is_config_error() {
        assert!(matches!(
            Plan::resolve(&Overrides::default(), None),
            Err(TimeCfError::Config(_))
        ));
        let plan = Plan::resolve(&Overrides::default(), Some("/srv/data".into())).unwrap();
        assert_eq!(plan.base.data, PathBuf::from("/srv/data/ETTh1.csv"));
    }

    #[test]
    fn command_line_beats_file_beats_default() {
        let file: Overrides =
            toml::from_str("[train]\nrho = 0.2\nepochs = 4\n[model]\nd_model = 8\n").unwrap();
        let cli = Overrides {
            train: TrainOverrides {
                epochs: Some(2),
                ..Default::default()
            },
            ..with_data()
        };
        let plan = Plan::resolve(&file.layered(&cli), None).unwrap();
        assert_eq!(plan.base.train.epochs, 2);
        assert_eq!(plan.base.train.rho, 0.2);
        assert_eq!(plan.base.model.d_model, 8);
        assert_eq!(plan.base.model.ffn_hidden, 16);
        assert_eq!(plan.base.train.patience, TrainConfig::default().patience);
    }

    #[test]
    fn unknown_file_keys_rejected() {
        assert!(toml::from_str::<Overrides>("learning_rate = 1.0").is_err());
    }

    #[test]
    fn ablation_diff_is_exactly_the_forced_fields() {
        let full = Plan::resolve(&with_data(), None).unwrap().base;
        let no_conv = Plan::resolve(
            &Overrides {
                no_conv: Some(true),
                ..with_data()
            },
            None,
        )
        .unwrap()
        .base;
        let mut d = full.model.diff(&no_conv.model);
        d.sort();
        assert_eq!(d.len(), 2);
        assert!(d[0].starts_with("alpha_conv_init") && d[1].starts_with("alpha_mode"));
        assert_eq!(full.train, no_conv.train);

        let no_samfre = Plan::resolve(
            &Overrides {
                no_samfre: Some(true),
                ..with_data()
            },
            None,
        )
        .unwrap()
        .base;
        assert_eq!(no_samfre.train.alpha_loss, 0.0);
        assert_eq!(no_samfre.train.sam_threshold, SamThreshold::Never);
        assert_eq!(no_samfre.model, full.model);
    }

    #[test]
    fn invalid_values_fail_before_any_io() {
        let bad = Overrides {
            train: TrainOverrides {
                alpha_loss: Some(1.5),
                ..Default::default()
            },
            data: Some("/definitely/not/here.csv".into()),
            ..Overrides::default()
        };
        assert!(matches!(
            Plan::resolve(&bad, None),
            Err(TimeCfError::Config(_))
        ));
    }

    #[test]
    fn fingerprint_tracks_config_and_data() {
        let a = Plan::resolve(&with_data(), None).unwrap().runs();
        assert_eq!(a[0].fingerprint("x"), a[0].fingerprint("x"));
        assert_ne!(a[0].fingerprint("x"), a[1].fingerprint("x"));
        assert_ne!(a[0].fingerprint("x"), a[0].fingerprint("y"));
        let mut moved = a[0].clone();
        moved.out = "/elsewhere".into();
        moved.data = "/mirror/ETTh1.csv".into();
        assert_eq!(moved.fingerprint("x"), a[0].fingerprint("x"));
    }
}
