use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use sha2::{Digest, Sha256};

use super::config::{hex, ExperimentConfig};
use super::record::{append_record, ResultRecord};
use crate::data::{parse_csv, prepare, PreparedData, SplitSpec};
use crate::error::{Result, TimeCfError};
use crate::model::{Model, ModelConfig};
use crate::train::{
    evaluate, fit, gradcheck_model, gradcheck_primitives, GradReport, Metrics, GRADCHECK_TOLERANCE,
};

/// A dataset loaded for one run, with the config bound to it.
pub struct LoadedRun {
    pub config: ExperimentConfig,
    pub data: PreparedData,
    pub data_sha256: String,
}

/// Reads and hashes the CSV, binds the data-dependent config fields and
/// builds the windows.
pub fn load_run(cfg: &ExperimentConfig) -> Result<LoadedRun> {
    cfg.validate()?;
    let bytes = std::fs::read(&cfg.data).map_err(|source| TimeCfError::Path {
        path: cfg.data.clone(),
        source,
    })?;
    let data_sha256 = hex(&Sha256::digest(&bytes));
    let raw = parse_csv(bytes.as_slice())?;
    let mut config = cfg.clone();
    config.bind_data(&raw)?;
    let spec = SplitSpec {
        mode: config.split,
        lookback: config.model.lookback,
        horizon: config.model.horizon,
    };
    let freq = config.freq.expect("bound above");
    let data = prepare(&raw, &spec, freq)?;
    Ok(LoadedRun {
        config,
        data,
        data_sha256,
    })
}

pub struct TrainOutcome {
    pub record: ResultRecord,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

fn create(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|source| TimeCfError::Path {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    File::create(path).map_err(|source| TimeCfError::Path {
        path: path.to_path_buf(),
        source,
    })
}

pub fn checkpoint_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out
        .join("checkpoints")
        .join(format!("{}.json", cfg.run_name()))
}

pub fn log_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out
        .join("logs")
        .join(format!("{}.jsonl", cfg.run_name()))
}

pub fn results_path(out: &Path) -> PathBuf {
    out.join("results.jsonl")
}

/// Trains one configuration, keeps the best-validation parameters, scores
/// them on the test split, saves the checkpoint and appends the record to
/// the results store.
pub fn run_train(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    let started = Instant::now();
    let loaded = load_run(cfg)?;
    let cfg = &loaded.config;
    log::info!(
        "{}: {} train / {} val / {} test windows",
        cfg.run_name(),
        loaded.data.train.len(),
        loaded.data.val.len(),
        loaded.data.test.len()
    );
    let mut model = Model::new(cfg.model.clone(), cfg.train.seed)?;
    let log = log_path(cfg);
    let mut writer = BufWriter::new(create(&log)?);
    let report = fit(
        &mut model,
        &loaded.data.train,
        &loaded.data.val,
        &cfg.train,
        |rec| {
            writeln!(writer, "{}", serde_json::to_string(rec)?)?;
            writer.flush()?;
            Ok(())
        },
    )?;
    let test = evaluate(&report.best, &loaded.data.test)?;
    let checkpoint = checkpoint_path(cfg);
    report.best.save_checkpoint(&checkpoint)?;
    let record = ResultRecord {
        dataset: cfg.dataset.clone(),
        variant: cfg.variant().into(),
        lookback: cfg.model.lookback,
        horizon: cfg.model.horizon,
        seed: cfg.train.seed,
        mse: test.mse,
        mae: test.mae,
        param_count: report.best.parameter_count(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        fingerprint: cfg.fingerprint(&loaded.data_sha256),
    };
    append_record(&results_path(&cfg.out), &record)?;
    Ok(TrainOutcome {
        record,
        checkpoint,
        log,
        best_epoch: report.best_epoch,
        epochs_run: report.epochs_run,
    })
}

/// Scores a saved checkpoint on the test split of `cfg`'s dataset. The
/// checkpoint's architecture must match the configuration exactly.
pub fn run_eval(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<Metrics> {
    let loaded = load_run(cfg)?;
    let model = Model::load_checkpoint_for(checkpoint, &loaded.config.model)?;
    evaluate(&model, &loaded.data.test)
}

/// Finite-difference check of every tape primitive and of every parameter
/// group of the tiny model's training loss.
pub fn run_gradcheck(trials: usize, seed: u64, alpha: f64) -> Result<GradReport> {
    let mut report = gradcheck_primitives(trials, seed)?;
    report
        .groups
        .extend(gradcheck_model(&ModelConfig::tiny(), alpha, trials, seed)?.groups);
    Ok(report)
}

pub fn format_grad_report(report: &GradReport) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{:<32} {:>8} {:>14}  status",
        "group", "params", "max rel err"
    )
    .unwrap();
    for g in &report.groups {
        let status = if g.max_rel_error < GRADCHECK_TOLERANCE {
            "ok"
        } else {
            "FAIL"
        };
        let params = if g.params == 0 {
            "-".to_string()
        } else {
            g.params.to_string()
        };
        writeln!(
            out,
            "{:<32} {:>8} {:>14.3e}  {status}",
            g.group, params, g.max_rel_error
        )
        .unwrap();
    }
    writeln!(
        out,
        "{} trials, worst {:.3e}, tolerance {:.0e}",
        report.trials,
        report.worst(),
        GRADCHECK_TOLERANCE
    )
    .unwrap();
    out
}
