use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use timecf::data::{Freq, SplitMode};
use timecf::experiment::{
    emit_results, format_grad_report, read_records, run_eval, run_gradcheck, run_train, Overrides,
    Plan, ReportFormat, DATASET_ROOT_ENV,
};
use timecf::model::{AlphaMode, ConvMode};
use timecf::train::{OptimizerKind, SamThreshold, SamUpdate};
use timecf::TimeCfError;

/// Parses a kebab-case enum through its serde representation.
fn kebab<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|e| e.to_string())
}

#[derive(Parser)]
#[command(
    name = "timecf",
    version,
    about = "Train and evaluate multi-scale convolutional forecasters"
)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per (horizon, seed) and append results.
    Train(RunArgs),
    /// Score a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Finite-difference check of every primitive and of the tiny model loss.
    Gradcheck {
        #[arg(long, default_value_t = 5)]
        trials: usize,
        #[arg(long, default_value_t = 2021)]
        seed: u64,
        #[arg(long, default_value_t = 0.5)]
        alpha_loss: f64,
    },
    /// Summarize a results store.
    Report {
        #[arg(long, default_value = "runs/results.jsonl")]
        results: PathBuf,
        #[arg(long, default_value = "table")]
        format: ReportFormat,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML file with any of the options below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    /// CSV file; defaults to `<dataset-root>/<dataset>.csv`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, env = DATASET_ROOT_ENV)]
    dataset_root: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    lookback: Option<usize>,
    #[arg(long = "horizon")]
    horizons: Vec<usize>,
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    #[arg(long)]
    freq: Option<Freq>,
    #[arg(long)]
    split: Option<SplitMode>,
    #[arg(long)]
    alpha_loss: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    /// Update count, "epoch" or "inf".
    #[arg(long)]
    sam_threshold: Option<SamThreshold>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    pool_window: Option<usize>,
    #[arg(long)]
    scales: Option<usize>,
    #[arg(long)]
    decomp_kernel: Option<usize>,
    #[arg(long)]
    ffn_hidden: Option<usize>,
    #[arg(long)]
    alpha_conv_init: Option<f64>,
    /// learnable or fixed.
    #[arg(long, value_parser = kebab::<AlphaMode>)]
    alpha_mode: Option<AlphaMode>,
    /// full or depthwise.
    #[arg(long, value_parser = kebab::<ConvMode>)]
    conv_mode: Option<ConvMode>,
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    lr_floor: Option<f64>,
    /// base-optimizer or raw-sgd.
    #[arg(long, value_parser = kebab::<SamUpdate>)]
    sam_update: Option<SamUpdate>,
    /// adam or sgd.
    #[arg(long, value_parser = kebab::<OptimizerKind>)]
    optimizer: Option<OptimizerKind>,
    /// Remove the convolutional branch.
    #[arg(long)]
    no_conv: bool,
    /// Plain MSE training without sharpness-aware steps.
    #[arg(long)]
    no_samfre: bool,
    /// Reduce gradients in a fixed order.
    #[arg(long)]
    deterministic: bool,
}

impl RunArgs {
    fn plan(&self) -> Result<Plan, TimeCfError> {
        let file = match &self.config {
            Some(path) => Overrides::from_toml_file(path)?,
            None => Overrides::default(),
        };
        let mut cli = Overrides {
            dataset: self.dataset.clone(),
            data: self.data.clone(),
            dataset_root: self.dataset_root.clone(),
            out: self.out.clone(),
            lookback: self.lookback,
            horizons: (!self.horizons.is_empty()).then(|| self.horizons.clone()),
            seeds: (!self.seeds.is_empty()).then(|| self.seeds.clone()),
            freq: self.freq,
            split: self.split,
            no_conv: self.no_conv.then_some(true),
            no_samfre: self.no_samfre.then_some(true),
            ..Overrides::default()
        };
        cli.model.d_model = self.d_model;
        cli.model.blocks = self.blocks;
        cli.model.pool_window = self.pool_window;
        cli.model.scales = self.scales;
        cli.model.decomp_kernel = self.decomp_kernel;
        cli.model.ffn_hidden = self.ffn_hidden;
        cli.model.alpha_conv_init = self.alpha_conv_init;
        cli.model.alpha_mode = self.alpha_mode;
        cli.model.conv_mode = self.conv_mode;
        cli.train.lr_decay = self.lr_decay;
        cli.train.lr_floor = self.lr_floor;
        cli.train.sam_update = self.sam_update;
        cli.train.optimizer = self.optimizer;
        cli.train.alpha_loss = self.alpha_loss;
        cli.train.rho = self.rho;
        cli.train.sam_threshold = self.sam_threshold;
        cli.train.lr = self.lr;
        cli.train.epochs = self.epochs;
        cli.train.patience = self.patience;
        cli.train.batch_size = self.batch_size;
        cli.train.deterministic = self.deterministic.then_some(true);
        Plan::resolve(&file.layered(&cli), None)
    }
}

fn exit_code(e: &TimeCfError) -> u8 {
    match e {
        TimeCfError::Config(_) | TimeCfError::Usage(_) => 2,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<ExitCode, TimeCfError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| TimeCfError::Usage(e.to_string()))?;
    }
    match cli.command {
        Command::Train(args) => {
            let plan = args.plan()?;
            let mut records = Vec::new();
            for cfg in plan.runs() {
                let outcome = run_train(&cfg)?;
                println!("{}", serde_json::to_string(&outcome.record)?);
                log::info!(
                    "checkpoint {} (best epoch {} of {})",
                    outcome.checkpoint.display(),
                    outcome.best_epoch,
                    outcome.epochs_run
                );
                records.push(outcome.record);
            }
            eprint!("{}", emit_results(&records, ReportFormat::Table)?);
        }
        Command::Eval { run, checkpoint } => {
            let plan = run.plan()?;
            let runs = plan.runs();
            if runs.len() != 1 {
                return Err(TimeCfError::Usage(
                    "eval needs exactly one --horizon and one --seed".into(),
                ));
            }
            let m = run_eval(&runs[0], &checkpoint)?;
            println!("{}", serde_json::to_string(&m)?);
        }
        Command::Gradcheck {
            trials,
            seed,
            alpha_loss,
        } => {
            let report = run_gradcheck(trials, seed, alpha_loss)?;
            print!("{}", format_grad_report(&report));
            if !report.passed() {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Report { results, format } => {
            let records = read_records(&results)?;
            print!("{}", emit_results(&records, format)?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
