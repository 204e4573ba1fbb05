//! Exit-gate checks. Runs every criterion in order and prints one line each;
//! the process fails if any criterion fails.

use std::env;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use timecf::data::WindowInstance;
use timecf::experiment::{
    run_train, Overrides, Plan, ResultRecord, TrainOverrides, DATASET_ROOT_ENV,
};
use timecf::model::{
    decompose, multiscale_downsample, pdmc_forward, revin_denormalize, revin_normalize, Model,
    ModelConfig, ParamStore,
};
use timecf::tensor::{Tape, Tensor, Var};
use timecf::train::{
    base_step, gradcheck_model, gradcheck_primitives, sam_step, samfre_loss, BatchObjective,
    LossBreakdown, Objective, OptimizerKind, OptimizerState, SamUpdate, GRADCHECK_TOLERANCE,
};

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// 1 ------------------------------------------------------------------------

const GRAD_TRIALS: usize = 100;
const GRAD_BUDGET_SECS: f64 = 120.0;

#[allow(clippy::neg_cmp_op_on_partial_ord)]
fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let ops = gradcheck_primitives(GRAD_TRIALS, 2021).map_err(|e| e.to_string())?;
    let tiny = ModelConfig::tiny();
    assert_eq!(
        (
            tiny.lookback,
            tiny.horizon,
            tiny.scales,
            tiny.d_model,
            tiny.blocks
        ),
        (16, 8, 3, 4, 2)
    );
    let model = gradcheck_model(&tiny, 0.5, GRAD_TRIALS, 2021).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let worst = ops.worst().max(model.worst());
    let failing: Vec<_> = ops
        .groups
        .iter()
        .chain(&model.groups)
        .filter(|g| !(g.max_rel_error < GRADCHECK_TOLERANCE))
        .map(|g| g.group.clone())
        .collect();
    ensure(
        failing.is_empty() && secs < GRAD_BUDGET_SECS && ops.trials == GRAD_TRIALS && model.trials == GRAD_TRIALS,
        format!(
            "{} primitives + {} loss groups x {GRAD_TRIALS} trials, worst rel err {worst:.2e} (< {GRADCHECK_TOLERANCE:.0e}), \
             failing {failing:?}, {secs:.1} s (< {GRAD_BUDGET_SECS} s)",
            ops.groups.len(),
            model.groups.len()
        ),
    )
}

// 2 ------------------------------------------------------------------------

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

fn structural_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    let mut recon = 0.0f64;
    for kernel in [1, 5, 25] {
        let x = random_tensor(&mut rng, &[4, 96, 16], -5.0, 5.0);
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let (s, t) = decompose(&mut tape, v, kernel).map_err(|e| e.to_string())?;
        for ((a, b), c) in tape
            .value(s)
            .data()
            .iter()
            .zip(tape.value(t).data())
            .zip(x.data())
        {
            recon = recon.max((a + b - c).abs());
        }
    }

    let mut revin = 0.0f64;
    for _ in 0..50 {
        let scale = rng.gen_range(1e-3..1e3);
        let shift = rng.gen_range(-1e3..1e3);
        let x: Vec<f64> = (0..96)
            .map(|_| shift + scale * rng.gen_range(-1.0..1.0))
            .collect();
        let (n, stats) = revin_normalize(&x);
        for (a, b) in revin_denormalize(&n, &stats).iter().zip(&x) {
            revin = revin.max((a - b).abs());
        }
    }

    let cfg = ModelConfig::ett(96, 96, 7);
    let zeros = ParamStore::zeros(&cfg);
    let mut identity = true;
    {
        let mut tape = Tape::new();
        let p = zeros.bind(&mut tape, false);
        let xs: Vec<Tensor> = cfg
            .scale_lengths()
            .iter()
            .map(|&l| random_tensor(&mut rng, &[3, l, cfg.d_model], -2.0, 2.0))
            .collect();
        let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        for block in 0..cfg.blocks {
            let out = pdmc_forward(&mut tape, &p, &cfg, block, vars.clone())
                .map_err(|e| e.to_string())?;
            identity &= out.iter().zip(&xs).all(|(&o, x)| tape.value(o) == x);
        }
    }
    let alpha_zero = zeros
        .specs()
        .iter()
        .zip(zeros.tensors())
        .filter(|(s, _)| s.name.ends_with("alpha"))
        .all(|(_, t)| t.data() == [0.0]);

    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[2, 96]));
    let lens: Vec<usize> = multiscale_downsample(&mut tape, x, 2, 4)
        .map_err(|e| e.to_string())?
        .iter()
        .map(|&v| tape.shape(v)[1])
        .collect();

    ensure(
        recon <= 1e-12 && revin <= 1e-9 && identity && alpha_zero && lens == [96, 48, 24, 12],
        format!(
            "season+trend err {recon:.1e} (<= 1e-12), RevIN err {revin:.1e} (<= 1e-9), \
             zero-weight alpha=0 block identity {}, schedule {lens:?}",
            identity && alpha_zero
        ),
    )
}

// 3 ------------------------------------------------------------------------

/// `mean_k |X_k|` over bins `0..=n/2` of the direct DFT of `d`.
fn dft_l1(d: &[f64]) -> f64 {
    let n = d.len();
    let bins = n / 2 + 1;
    let mut total = 0.0;
    for k in 0..bins {
        let (mut re, mut im) = (0.0, 0.0);
        for (t, v) in d.iter().enumerate() {
            let angle = -2.0 * PI * (k * t) as f64 / n as f64;
            re += v * angle.cos();
            im += v * angle.sin();
        }
        total += (re * re + im * im).sqrt();
    }
    total / bins as f64
}

fn loss(p: &[f64], y: &[f64], rows: usize, alpha: f64) -> LossBreakdown {
    let n = p.len() / rows;
    let mut tape = Tape::new();
    let pv = tape.constant(Tensor::new(&[rows, n], p.to_vec()).unwrap());
    let yv = tape.constant(Tensor::new(&[rows, n], y.to_vec()).unwrap());
    samfre_loss(&mut tape, pv, yv, alpha)
        .unwrap()
        .breakdown(&tape)
}

fn loss_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut freq_err = 0.0f64;
    let mut mse_err = 0.0f64;
    let mut add_err = 0.0f64;
    for &(rows, n) in &[(1, 16), (3, 15), (4, 96), (2, 7)] {
        let p: Vec<f64> = (0..rows * n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let y: Vec<f64> = (0..rows * n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let diff: Vec<f64> = p.iter().zip(&y).map(|(a, b)| a - b).collect();
        let oracle_freq = diff.chunks(n).map(dft_l1).sum::<f64>() / rows as f64;
        let oracle_mse = diff.iter().map(|d| d * d).sum::<f64>() / diff.len() as f64;

        freq_err = freq_err.max((loss(&p, &y, rows, 1.0).total - oracle_freq).abs());
        mse_err = mse_err.max((loss(&p, &y, rows, 0.0).total - oracle_mse).abs());
        for alpha in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let l = loss(&p, &y, rows, alpha);
            add_err = add_err.max((l.total - (alpha * l.freq + (1.0 - alpha) * l.mse)).abs());
        }
    }
    ensure(
        freq_err <= 1e-9 && mse_err <= 1e-12 && add_err <= 1e-12,
        format!(
            "alpha=1 vs direct DFT {freq_err:.1e} (<= 1e-9), alpha=0 vs MSE {mse_err:.1e} (<= 1e-12), \
             additivity over 5 alphas {add_err:.1e}"
        ),
    )
}

// 4 ------------------------------------------------------------------------

struct Square;

impl Objective for Square {
    fn evaluate(&self, params: &[Tensor]) -> timecf::Result<(LossBreakdown, Vec<Tensor>)> {
        let w = params[0].data()[0];
        let l = LossBreakdown {
            total: w * w,
            freq: 0.0,
            mse: w * w,
        };
        Ok((l, vec![Tensor::vector(vec![2.0 * w])]))
    }
}

fn instances(cfg: &ModelConfig, n: usize, seed: u64) -> Vec<WindowInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|c| WindowInstance {
            channel: c,
            x: (0..cfg.lookback)
                .map(|_| rng.gen_range(-2.0..2.0))
                .collect(),
            y: (0..cfg.horizon).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            x_mark: (0..cfg.lookback * cfg.time_features)
                .map(|_| rng.gen_range(-0.5..0.5))
                .collect(),
            y_mark: vec![0.0; cfg.horizon * cfg.time_features],
        })
        .collect()
}

fn sam_degeneracy() -> Outcome {
    let cfg = ModelConfig::tiny();
    let model = Model::new(cfg.clone(), 2021).map_err(|e| e.to_string())?;
    let data = instances(&cfg, 20, 2021);
    let objective = BatchObjective::new(&model, &data, 0.5, true).map_err(|e| e.to_string())?;
    let mut a = model.params().tensors().to_vec();
    let mut b = a.clone();
    let mut sa = OptimizerState::new(OptimizerKind::Adam, &a);
    let mut sb = sa.clone();
    let mut bitwise = true;
    for _ in 0..100 {
        sam_step(
            &objective,
            &mut a,
            &mut sa,
            0.01,
            0.0,
            SamUpdate::BaseOptimizer,
        )
        .map_err(|e| e.to_string())?;
        base_step(&objective, &mut b, &mut sb, 0.01).map_err(|e| e.to_string())?;
        bitwise &= a.iter().zip(&b).all(|(x, y)| {
            x.data()
                .iter()
                .zip(y.data())
                .all(|(u, v)| u.to_bits() == v.to_bits())
        });
    }
    bitwise &= sa == sb;

    let (rho, lr, w0) = (0.1, 0.1, 1.0f64);
    let mut w = vec![Tensor::vector(vec![w0])];
    let mut st = OptimizerState::new(OptimizerKind::Sgd, &w);
    sam_step(&Square, &mut w, &mut st, lr, rho, SamUpdate::BaseOptimizer)
        .map_err(|e| e.to_string())?;
    let g = 2.0 * w0;
    let hand = w0 - lr * (2.0 * (w0 + rho * g / g.abs()));
    let got = w[0].data()[0];
    ensure(
        bitwise && got.to_bits() == hand.to_bits() && (got - 0.78).abs() <= 1e-15,
        format!("rho=0 vs base optimizer over 100 steps bitwise {bitwise}; 1-D quadratic w: 1 -> {got} (hand {hand})"),
    )
}

// 5, 6 -----------------------------------------------------------------------

const SEEDS: [u64; 3] = [2021, 2022, 2023];
const HORIZONS: [usize; 4] = [96, 192, 336, 720];
const RUN_BUDGET_SECS: f64 = 1800.0;

fn etth1() -> Option<PathBuf> {
    let root = env::var_os(DATASET_ROOT_ENV)?;
    let path = Path::new(&root).join("ETTh1.csv");
    path.is_file().then_some(path)
}

fn etth1_runs(data: &Path, no_conv: bool, out: &Path) -> Result<Vec<ResultRecord>, String> {
    let overrides = Overrides {
        data: Some(data.to_path_buf()),
        dataset: Some("ETTh1".into()),
        out: Some(out.to_path_buf()),
        horizons: Some(HORIZONS.to_vec()),
        seeds: Some(SEEDS.to_vec()),
        no_conv: no_conv.then_some(true),
        ..Overrides::default()
    };
    let plan = Plan::resolve(&overrides, None).map_err(|e| e.to_string())?;
    plan.runs()
        .iter()
        .map(|cfg| run_train(cfg).map(|o| o.record).map_err(|e| e.to_string()))
        .collect()
}

fn blocked() -> String {
    format!("blocked: ETTh1.csv not found under ${DATASET_ROOT_ENV}")
}

fn reproduction(full: &Result<Vec<ResultRecord>, String>) -> Outcome {
    let full = full.as_ref().map_err(Clone::clone)?;
    let best = |h: usize| {
        full.iter()
            .filter(|r| r.horizon == h)
            .min_by(|a, b| a.mse.total_cmp(&b.mse))
            .cloned()
            .expect("three seeds per horizon")
    };
    let (b96, b192) = (best(96), best(192));
    let slowest = full
        .iter()
        .filter(|r| r.horizon <= 192)
        .map(|r| r.wall_clock_seconds)
        .fold(0.0, f64::max);
    ensure(
        b96.mse <= 0.42 && b96.mae <= 0.45 && b192.mse <= 0.47 && slowest <= RUN_BUDGET_SECS,
        format!(
            "best of 3 seeds: F=96 mse {:.4} (<= 0.42) mae {:.4} (<= 0.45); F=192 mse {:.4} (<= 0.47); \
             slowest run {slowest:.0} s (<= {RUN_BUDGET_SECS} s)",
            b96.mse, b96.mae, b192.mse
        ),
    )
}

fn ablation(
    full: &Result<Vec<ResultRecord>, String>,
    no_conv: &Result<Vec<ResultRecord>, String>,
) -> Outcome {
    let full = full.as_ref().map_err(Clone::clone)?;
    let no_conv = no_conv.as_ref().map_err(Clone::clone)?;
    let mean = |rs: &[ResultRecord]| rs.iter().map(|r| r.mse).sum::<f64>() / rs.len() as f64;
    let (a, b) = (mean(full), mean(no_conv));
    let per_h: Vec<String> = HORIZONS
        .iter()
        .map(|&h| {
            let m = |rs: &[ResultRecord]| {
                let v: Vec<_> = rs.iter().filter(|r| r.horizon == h).collect();
                v.iter().map(|r| r.mse).sum::<f64>() / v.len() as f64
            };
            format!("F={h} {:.4}/{:.4}", m(full), m(no_conv))
        })
        .collect();
    ensure(
        a <= b,
        format!(
            "mean test mse full {a:.4} vs no-conv {b:.4} ({})",
            per_h.join(", ")
        ),
    )
}

// 7 ------------------------------------------------------------------------

fn parameter_count() -> Outcome {
    let model = Model::new(ModelConfig::ett(96, 96, 7), 2021).map_err(|e| e.to_string())?;
    let n = model.parameter_count();
    ensure(
        (50_000..=250_000).contains(&n),
        format!("default ETT config has {n} learnable scalars (in [5e4, 2.5e5])"),
    )
}

// 8 ------------------------------------------------------------------------

fn write_synthetic(path: &Path) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let start = chrono::NaiveDate::from_ymd_opt(2020, 1, 1)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap();
    let mut text = String::from("date,load,temp,OT\n");
    for i in 0..900 {
        let ts = start + chrono::TimeDelta::hours(i);
        let t = i as f64;
        text.push_str(&format!(
            "{},{:.6},{:.6},{:.6}\n",
            ts.format("%Y-%m-%d %H:%M:%S"),
            (2.0 * PI * t / 24.0).sin() + 0.1 * rng.gen_range(-1.0..1.0),
            (2.0 * PI * t / 168.0).cos() + 0.01 * t,
            0.5 * (2.0 * PI * t / 12.0).sin() + 0.2 * rng.gen_range(-1.0..1.0),
        ));
    }
    std::fs::write(path, text).unwrap();
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("synthetic.csv");
    write_synthetic(&data);
    let run = |out: &str| -> Result<(ResultRecord, Vec<u8>), String> {
        let overrides = Overrides {
            data: Some(data.clone()),
            dataset: Some("synthetic".into()),
            out: Some(dir.path().join(out)),
            horizons: Some(vec![24]),
            seeds: Some(vec![2021]),
            train: TrainOverrides {
                epochs: Some(2),
                batch_size: Some(64),
                sam_threshold: Some(timecf::train::SamThreshold::Updates(10)),
                deterministic: Some(true),
                ..TrainOverrides::default()
            },
            ..Overrides::default()
        };
        let plan = Plan::resolve(&overrides, None).map_err(|e| e.to_string())?;
        let outcome = run_train(&plan.runs()[0]).map_err(|e| e.to_string())?;
        let bytes = std::fs::read(&outcome.checkpoint).map_err(|e| e.to_string())?;
        Ok((outcome.record, bytes))
    };
    let (ra, ca) = run("a")?;
    let (rb, cb) = run("b")?;
    ensure(
        ra.same_outcome(&rb) && ca == cb,
        format!(
            "records equal (ignoring wall clock) {}, checkpoints byte-identical {} ({} bytes), test mse {:.6}",
            ra.same_outcome(&rb),
            ca == cb,
            ca.len(),
            ra.mse
        ),
    )
}

// --------------------------------------------------------------------------

fn main() {
    let mut failed = Vec::new();
    let mut report = |id: usize, name: &str, outcome: Outcome| {
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed.push(id);
                ("FAIL", d)
            }
        };
        println!("{tag} [{id}] {name}: {detail}");
    };

    report(1, "gradient suite", gradient_suite());
    report(2, "structural identities", structural_identities());
    report(3, "loss oracle", loss_oracle());
    report(4, "SAM degeneracy", sam_degeneracy());

    let (full, no_conv) = match etth1() {
        Some(path) => {
            let out = tempfile::tempdir().expect("temp dir");
            (
                etth1_runs(&path, false, &out.path().join("full")),
                etth1_runs(&path, true, &out.path().join("no-conv")),
            )
        }
        None => (Err(blocked()), Err(blocked())),
    };
    report(5, "ETTh1 reproduction", reproduction(&full));
    report(6, "ablation direction", ablation(&full, &no_conv));
    report(7, "parameter count", parameter_count());
    report(8, "determinism", determinism());

    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
