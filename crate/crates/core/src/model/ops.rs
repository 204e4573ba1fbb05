//! Building blocks of the forward pass. Sequence tensors are `[B x L x D]`
//! (time-major); raw series are `[B x L]`.

use serde::{Deserialize, Serialize};

use super::params::Bound;
use super::{AlphaMode, ConvMode, ModelConfig};
use crate::error::{Result, TimeCfError};
use crate::tensor::{pool_padding, Padding, Tape, Var};

/// Lower bound on the per-instance standard deviation.
pub const REVIN_MIN_STD: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RevInStats {
    pub mean: f64,
    pub std: f64,
}

/// Removes the window mean and divides by its population standard deviation.
pub fn revin_normalize(x: &[f64]) -> (Vec<f64>, RevInStats) {
    let n = x.len().max(1) as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(REVIN_MIN_STD);
    let out = x.iter().map(|v| (v - mean) / std).collect();
    (out, RevInStats { mean, std })
}

pub fn revin_denormalize(y: &[f64], stats: &RevInStats) -> Vec<f64> {
    y.iter().map(|v| v * stats.std + stats.mean).collect()
}

/// `[x, pool(x), pool(pool(x)), ...]` with `k` entries, pooling the last axis.
pub fn multiscale_downsample(tape: &mut Tape, x: Var, d: usize, k: usize) -> Result<Vec<Var>> {
    if k == 0 {
        return Err(TimeCfError::Config("need at least one scale".into()));
    }
    let mut out = vec![x];
    for _ in 1..k {
        let prev = *out.last().unwrap();
        let len = *tape.shape(prev).last().unwrap_or(&0);
        if len < 2 {
            return Err(TimeCfError::Config(format!(
                "series of length {len} cannot be downsampled further"
            )));
        }
        out.push(tape.avg_pool1d(prev, d, d)?);
    }
    Ok(out)
}

/// Calendar features for the next coarser scale: the first row of every
/// pooling window, with left padding clamped to the oldest row.
pub fn downsample_marks(marks: &[f64], rows: usize, width: usize, d: usize) -> Vec<f64> {
    let pad = pool_padding(rows, d);
    let out_rows = (rows + pad) / d;
    let mut out = Vec::with_capacity(out_rows * width);
    for j in 0..out_rows {
        let src = (j * d).saturating_sub(pad);
        out.extend_from_slice(&marks[src * width..(src + 1) * width]);
    }
    out
}

/// Token embedding (circular width-3 conv, 1 -> D) plus temporal embedding
/// (affine over calendar features).
pub fn embed(tape: &mut Tape, p: &Bound, series: Var, marks: Var) -> Result<Var> {
    let (b, l) = match *tape.shape(series) {
        [b, l] => (b, l),
        ref s => {
            return Err(TimeCfError::dim(
                "embed",
                format!("series must be [B x L], got {s:?}"),
            ))
        }
    };
    let ms = tape.shape(marks);
    if ms.len() != 3 || ms[0] != b || ms[1] != l {
        return Err(TimeCfError::dim(
            "embed",
            format!("time features {ms:?} do not match series [{b}, {l}]"),
        ));
    }
    let x = tape.reshape(series, &[b, 1, l])?;
    let token = tape.conv1d(x, p.var("embed.token.weight"), None, Padding::Circular)?;
    let token = tape.transpose(token)?;
    let temporal = tape.affine(
        marks,
        p.var("embed.temporal.weight"),
        Some(p.var("embed.temporal.bias")),
    )?;
    tape.add(token, temporal)
}

/// `X + alpha * ConvBlocks(X^T)^T` with
/// `ConvBlocks = Conv . GELU . Conv . GELU . Conv . Norm`.
pub fn conv_residual(
    tape: &mut Tape,
    p: &Bound,
    cfg: &ModelConfig,
    block: usize,
    x: Var,
) -> Result<Var> {
    if !cfg.conv_enabled() {
        return Ok(x);
    }
    let pre = format!("blocks.{block}");
    let mut h = tape.layer_norm(
        x,
        p.var(&format!("{pre}.norm.gamma")),
        p.var(&format!("{pre}.norm.beta")),
    )?;
    h = tape.transpose(h)?;
    for j in 0..3 {
        if j > 0 {
            h = tape.gelu(h);
        }
        let w = p.var(&format!("{pre}.conv.{j}.weight"));
        let bias = Some(p.var(&format!("{pre}.conv.{j}.bias")));
        h = match cfg.conv_mode {
            ConvMode::Full => tape.conv1d_same(h, w, bias)?,
            ConvMode::Depthwise => tape.depthwise_conv1d_same(h, w, bias)?,
        };
    }
    h = tape.transpose(h)?;
    let scaled = match cfg.alpha_mode {
        AlphaMode::Learnable => tape.scale_by(h, p.var(&format!("{pre}.alpha")))?,
        AlphaMode::Fixed => tape.scale(h, cfg.alpha_conv_init),
    };
    tape.add(x, scaled)
}

/// `(season, trend)` with a replicate-padded centered moving-average trend.
pub fn decompose(tape: &mut Tape, x: Var, kernel: usize) -> Result<(Var, Var)> {
    let trend = tape.moving_average(x, kernel)?;
    let season = tape.sub(x, trend)?;
    Ok((season, trend))
}

fn check_lengths(tape: &Tape, op: &'static str, xs: &[Var], cfg: &ModelConfig) -> Result<()> {
    let lens = cfg.scale_lengths();
    if xs.len() != lens.len() {
        return Err(TimeCfError::dim(
            op,
            format!("{} scales, config has {}", xs.len(), lens.len()),
        ));
    }
    for (i, (&x, &want)) in xs.iter().zip(&lens).enumerate() {
        let s = tape.shape(x);
        if s.len() < 2 || s[s.len() - 2] != want || s[s.len() - 1] != cfg.d_model {
            return Err(TimeCfError::dim(
                op,
                format!(
                    "scale {i} has shape {s:?}, expected length {want} x {}",
                    cfg.d_model
                ),
            ));
        }
    }
    Ok(())
}

/// Two-layer time map (affine, GELU, affine) applied to every feature.
fn time_map(tape: &mut Tape, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let h = tape.transpose(x)?;
    let h = tape.affine(
        h,
        p.var(&format!("{prefix}.fc1.weight")),
        Some(p.var(&format!("{prefix}.fc1.bias"))),
    )?;
    let h = tape.gelu(h);
    let h = tape.affine(
        h,
        p.var(&format!("{prefix}.fc2.weight")),
        Some(p.var(&format!("{prefix}.fc2.bias"))),
    )?;
    tape.transpose(h)
}

/// Bottom-up: each coarser season receives the mapped (already mixed) finer
/// season.
pub fn mix_seasons(
    tape: &mut Tape,
    p: &Bound,
    cfg: &ModelConfig,
    block: usize,
    mut seasons: Vec<Var>,
) -> Result<Vec<Var>> {
    check_lengths(tape, "mix_seasons", &seasons, cfg)?;
    for i in 0..seasons.len().saturating_sub(1) {
        let mapped = time_map(tape, p, &format!("blocks.{block}.season.{i}"), seasons[i])?;
        seasons[i + 1] = tape.add(seasons[i + 1], mapped)?;
    }
    Ok(seasons)
}

/// Top-down: each finer trend receives the mapped (already mixed) coarser
/// trend.
pub fn mix_trends(
    tape: &mut Tape,
    p: &Bound,
    cfg: &ModelConfig,
    block: usize,
    mut trends: Vec<Var>,
) -> Result<Vec<Var>> {
    check_lengths(tape, "mix_trends", &trends, cfg)?;
    for i in (0..trends.len().saturating_sub(1)).rev() {
        let mapped = time_map(tape, p, &format!("blocks.{block}.trend.{i}"), trends[i + 1])?;
        trends[i] = tape.add(trends[i], mapped)?;
    }
    Ok(trends)
}

/// One mixing block over all scales.
pub fn pdmc_forward(
    tape: &mut Tape,
    p: &Bound,
    cfg: &ModelConfig,
    block: usize,
    scales: Vec<Var>,
) -> Result<Vec<Var>> {
    check_lengths(tape, "pdmc_forward", &scales, cfg)?;
    let mut xs = Vec::with_capacity(scales.len());
    let mut seasons = Vec::with_capacity(scales.len());
    let mut trends = Vec::with_capacity(scales.len());
    for x in scales {
        let x = conv_residual(tape, p, cfg, block, x)?;
        let (s, t) = decompose(tape, x, cfg.decomp_kernel)?;
        xs.push(x);
        seasons.push(s);
        trends.push(t);
    }
    let seasons = mix_seasons(tape, p, cfg, block, seasons)?;
    let trends = mix_trends(tape, p, cfg, block, trends)?;
    let pre = format!("blocks.{block}.ffn");
    let mut out = Vec::with_capacity(xs.len());
    for ((x, s), t) in xs.into_iter().zip(seasons).zip(trends) {
        let h = tape.add(s, t)?;
        let h = tape.affine(
            h,
            p.var(&format!("{pre}.fc1.weight")),
            Some(p.var(&format!("{pre}.fc1.bias"))),
        )?;
        let h = tape.gelu(h);
        let h = tape.affine(
            h,
            p.var(&format!("{pre}.fc2.weight")),
            Some(p.var(&format!("{pre}.fc2.bias"))),
        )?;
        out.push(tape.add(x, h)?);
    }
    Ok(out)
}

/// Per scale, a time map `L_i -> F` followed by a feature map `D -> 1`;
/// the per-scale forecasts are summed. Returns `[B x F]`.
pub fn predict_head(tape: &mut Tape, p: &Bound, cfg: &ModelConfig, scales: &[Var]) -> Result<Var> {
    check_lengths(tape, "predict_head", scales, cfg)?;
    let mut total: Option<Var> = None;
    for (i, &x) in scales.iter().enumerate() {
        let b = tape.shape(x)[0];
        let h = tape.transpose(x)?;
        let h = tape.affine(
            h,
            p.var(&format!("heads.{i}.time.weight")),
            Some(p.var(&format!("heads.{i}.time.bias"))),
        )?;
        let h = tape.transpose(h)?;
        let h = tape.affine(
            h,
            p.var(&format!("heads.{i}.feature.weight")),
            Some(p.var(&format!("heads.{i}.feature.bias"))),
        )?;
        let h = tape.reshape(h, &[b, cfg.horizon])?;
        total = Some(match total {
            Some(acc) => tape.add(acc, h)?,
            None => h,
        });
    }
    total.ok_or_else(|| TimeCfError::Config("need at least one scale".into()))
}
