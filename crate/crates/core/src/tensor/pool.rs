//! Non-overlapping average pooling and the centered moving average used for
//! season/trend decomposition.

use super::tape::{slot, Node, Op, Tape, Var};
use super::Tensor;
use crate::error::{Result, TimeCfError};

/// Left padding that brings `len` up to the next multiple of `window`.
pub fn pool_padding(len: usize, window: usize) -> usize {
    len.div_ceil(window) * window - len
}

/// Output length of non-overlapping pooling with left replicate padding.
pub fn pool_len(len: usize, window: usize) -> usize {
    len.div_ceil(window)
}

impl Tape {
    /// Mean over non-overlapping windows of the last axis. When the length is
    /// not a multiple of `window`, the oldest value is replicated on the left
    /// until it is.
    pub fn avg_pool1d(&mut self, x: Var, window: usize, stride: usize) -> Result<Var> {
        if window < 1 {
            return Err(TimeCfError::Parameter("pooling window must be >= 1".into()));
        }
        if stride != window {
            return Err(TimeCfError::Parameter(format!(
                "pooling must be non-overlapping (window {window}, stride {stride})"
            )));
        }
        let vx = self.value(x);
        if vx.rank() == 0 {
            return Err(TimeCfError::dim("avg_pool1d", "input must have rank >= 1"));
        }
        let len = vx.last_dim();
        let pad = pool_padding(len, window);
        let out_len = (len + pad) / window;
        let rows = vx.len().checked_div(len).unwrap_or(0);
        let inv = 1.0 / window as f64;
        let mut out = Vec::with_capacity(rows * out_len);
        for row in vx.data().chunks(len.max(1)).take(rows) {
            for o in 0..out_len {
                let mut acc = 0.0;
                for j in o * window..(o + 1) * window {
                    acc += row[j.saturating_sub(pad)];
                }
                out.push(acc * inv);
            }
        }
        let mut shape = vx.shape().to_vec();
        *shape.last_mut().unwrap() = out_len;
        let rg = self.requires_grad(x);
        Ok(self.push(
            Tensor { shape, data: out },
            rg,
            Op::AvgPool { x, window, pad },
        ))
    }

    /// Centered moving average along the time axis of a `[L x D]` or
    /// `[B x L x D]` tensor, with the first and last rows replicated
    /// `(kernel - 1) / 2` times on their respective sides.
    pub fn moving_average(&mut self, x: Var, kernel: usize) -> Result<Var> {
        if kernel == 0 || kernel.is_multiple_of(2) {
            return Err(TimeCfError::Parameter(format!(
                "moving-average kernel must be odd, got {kernel}"
            )));
        }
        let vx = self.value(x);
        let (batch, len, width) = time_major_dims(vx)?;
        let half = (kernel / 2) as isize;
        let inv = 1.0 / kernel as f64;
        let data = vx.data();
        let mut out = vec![0.0; data.len()];
        let last = len as isize - 1;
        for b in 0..batch {
            let base = b * len * width;
            for t in 0..len {
                let dst = base + t * width;
                for j in -half..=half {
                    let src = base + (t as isize + j).clamp(0, last) as usize * width;
                    for d in 0..width {
                        out[dst + d] += data[src + d];
                    }
                }
                for v in &mut out[dst..dst + width] {
                    *v *= inv;
                }
            }
        }
        let shape = vx.shape().to_vec();
        let rg = self.requires_grad(x);
        Ok(self.push(
            Tensor { shape, data: out },
            rg,
            Op::MovingAverage { x, kernel },
        ))
    }
}

fn time_major_dims(v: &Tensor) -> Result<(usize, usize, usize)> {
    match *v.shape() {
        [l, d] => Ok((1, l, d)),
        [b, l, d] => Ok((b, l, d)),
        _ => Err(TimeCfError::dim(
            "moving_average",
            format!("input must be [L x D] or [B x L x D], got {:?}", v.shape()),
        )),
    }
}

pub(super) fn avg_pool_backward(
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
    g: &[f64],
    x: Var,
    window: usize,
    pad: usize,
) {
    let len = nodes[x.index()].value.last_dim();
    if len == 0 {
        return;
    }
    let out_len = (len + pad) / window;
    let inv = 1.0 / window as f64;
    if let Some(gx) = slot(nodes, grads, x) {
        for (dst, src) in gx.chunks_mut(len).zip(g.chunks(out_len)) {
            for (o, &gv) in src.iter().enumerate() {
                for j in o * window..(o + 1) * window {
                    dst[j.saturating_sub(pad)] += gv * inv;
                }
            }
        }
    }
}

pub(super) fn moving_average_backward(
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
    g: &[f64],
    x: Var,
    kernel: usize,
) {
    let (batch, len, width) = time_major_dims(&nodes[x.index()].value).expect("validated");
    let half = (kernel / 2) as isize;
    let inv = 1.0 / kernel as f64;
    let last = len as isize - 1;
    if let Some(gx) = slot(nodes, grads, x) {
        for b in 0..batch {
            let base = b * len * width;
            for t in 0..len {
                let src = base + t * width;
                for j in -half..=half {
                    let dst = base + (t as isize + j).clamp(0, last) as usize * width;
                    for d in 0..width {
                        gx[dst + d] += g[src + d] * inv;
                    }
                }
            }
        }
    }
}
