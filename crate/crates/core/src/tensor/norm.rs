use super::tape::{slot, Node, Op, Tape, Var};
use super::Tensor;
use crate::error::{Result, TimeCfError};

/// Variance floor inside the layer-norm square root.
pub const LAYER_NORM_EPS: f64 = 1e-5;

impl Tape {
    /// Normalizes each row of the last axis to zero mean and unit variance,
    /// then applies the per-feature `gamma` scale and `beta` shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let vx = self.value(x);
        let width = vx.last_dim();
        if vx.rank() == 0 || width == 0 {
            return Err(TimeCfError::dim(
                "layer_norm",
                "feature axis must be non-empty",
            ));
        }
        if self.value(gamma).len() != width || self.value(beta).len() != width {
            return Err(TimeCfError::dim(
                "layer_norm",
                format!(
                    "scale {:?} / shift {:?} for {width} features",
                    self.shape(gamma),
                    self.shape(beta)
                ),
            ));
        }
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        let rows = vx.len() / width;
        let mut normalized = Vec::with_capacity(vx.len());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(vx.len());
        for row in vx.data().chunks(width) {
            let mean = row.iter().sum::<f64>() / width as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width as f64;
            let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(r);
            for (d, v) in row.iter().enumerate() {
                let n = (v - mean) * r;
                normalized.push(n);
                out.push(n * gd[d] + bd[d]);
            }
        }
        let shape = vx.shape().to_vec();
        let rg = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(
            Tensor { shape, data: out },
            rg,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            },
        ))
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn layer_norm_backward(
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
    g: &[f64],
    x: Var,
    gamma: Var,
    beta: Var,
    normalized: &[f64],
    inv_std: &[f64],
) {
    let gd = nodes[gamma.index()].value.data();
    let width = gd.len();
    if let Some(gx) = slot(nodes, grads, x) {
        let mut dn = vec![0.0; width];
        for (r, ((dst, gy), xn)) in gx
            .chunks_mut(width)
            .zip(g.chunks(width))
            .zip(normalized.chunks(width))
            .enumerate()
        {
            let mut mean_dn = 0.0;
            let mut mean_dn_xn = 0.0;
            for d in 0..width {
                dn[d] = gy[d] * gd[d];
                mean_dn += dn[d];
                mean_dn_xn += dn[d] * xn[d];
            }
            mean_dn /= width as f64;
            mean_dn_xn /= width as f64;
            for d in 0..width {
                dst[d] += inv_std[r] * (dn[d] - mean_dn - xn[d] * mean_dn_xn);
            }
        }
    }
    if let Some(gg) = slot(nodes, grads, gamma) {
        for (gy, xn) in g.chunks(width).zip(normalized.chunks(width)) {
            for d in 0..width {
                gg[d] += gy[d] * xn[d];
            }
        }
    }
    if let Some(gb) = slot(nodes, grads, beta) {
        for gy in g.chunks(width) {
            for d in 0..width {
                gb[d] += gy[d];
            }
        }
    }
}
