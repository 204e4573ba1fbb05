//! Affine maps and width-3 one-dimensional convolutions.

use super::tape::{slot, Node, Op, Tape, Var};
use super::Tensor;
use crate::error::{Result, TimeCfError};

/// Boundary handling for [`Tape::conv1d`]; both keep the output length equal
/// to the input length.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// One zero on each end.
    Zero,
    /// Wrap around: position -1 reads the last element and position L the first.
    Circular,
}

/// Products with at most this many multiply-adds skip the packed kernel.
const SMALL_GEMM: usize = 4096;

/// `c (m x n) += a (m x k) * b (k x n)` with arbitrary strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
) {
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    // Bounds: the farthest element touched in each operand must be in range.
    debug_assert!((m - 1) * rsa + (k - 1) * csa < a.len());
    debug_assert!((k - 1) * rsb + (n - 1) * csb < b.len());
    debug_assert!((m - 1) * rsc + (n - 1) * csc < c.len());
    if m * k * n <= SMALL_GEMM && csb == 1 && csc == 1 {
        for i in 0..m {
            let crow = &mut c[i * rsc..i * rsc + n];
            for p in 0..k {
                let av = a[i * rsa + p * csa];
                let brow = &b[p * rsb..p * rsb + n];
                for (cv, bv) in crow.iter_mut().zip(brow) {
                    *cv += av * bv;
                }
            }
        }
        return;
    }
    if m * k * n <= SMALL_GEMM {
        for i in 0..m {
            for p in 0..k {
                let av = a[i * rsa + p * csa];
                for j in 0..n {
                    c[i * rsc + j * csc] += av * b[p * rsb + j * csb];
                }
            }
        }
        return;
    }
    // SAFETY: the asserted extents keep every strided access inside the slices,
    // and `c` is a unique borrow so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            1.0,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

impl Tape {
    /// `y[i, j] = sum_r x[i, r] * w[r, j] + b[j]`, where `i` ranges over all
    /// leading axes of `x` flattened together.
    pub fn affine(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let vx = self.value(x);
        let vw = self.value(weight);
        if vw.rank() != 2 || vx.rank() == 0 || vx.last_dim() != vw.shape()[0] {
            return Err(TimeCfError::dim(
                "affine",
                format!(
                    "input {:?} incompatible with weight {:?}",
                    vx.shape(),
                    vw.shape()
                ),
            ));
        }
        let (p, q) = (vw.shape()[0], vw.shape()[1]);
        if let Some(b) = bias {
            let vb = self.value(b);
            if vb.len() != q {
                return Err(TimeCfError::dim(
                    "affine",
                    format!(
                        "bias {:?} does not match weight {:?}",
                        vb.shape(),
                        vw.shape()
                    ),
                ));
            }
        }
        let m = vx.len() / p;
        let mut out = match bias {
            Some(b) => self.value(b).data().repeat(m),
            None => vec![0.0; m * q],
        };
        gemm(m, p, q, vx.data(), p, 1, vw.data(), q, 1, &mut out, q, 1);
        let mut shape = vx.shape().to_vec();
        *shape.last_mut().unwrap() = q;
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        let rg = self.any_grad(&inputs);
        Ok(self.push(
            Tensor { shape, data: out },
            rg,
            Op::Affine { x, weight, bias },
        ))
    }

    /// Width-3 convolution over `[C x L]` or `[B x C x L]` input with kernels
    /// `[C_out x C x 3]`; output length equals input length.
    pub fn conv1d(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        padding: Padding,
    ) -> Result<Var> {
        let (batch, channels, len) = conv_dims(self.value(x))?;
        let vk = self.value(kernel);
        if vk.rank() != 3 || vk.shape()[1] != channels || vk.shape()[2] != 3 {
            return Err(TimeCfError::dim(
                "conv1d",
                format!(
                    "kernel {:?} does not fit input {:?} (need [out x {channels} x 3])",
                    vk.shape(),
                    self.value(x).shape()
                ),
            ));
        }
        let out_ch = vk.shape()[0];
        if let Some(b) = bias {
            if self.value(b).len() != out_ch {
                return Err(TimeCfError::dim(
                    "conv1d",
                    format!("bias {:?} for {out_ch} output channels", self.shape(b)),
                ));
            }
        }
        let xd = self.value(x).data();
        let kd = vk.data();
        let mut out = vec![0.0; batch * out_ch * len];
        for bi in 0..batch {
            let xs = &xd[bi * channels * len..(bi + 1) * channels * len];
            let ys = &mut out[bi * out_ch * len..(bi + 1) * out_ch * len];
            if let Some(b) = bias {
                let bd = self.value(b).data();
                for (o, row) in ys.chunks_mut(len).enumerate() {
                    row.iter_mut().for_each(|v| *v = bd[o]);
                }
            }
            for tap in 0..3 {
                let (t0, t1, shift) = tap_range(tap, len);
                if t1 > t0 {
                    let xoff = (t0 as isize + shift) as usize;
                    gemm(
                        out_ch,
                        channels,
                        t1 - t0,
                        &kd[tap..],
                        3 * channels,
                        3,
                        &xs[xoff..],
                        len,
                        1,
                        &mut ys[t0..],
                        len,
                        1,
                    );
                }
            }
            if padding == Padding::Circular {
                for o in 0..out_ch {
                    for c in 0..channels {
                        let k = &kd[(o * channels + c) * 3..];
                        ys[o * len] += k[0] * xs[c * len + len - 1];
                        ys[o * len + len - 1] += k[2] * xs[c * len];
                    }
                }
            }
        }
        let mut shape = self.value(x).shape().to_vec();
        let r = shape.len();
        shape[r - 2] = out_ch;
        let mut inputs = vec![x, kernel];
        inputs.extend(bias);
        let rg = self.any_grad(&inputs);
        Ok(self.push(
            Tensor { shape, data: out },
            rg,
            Op::Conv1d {
                x,
                kernel,
                bias,
                padding,
            },
        ))
    }

    /// Zero-padded width-3 convolution (output length equals input length).
    pub fn conv1d_same(&mut self, x: Var, kernel: Var, bias: Option<Var>) -> Result<Var> {
        self.conv1d(x, kernel, bias, Padding::Zero)
    }

    /// Per-channel zero-padded width-3 convolution with kernels `[C x 1 x 3]`.
    pub fn depthwise_conv1d_same(&mut self, x: Var, kernel: Var, bias: Option<Var>) -> Result<Var> {
        let (batch, channels, len) = conv_dims(self.value(x))?;
        let vk = self.value(kernel);
        if vk.shape() != [channels, 1, 3] {
            return Err(TimeCfError::dim(
                "depthwise_conv1d",
                format!("kernel {:?} for {channels} channels", vk.shape()),
            ));
        }
        if let Some(b) = bias {
            if self.value(b).len() != channels {
                return Err(TimeCfError::dim(
                    "depthwise_conv1d",
                    format!("bias {:?} for {channels} channels", self.shape(b)),
                ));
            }
        }
        let xd = self.value(x).data();
        let kd = vk.data();
        let mut out = vec![0.0; xd.len()];
        for bi in 0..batch {
            for c in 0..channels {
                let base = (bi * channels + c) * len;
                let xs = &xd[base..base + len];
                let k = &kd[c * 3..c * 3 + 3];
                let b0 = bias.map_or(0.0, |b| self.value(b).data()[c]);
                for t in 0..len {
                    let mut acc = b0 + k[1] * xs[t];
                    if t > 0 {
                        acc += k[0] * xs[t - 1];
                    }
                    if t + 1 < len {
                        acc += k[2] * xs[t + 1];
                    }
                    out[base + t] = acc;
                }
            }
        }
        let shape = self.value(x).shape().to_vec();
        let mut inputs = vec![x, kernel];
        inputs.extend(bias);
        let rg = self.any_grad(&inputs);
        Ok(self.push(
            Tensor { shape, data: out },
            rg,
            Op::DepthwiseConv1d { x, kernel, bias },
        ))
    }
}

fn conv_dims(v: &Tensor) -> Result<(usize, usize, usize)> {
    match *v.shape() {
        [c, l] => Ok((1, c, l)),
        [b, c, l] => Ok((b, c, l)),
        _ => Err(TimeCfError::dim(
            "conv1d",
            format!("input must be [C x L] or [B x C x L], got {:?}", v.shape()),
        )),
    }
}

/// Output positions `[t0, t1)` that read an in-range input at offset `shift`
/// for kernel tap `tap` (tap 0 reads t-1, tap 2 reads t+1).
fn tap_range(tap: usize, len: usize) -> (usize, usize, isize) {
    let shift = tap as isize - 1;
    let t0 = (-shift).max(0) as usize;
    let t1 = (len as isize - shift).min(len as isize).max(0) as usize;
    (t0.min(t1), t1, shift)
}

pub(super) fn affine_backward(
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
    g: &[f64],
    x: Var,
    weight: Var,
    bias: Option<Var>,
) {
    let vx = &nodes[x.index()].value;
    let vw = &nodes[weight.index()].value;
    let (p, q) = (vw.shape()[0], vw.shape()[1]);
    let m = vx.len() / p;
    if let Some(gx) = slot(nodes, grads, x) {
        // dx = dy * W^T
        gemm(m, q, p, g, q, 1, vw.data(), 1, q, gx, p, 1);
    }
    if let Some(gw) = slot(nodes, grads, weight) {
        // dW = x^T * dy
        gemm(p, m, q, vx.data(), 1, p, g, q, 1, gw, q, 1);
    }
    if let Some(b) = bias {
        if let Some(gb) = slot(nodes, grads, b) {
            for row in g.chunks(q) {
                for (d, v) in gb.iter_mut().zip(row) {
                    *d += v;
                }
            }
        }
    }
}

pub(super) fn conv1d_backward(
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
    g: &[f64],
    x: Var,
    kernel: Var,
    bias: Option<Var>,
    padding: Padding,
) {
    let vx = &nodes[x.index()].value;
    let vk = &nodes[kernel.index()].value;
    let (batch, channels, len) = conv_dims(vx).expect("validated in forward");
    let out_ch = vk.shape()[0];
    let xd = vx.data();
    let kd = vk.data();
    let xstride = channels * len;
    let ystride = out_ch * len;

    if let Some(gx) = slot(nodes, grads, x) {
        for bi in 0..batch {
            let gy = &g[bi * ystride..(bi + 1) * ystride];
            let dx = &mut gx[bi * xstride..(bi + 1) * xstride];
            for tap in 0..3 {
                let (t0, t1, shift) = tap_range(tap, len);
                if t1 > t0 {
                    let xoff = (t0 as isize + shift) as usize;
                    // dX[:, t0+s..t1+s] += K_tap^T * dY[:, t0..t1]
                    gemm(
                        channels,
                        out_ch,
                        t1 - t0,
                        &kd[tap..],
                        3,
                        3 * channels,
                        &gy[t0..],
                        len,
                        1,
                        &mut dx[xoff..],
                        len,
                        1,
                    );
                }
            }
            if padding == Padding::Circular {
                for o in 0..out_ch {
                    for c in 0..channels {
                        let k = &kd[(o * channels + c) * 3..];
                        dx[c * len + len - 1] += k[0] * gy[o * len];
                        dx[c * len] += k[2] * gy[o * len + len - 1];
                    }
                }
            }
        }
    }
    if let Some(gk) = slot(nodes, grads, kernel) {
        for bi in 0..batch {
            let gy = &g[bi * ystride..(bi + 1) * ystride];
            let xs = &xd[bi * xstride..(bi + 1) * xstride];
            for tap in 0..3 {
                let (t0, t1, shift) = tap_range(tap, len);
                if t1 > t0 {
                    let xoff = (t0 as isize + shift) as usize;
                    // dK_tap += dY[:, t0..t1] * X[:, t0+s..t1+s]^T
                    gemm(
                        out_ch,
                        t1 - t0,
                        channels,
                        &gy[t0..],
                        len,
                        1,
                        &xs[xoff..],
                        1,
                        len,
                        &mut gk[tap..],
                        3 * channels,
                        3,
                    );
                }
            }
            if padding == Padding::Circular {
                for o in 0..out_ch {
                    for c in 0..channels {
                        let base = (o * channels + c) * 3;
                        gk[base] += gy[o * len] * xs[c * len + len - 1];
                        gk[base + 2] += gy[o * len + len - 1] * xs[c * len];
                    }
                }
            }
        }
    }
    if let Some(b) = bias {
        if let Some(gb) = slot(nodes, grads, b) {
            for gy in g.chunks(ystride) {
                for (o, row) in gy.chunks(len).enumerate() {
                    gb[o] += row.iter().sum::<f64>();
                }
            }
        }
    }
}

pub(super) fn depthwise_backward(
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
    g: &[f64],
    x: Var,
    kernel: Var,
    bias: Option<Var>,
) {
    let vx = &nodes[x.index()].value;
    let (batch, channels, len) = conv_dims(vx).expect("validated in forward");
    let xd = vx.data();
    let kd = nodes[kernel.index()].value.data().to_vec();
    if let Some(gx) = slot(nodes, grads, x) {
        for bi in 0..batch {
            for c in 0..channels {
                let base = (bi * channels + c) * len;
                let k = &kd[c * 3..c * 3 + 3];
                for t in 0..len {
                    let gt = g[base + t];
                    gx[base + t] += k[1] * gt;
                    if t > 0 {
                        gx[base + t - 1] += k[0] * gt;
                    }
                    if t + 1 < len {
                        gx[base + t + 1] += k[2] * gt;
                    }
                }
            }
        }
    }
    if let Some(gk) = slot(nodes, grads, kernel) {
        for bi in 0..batch {
            for c in 0..channels {
                let base = (bi * channels + c) * len;
                for t in 0..len {
                    let gt = g[base + t];
                    gk[c * 3 + 1] += gt * xd[base + t];
                    if t > 0 {
                        gk[c * 3] += gt * xd[base + t - 1];
                    }
                    if t + 1 < len {
                        gk[c * 3 + 2] += gt * xd[base + t + 1];
                    }
                }
            }
        }
    }
    if let Some(b) = bias {
        if let Some(gb) = slot(nodes, grads, b) {
            for bi in 0..batch {
                for (c, d) in gb.iter_mut().enumerate() {
                    let base = (bi * channels + c) * len;
                    *d += g[base..base + len].iter().sum::<f64>();
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn affine_identity_and_bias_only() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let eye = tape.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let zeros = tape.constant(Tensor::zeros(&[2, 2]));
        let b0 = tape.constant(Tensor::vector(vec![0.0, 0.0]));
        let b1 = tape.constant(Tensor::vector(vec![3.0, 4.0]));
        let y = tape.affine(x, eye, Some(b0)).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0]);
        let y = tape.affine(x, zeros, Some(b1)).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 4.0]);
    }

    #[test]
    fn affine_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (m, p, q) = (4, 5, 2);
        let xs = random(&mut rng, m * p);
        let ws = random(&mut rng, p * q);
        let bs = random(&mut rng, q);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(m, p, xs.clone()).unwrap());
        let w = tape.constant(Tensor::matrix(p, q, ws.clone()).unwrap());
        let b = tape.constant(Tensor::vector(bs.clone()));
        let y = tape.affine(x, w, Some(b)).unwrap();
        for i in 0..m {
            for j in 0..q {
                let mut acc = bs[j];
                for r in 0..p {
                    acc += xs[i * p + r] * ws[r * q + j];
                }
                assert!((tape.value(y).at(&[i, j]) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn affine_rejects_inner_mismatch() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[3, 4]));
        let w = tape.constant(Tensor::zeros(&[5, 2]));
        let err = tape.affine(x, w, None).unwrap_err().to_string();
        assert!(err.contains("[3, 4]") && err.contains("[5, 2]"), "{err}");
    }

    #[test]
    fn conv_identity_kernel() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(1, 5, vec![1.0, -2.0, 3.0, 0.5, 4.0]).unwrap());
        let k = tape.constant(Tensor::new(&[1, 1, 3], vec![0.0, 1.0, 0.0]).unwrap());
        let b = tape.constant(Tensor::vector(vec![0.0]));
        let y = tape.conv1d_same(x, k, Some(b)).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }

    #[test]
    fn conv_constant_input_edges() {
        let c = 3.0;
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(1, 6, vec![c; 6]).unwrap());
        let k = tape.constant(Tensor::new(&[1, 1, 3], vec![1.0 / 3.0; 3]).unwrap());
        let y = tape.conv1d_same(x, k, None).unwrap();
        let out = tape.value(y).data();
        assert!((out[0] - 2.0 * c / 3.0).abs() < 1e-12);
        assert!((out[5] - 2.0 * c / 3.0).abs() < 1e-12);
        for v in &out[1..5] {
            assert!((v - c).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (b, c, o, l) = (2, 3, 4, 9);
        let xs = random(&mut rng, b * c * l);
        let ks = random(&mut rng, o * c * 3);
        let bs = random(&mut rng, o);
        for padding in [Padding::Zero, Padding::Circular] {
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::new(&[b, c, l], xs.clone()).unwrap());
            let k = tape.constant(Tensor::new(&[o, c, 3], ks.clone()).unwrap());
            let bias = tape.constant(Tensor::vector(bs.clone()));
            let y = tape.conv1d(x, k, Some(bias), padding).unwrap();
            assert_eq!(tape.shape(y), &[b, o, l]);
            for bi in 0..b {
                for oi in 0..o {
                    for t in 0..l {
                        let mut acc = bs[oi];
                        for ci in 0..c {
                            for j in 0..3 {
                                let pos = t as isize + j as isize - 1;
                                let v = match padding {
                                    Padding::Zero if pos < 0 || pos >= l as isize => 0.0,
                                    Padding::Zero => xs[(bi * c + ci) * l + pos as usize],
                                    Padding::Circular => {
                                        let p = pos.rem_euclid(l as isize) as usize;
                                        xs[(bi * c + ci) * l + p]
                                    }
                                };
                                acc += v * ks[(oi * c + ci) * 3 + j];
                            }
                        }
                        assert!((tape.value(y).at(&[bi, oi, t]) - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn conv_preserves_length_96() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(&[4, 96], random(&mut rng, 4 * 96)).unwrap());
        let k = tape.constant(Tensor::new(&[4, 4, 3], random(&mut rng, 48)).unwrap());
        let y = tape.conv1d_same(x, k, None).unwrap();
        assert_eq!(tape.shape(y), &[4, 96]);
    }

    #[test]
    fn conv_channel_mismatch() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 8]));
        let k = tape.constant(Tensor::zeros(&[2, 3, 3]));
        assert!(matches!(
            tape.conv1d_same(x, k, None),
            Err(TimeCfError::Dimension { .. })
        ));
    }
}
