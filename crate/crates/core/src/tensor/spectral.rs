//! One-sided real FFT with a registered adjoint, and the smoothed complex
//! modulus used by the frequency-domain loss.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::tape::{slot, Node, Op, Tape, Var};
use super::Tensor;
use crate::error::{Result, TimeCfError};

/// Smoothing term in `sqrt(re^2 + im^2 + eps^2)`.
pub const MODULUS_EPS: f64 = 1e-12;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn forward_plan(n: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n))
}

fn inverse_plan(n: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(n))
}

/// Number of one-sided bins for a length-`n` real signal.
pub fn bin_count(n: usize) -> usize {
    n / 2 + 1
}

/// One-sided spectrum of a real sequence: bins `0..=n/2` as `(re, im)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrum {
    bins: Vec<(f64, f64)>,
    len: usize,
}

impl ComplexSpectrum {
    pub fn rfft(signal: &[f64]) -> Result<Self> {
        if signal.is_empty() {
            return Err(TimeCfError::dim("rfft", "signal length must be >= 1"));
        }
        let n = signal.len();
        let mut buf: Vec<Complex<f64>> = signal.iter().map(|&v| Complex::new(v, 0.0)).collect();
        forward_plan(n).process(&mut buf);
        let mut bins: Vec<(f64, f64)> = buf[..bin_count(n)].iter().map(|c| (c.re, c.im)).collect();
        // real input: DC and (even n) Nyquist bins are exactly real
        bins[0].1 = 0.0;
        if n.is_multiple_of(2) {
            bins[n / 2].1 = 0.0;
        }
        Ok(Self { bins, len: n })
    }

    pub fn bins(&self) -> &[(f64, f64)] {
        &self.bins
    }

    /// Length of the real signal this spectrum describes.
    pub fn signal_len(&self) -> usize {
        self.len
    }

    /// Exact inverse back to the length-`n` real signal.
    pub fn irfft(&self) -> Vec<f64> {
        let n = self.len;
        let mut full = vec![Complex::new(0.0, 0.0); n];
        for (k, &(re, im)) in self.bins.iter().enumerate() {
            full[k] = Complex::new(re, im);
            if k != 0 && n - k != k {
                full[n - k] = Complex::new(re, -im);
            }
        }
        inverse_plan(n).process(&mut full);
        full.iter().map(|c| c.re / n as f64).collect()
    }
}

impl Tape {
    /// One-sided DFT along the last axis of a rank-1 or rank-2 tensor; the
    /// output appends a trailing axis of size 2 holding `(re, im)`.
    pub fn rfft(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if vx.rank() == 0 || vx.rank() > 2 || vx.last_dim() == 0 {
            return Err(TimeCfError::dim(
                "rfft",
                format!(
                    "input must be [n] or [B x n] with n >= 1, got {:?}",
                    vx.shape()
                ),
            ));
        }
        let n = vx.last_dim();
        let bins = bin_count(n);
        let plan = forward_plan(n);
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        let mut out = Vec::with_capacity(vx.len() / n * bins * 2);
        for row in vx.data().chunks(n) {
            for (b, &v) in buf.iter_mut().zip(row) {
                *b = Complex::new(v, 0.0);
            }
            plan.process(&mut buf);
            for (k, c) in buf[..bins].iter().enumerate() {
                let real_bin = k == 0 || 2 * k == n;
                out.push(c.re);
                out.push(if real_bin { 0.0 } else { c.im });
            }
        }
        let mut shape = vx.shape().to_vec();
        *shape.last_mut().unwrap() = bins;
        shape.push(2);
        let rg = self.requires_grad(x);
        Ok(self.push(Tensor { shape, data: out }, rg, Op::Rfft(x)))
    }

    /// `sqrt(re^2 + im^2 + eps^2)` over a trailing `(re, im)` axis.
    pub fn complex_modulus(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if vx.last_dim() != 2 || vx.rank() < 1 {
            return Err(TimeCfError::dim(
                "complex_modulus",
                format!("last axis must hold (re, im), got {:?}", vx.shape()),
            ));
        }
        let data = vx
            .data()
            .chunks(2)
            .map(|c| (c[0] * c[0] + c[1] * c[1] + MODULUS_EPS * MODULUS_EPS).sqrt())
            .collect();
        let mut shape = vx.shape().to_vec();
        shape.pop();
        let rg = self.requires_grad(x);
        Ok(self.push(Tensor { shape, data }, rg, Op::Modulus(x)))
    }
}

/// The adjoint of `x -> (Re X_k, Im X_k)_{k <= n/2}` sends a cotangent
/// `G_k = gr_k + i gi_k` to `dx_t = Re(sum_k G_k exp(+2 pi i k t / n))`.
pub(super) fn rfft_backward(nodes: &[Node], grads: &mut [Option<Vec<f64>>], g: &[f64], x: Var) {
    let n = nodes[x.index()].value.last_dim();
    let bins = bin_count(n);
    let Some(gx) = slot(nodes, grads, x) else {
        return;
    };
    let plan = inverse_plan(n);
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for (dst, src) in gx.chunks_mut(n).zip(g.chunks(bins * 2)) {
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for k in 0..bins {
            let real_bin = k == 0 || 2 * k == n;
            // imaginary outputs of real bins are constants
            let gi = if real_bin { 0.0 } else { src[2 * k + 1] };
            buf[k] = Complex::new(src[2 * k], gi);
        }
        plan.process(&mut buf);
        for (d, c) in dst.iter_mut().zip(&buf) {
            *d += c.re;
        }
    }
}

pub(super) fn modulus_backward(
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
    g: &[f64],
    x: Var,
    out: &Tensor,
) {
    let vx = nodes[x.index()].value.data();
    if let Some(gx) = slot(nodes, grads, x) {
        for (i, (&gi, &m)) in g.iter().zip(out.data()).enumerate() {
            gx[2 * i] += gi * vx[2 * i] / m;
            gx[2 * i + 1] += gi * vx[2 * i + 1] / m;
        }
    }
}
