//! GELU activation.
//!
//! The default build uses the exact form `x * Phi(x)` with `Phi` the
//! standard normal CDF written through `erf`. Enabling the `gelu-tanh`
//! feature switches to the tanh approximation
//! `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.

#[cfg(not(feature = "gelu-tanh"))]
use std::f64::consts::FRAC_1_SQRT_2;
use std::f64::consts::PI;

use super::tape::{slot, Node, Op, Tape, Var};

#[cfg(not(feature = "gelu-tanh"))]
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

#[cfg(not(feature = "gelu-tanh"))]
pub fn gelu_derivative(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    cdf + x * pdf
}

#[cfg(feature = "gelu-tanh")]
const TANH_COEF: f64 = 0.044_715;

#[cfg(feature = "gelu-tanh")]
pub fn gelu_scalar(x: f64) -> f64 {
    let inner = (2.0 / PI).sqrt() * (x + TANH_COEF * x * x * x);
    0.5 * x * (1.0 + inner.tanh())
}

#[cfg(feature = "gelu-tanh")]
pub fn gelu_derivative(x: f64) -> f64 {
    let c = (2.0 / PI).sqrt();
    let inner = c * (x + TANH_COEF * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * TANH_COEF * x * x)
}

impl Tape {
    pub fn gelu(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let value = super::Tensor {
            shape: vx.shape().to_vec(),
            data: vx.data().iter().map(|&v| gelu_scalar(v)).collect(),
        };
        let rg = self.requires_grad(x);
        self.push(value, rg, Op::Gelu(x))
    }
}

pub(super) fn gelu_backward(nodes: &[Node], grads: &mut [Option<Vec<f64>>], g: &[f64], x: Var) {
    let vx = nodes[x.index()].value.data();
    if let Some(gx) = slot(nodes, grads, x) {
        for ((d, &gi), &v) in gx.iter_mut().zip(g).zip(vx) {
            *d += gi * gelu_derivative(v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_fixed_points() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        assert!((gelu_scalar(10.0) - 10.0).abs() < 1e-6);
        assert!(gelu_scalar(-10.0).abs() < 1e-6);
    }

    #[test]
    fn derivative_matches_central_difference() {
        let h = 1e-5;
        for i in -40..=40 {
            let x = f64::from(i) * 0.1;
            let fd = (gelu_scalar(x + h) - gelu_scalar(x - h)) / (2.0 * h);
            assert!((gelu_derivative(x) - fd).abs() < 1e-8, "x={x}");
        }
    }
}
