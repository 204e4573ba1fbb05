//! Central finite-difference checks of tape gradients.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Padding, Tape, Tensor, Var};
use crate::error::{Result, TimeCfError};

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for every
/// coordinate of `x`.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn central_differences(
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    x: &[f64],
    step: f64,
) -> Result<Vec<f64>> {
    if !(step > 0.0) {
        return Err(TimeCfError::Parameter(format!(
            "step must be > 0, got {step}"
        )));
    }
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let up = finite(f(&probe)?)?;
        probe[i] = orig - step;
        let down = finite(f(&probe)?)?;
        probe[i] = orig;
        out.push((up - down) / (2.0 * step));
    }
    Ok(out)
}

/// `max_i |analytic_i - numeric_i| / max(1, |numeric_i|)`; 0 for empty input.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / n.abs().max(1.0))
        .fold(0.0, f64::max)
}

fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(TimeCfError::Evaluation(format!("function returned {v}")))
    }
}

/// Compares the tape gradient of the scalar function `f` at `x` against
/// central differences with the given step and returns the max relative error.
pub fn grad_check<F>(f: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let leaf = tape.leaf(x.clone(), true);
    let out = f(&mut tape, leaf)?;
    finite(scalar_of(&tape, out)?)?;
    tape.backward(out)?;
    let analytic = match tape.grad(leaf) {
        Some(g) => g.data().to_vec(),
        None => vec![0.0; x.len()],
    };
    let shape = x.shape().to_vec();
    let numeric = central_differences(
        |probe| {
            let mut t = Tape::new();
            let v = t.constant(Tensor::new(&shape, probe.to_vec())?);
            let y = f(&mut t, v)?;
            scalar_of(&t, y)
        },
        x.data(),
        step,
    )?;
    Ok(max_relative_error(&analytic, &numeric))
}

fn scalar_of(tape: &Tape, v: Var) -> Result<f64> {
    let value = tape.value(v);
    if value.len() != 1 {
        return Err(TimeCfError::Usage(format!(
            "gradient check needs a scalar function, got shape {:?}",
            value.shape()
        )));
    }
    Ok(value.data()[0])
}

/// Gradient check of a multi-input, arbitrarily shaped function. The output
/// is contracted with a random cotangent drawn once from `rng`; the result is
/// the largest relative error over every coordinate of every input.
pub fn grad_check_inputs<F>(f: F, inputs: &[Tensor], rng: &mut impl Rng, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let constants = |t: &mut Tape, replace: Option<(usize, &[f64])>| -> Result<Vec<Var>> {
        inputs
            .iter()
            .enumerate()
            .map(|(j, x)| match replace {
                Some((k, probe)) if k == j => {
                    Ok(t.constant(Tensor::new(x.shape(), probe.to_vec())?))
                }
                _ => Ok(t.constant(x.clone())),
            })
            .collect()
    };
    let shape = {
        let mut t = Tape::new();
        let vs = constants(&mut t, None)?;
        let out = f(&mut t, &vs)?;
        t.value(out).shape().to_vec()
    };
    let n = shape.iter().product::<usize>();
    let cotangent = Tensor::new(&shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let contracted = |t: &mut Tape, vs: &[Var]| -> Result<Var> {
        let out = f(t, vs)?;
        let c = t.constant(cotangent.clone());
        let m = t.mul(out, c)?;
        Ok(t.sum(m))
    };

    let mut tape = Tape::new();
    let leaves: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone(), true)).collect();
    let out = contracted(&mut tape, &leaves)?;
    finite(scalar_of(&tape, out)?)?;
    tape.backward(out)?;
    let mut worst = 0.0f64;
    for (k, x) in inputs.iter().enumerate() {
        let analytic = match tape.grad(leaves[k]) {
            Some(g) => g.data().to_vec(),
            None => vec![0.0; x.len()],
        };
        let numeric = central_differences(
            |probe| {
                let mut t = Tape::new();
                let vs = constants(&mut t, Some((k, probe)))?;
                let y = contracted(&mut t, &vs)?;
                scalar_of(&t, y)
            },
            x.data(),
            step,
        )?;
        worst = worst.max(max_relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

/// One differentiable primitive with a generator of random instances.
pub struct PrimitiveCheck {
    pub name: &'static str,
    trial: fn(&mut ChaCha8Rng, f64) -> Result<f64>,
}

impl PrimitiveCheck {
    /// Max relative error of one random instance.
    pub fn trial(&self, rng: &mut ChaCha8Rng, step: f64) -> Result<f64> {
        (self.trial)(rng, step)
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product::<usize>();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).expect("shape matches")
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn unary(
    rng: &mut ChaCha8Rng,
    step: f64,
    shape: &[usize],
    f: fn(&mut Tape, Var) -> Result<Var>,
) -> Result<f64> {
    let x = rand_tensor(rng, shape);
    grad_check_inputs(|t, v| f(t, v[0]), &[x], rng, step)
}

fn binary(
    rng: &mut ChaCha8Rng,
    step: f64,
    f: fn(&mut Tape, Var, Var) -> Result<Var>,
) -> Result<f64> {
    let shape = [rng.gen_range(1..4), rng.gen_range(1..6)];
    let (a, b) = (rand_tensor(rng, &shape), rand_tensor(rng, &shape));
    grad_check_inputs(|t, v| f(t, v[0], v[1]), &[a, b], rng, step)
}

fn conv(rng: &mut ChaCha8Rng, step: f64, padding: Padding) -> Result<f64> {
    let (b, c, o, l) = (
        rng.gen_range(1..3),
        rng.gen_range(1..4),
        rng.gen_range(1..4),
        rng.gen_range(1..8),
    );
    let x = rand_tensor(rng, &[b, c, l]);
    let k = rand_tensor(rng, &[o, c, 3]);
    let bias = rand_tensor(rng, &[o]);
    grad_check_inputs(
        move |t, v| t.conv1d(v[0], v[1], Some(v[2]), padding),
        &[x, k, bias],
        rng,
        step,
    )
}

/// Every differentiable tape primitive.
pub fn primitive_checks() -> Vec<PrimitiveCheck> {
    macro_rules! check {
        ($name:literal, $body:expr) => {
            PrimitiveCheck {
                name: $name,
                trial: $body,
            }
        };
    }
    vec![
        check!("add", |r, h| binary(r, h, |t, a, b| t.add(a, b))),
        check!("sub", |r, h| binary(r, h, |t, a, b| t.sub(a, b))),
        check!("mul", |r, h| binary(r, h, |t, a, b| t.mul(a, b))),
        check!("scale", |r, h| {
            let s = [r.gen_range(1..5)];
            unary(r, h, &s, |t, x| Ok(t.scale(x, -1.7)))
        }),
        check!("scale_by", |r, h| {
            let x = {
                let s = [r.gen_range(1..4), 3];
                rand_tensor(r, &s)
            };
            let s = rand_tensor(r, &[]);
            grad_check_inputs(|t, v| t.scale_by(v[0], v[1]), &[x, s], r, h)
        }),
        check!("square", |r, h| {
            let s = [r.gen_range(1..6)];
            unary(r, h, &s, |t, x| Ok(t.square(x)))
        }),
        check!("sum", |r, h| {
            let s = [r.gen_range(1..3), r.gen_range(1..5)];
            unary(r, h, &s, |t, x| Ok(t.sum(x)))
        }),
        check!("mean", |r, h| {
            let s = [r.gen_range(1..3), r.gen_range(1..5)];
            unary(r, h, &s, |t, x| Ok(t.mean(x)))
        }),
        check!("transpose", |r, h| {
            let s = [r.gen_range(1..3), r.gen_range(1..4), r.gen_range(1..5)];
            unary(r, h, &s, |t, x| t.transpose(x))
        }),
        check!("reshape", |r, h| {
            let s = [2, r.gen_range(1..4), 3];
            unary(r, h, &s, |t, x| {
                let n = t.value(x).len();
                t.reshape(x, &[n / 6, 6])
            })
        }),
        check!("row_affine", |r, h| {
            let rows = r.gen_range(1..4);
            let x = {
                let s = [rows, r.gen_range(1..5)];
                rand_tensor(r, &s)
            };
            let scale = rand_vec(r, rows, 0.1, 3.0);
            let shift = rand_vec(r, rows, -2.0, 2.0);
            grad_check_inputs(
                |t, v| t.row_affine(v[0], scale.clone(), shift.clone()),
                &[x],
                r,
                h,
            )
        }),
        check!("gelu", |r, h| {
            let s = [r.gen_range(1..3), r.gen_range(1..8)];
            unary(r, h, &s, |t, x| Ok(t.gelu(x)))
        }),
        check!("affine", |r, h| {
            let (p, q) = (r.gen_range(1..5), r.gen_range(1..5));
            let x = {
                let s = [r.gen_range(1..3), r.gen_range(1..4), p];
                rand_tensor(r, &s)
            };
            let w = rand_tensor(r, &[p, q]);
            let b = rand_tensor(r, &[q]);
            grad_check_inputs(|t, v| t.affine(v[0], v[1], Some(v[2])), &[x, w, b], r, h)
        }),
        check!("conv1d_zero", |r, h| conv(r, h, Padding::Zero)),
        check!("conv1d_circular", |r, h| conv(r, h, Padding::Circular)),
        check!("depthwise_conv1d", |r, h| {
            let (b, c, l) = (r.gen_range(1..3), r.gen_range(1..4), r.gen_range(1..8));
            let x = rand_tensor(r, &[b, c, l]);
            let k = rand_tensor(r, &[c, 1, 3]);
            let bias = rand_tensor(r, &[c]);
            grad_check_inputs(
                |t, v| t.depthwise_conv1d_same(v[0], v[1], Some(v[2])),
                &[x, k, bias],
                r,
                h,
            )
        }),
        check!("avg_pool1d", |r, h| {
            let w = r.gen_range(1..5);
            let x = {
                let s = [r.gen_range(1..3), r.gen_range(1..4), r.gen_range(1..12)];
                rand_tensor(r, &s)
            };
            grad_check_inputs(|t, v| t.avg_pool1d(v[0], w, w), &[x], r, h)
        }),
        check!("moving_average", |r, h| {
            let k = 2 * r.gen_range(0..5) + 1;
            let x = {
                let s = [r.gen_range(1..3), r.gen_range(1..10), r.gen_range(1..4)];
                rand_tensor(r, &s)
            };
            grad_check_inputs(|t, v| t.moving_average(v[0], k), &[x], r, h)
        }),
        check!("layer_norm", |r, h| {
            let d = r.gen_range(2..6);
            let x = {
                let s = [r.gen_range(1..3), r.gen_range(1..4), d];
                rand_tensor(r, &s)
            };
            let g = rand_tensor(r, &[d]);
            let b = rand_tensor(r, &[d]);
            grad_check_inputs(|t, v| t.layer_norm(v[0], v[1], v[2]), &[x, g, b], r, h)
        }),
        check!("rfft", |r, h| {
            let s = [r.gen_range(1..3), r.gen_range(1..18)];
            unary(r, h, &s, |t, x| t.rfft(x))
        }),
        check!("complex_modulus", |r, h| {
            let s = [r.gen_range(1..3), r.gen_range(1..6), 2];
            unary(r, h, &s, |t, x| t.complex_modulus(x))
        }),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_exact_gradient() {
        let x = Tensor::vector(vec![0.3, -1.2, 4.0, 2.5]);
        let err = grad_check(|t, v| Ok(t.sum(v)), &x, 1e-5).unwrap();
        assert!(err <= 1e-10, "{err}");
    }

    #[test]
    fn corrupted_adjoint_is_detected() {
        let x = Tensor::vector(vec![0.3, -1.2, 0.7]);
        let err = grad_check(
            |t, v| {
                let y = t.map(v, f64::sin, |a| 1.05 * a.cos());
                Ok(t.sum(y))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err > 1e-3, "{err}");
    }

    #[test]
    fn non_finite_function_is_evaluation_error() {
        let x = Tensor::vector(vec![0.0]);
        let res = grad_check(
            |t, v| {
                let y = t.map(v, |a| 1.0 / a, |a| -1.0 / (a * a));
                Ok(t.sum(y))
            },
            &x,
            1e-5,
        );
        assert!(matches!(res, Err(TimeCfError::Evaluation(_))));
    }

    #[test]
    fn non_positive_step_rejected() {
        let x = Tensor::vector(vec![1.0]);
        assert!(grad_check(|t, v| Ok(t.sum(v)), &x, 0.0).is_err());
    }
}
