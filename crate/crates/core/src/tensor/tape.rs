use std::sync::atomic::{AtomicU32, Ordering};

use super::linear::Padding;
use super::{activation, linear, norm, pool, spectral, Tensor};
use crate::error::{Result, TimeCfError};

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    index: u32,
    tape: u32,
}

impl Var {
    pub(super) fn index(self) -> usize {
        self.index as usize
    }
}

#[derive(Debug)]
pub(super) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    Transpose(Var),
    Reshape(Var),
    RowAffine {
        x: Var,
        scale: Vec<f64>,
    },
    Map {
        x: Var,
        derivative: Vec<f64>,
    },
    Affine {
        x: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Conv1d {
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        padding: Padding,
    },
    DepthwiseConv1d {
        x: Var,
        kernel: Var,
        bias: Option<Var>,
    },
    Gelu(Var),
    AvgPool {
        x: Var,
        window: usize,
        pad: usize,
    },
    MovingAverage {
        x: Var,
        kernel: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Rfft(Var),
    Modulus(Var),
}

pub(super) struct Node {
    pub(super) value: Tensor,
    pub(super) requires_grad: bool,
    pub(super) op: Op,
    grad: Option<Tensor>,
}

/// Append-only record of operations; topological order is insertion order.
///
/// Leaf gradients accumulate across repeated [`Tape::backward`] calls until
/// [`Tape::zero_grad`] is called.
pub struct Tape {
    id: u32,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// Constant input (no gradient).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.node(v).value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.node(v).grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    pub(super) fn node(&self, v: Var) -> &Node {
        assert_eq!(v.tape, self.id, "variable belongs to a different tape");
        &self.nodes[v.index()]
    }

    pub(super) fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        debug_assert!(value.rank() <= super::MAX_RANK);
        let index = u32::try_from(self.nodes.len()).expect("tape exceeds u32 nodes");
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
            grad: None,
        });
        Var {
            index,
            tape: self.id,
        }
    }

    pub(super) fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.node(v).requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(TimeCfError::dim(
                op,
                format!("shapes {sa:?} and {sb:?} differ"),
            ));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let va = &self.node(a).value;
        let vb = &self.node(b).value;
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor {
            shape: va.shape().to_vec(),
            data,
        };
        let rg = self.any_grad(&[a, b]);
        self.push(value, rg, op)
    }

    fn map_values(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let vx = &self.node(x).value;
        let value = Tensor {
            shape: vx.shape().to_vec(),
            data: vx.data().iter().map(|&v| f(v)).collect(),
        };
        let rg = self.node(x).requires_grad;
        self.push(value, rg, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// Multiply by a fixed constant.
    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.map_values(x, Op::Scale(x, factor), |v| v * factor)
    }

    /// Multiply by a scalar that is itself a tape value.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(TimeCfError::dim(
                "scale_by",
                format!("scale must be scalar, got {:?}", self.shape(s)),
            ));
        }
        let factor = self.value(s).data()[0];
        let vx = &self.node(x).value;
        let value = Tensor {
            shape: vx.shape().to_vec(),
            data: vx.data().iter().map(|&v| v * factor).collect(),
        };
        let rg = self.any_grad(&[x, s]);
        Ok(self.push(value, rg, Op::ScaleBy(x, s)))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.map_values(x, Op::Square(x), |v| v * v)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        let rg = self.requires_grad(x);
        self.push(Tensor::scalar(total), rg, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let total: f64 = v.data().iter().sum();
        let mean = total / v.len() as f64;
        let rg = self.requires_grad(x);
        self.push(Tensor::scalar(mean), rg, Op::Mean(x))
    }

    /// Swap the last two axes of a rank-2 or rank-3 tensor.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let shape = v.shape().to_vec();
        if shape.len() < 2 {
            return Err(TimeCfError::dim(
                "transpose",
                format!("need rank >= 2, got {shape:?}"),
            ));
        }
        let r = shape.len();
        let (rows, cols) = (shape[r - 2], shape[r - 1]);
        let data = transpose_last2(v.data(), rows, cols);
        let mut out_shape = shape;
        out_shape.swap(r - 2, r - 1);
        let rg = self.requires_grad(x);
        Ok(self.push(
            Tensor {
                shape: out_shape,
                data,
            },
            rg,
            Op::Transpose(x),
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, rg, Op::Reshape(x)))
    }

    /// `y[r, :] = x[r, :] * scale[r] + shift[r]` with constant per-row
    /// coefficients; rows are all leading axes flattened.
    pub fn row_affine(&mut self, x: Var, scale: Vec<f64>, shift: Vec<f64>) -> Result<Var> {
        let v = self.value(x);
        let width = v.last_dim();
        let rows = v.len() / width.max(1);
        if scale.len() != rows || shift.len() != rows {
            return Err(TimeCfError::dim(
                "row_affine",
                format!(
                    "{rows} rows but {} scales and {} shifts",
                    scale.len(),
                    shift.len()
                ),
            ));
        }
        let mut data = v.data().to_vec();
        for (r, row) in data.chunks_mut(width).enumerate() {
            for e in row {
                *e = *e * scale[r] + shift[r];
            }
        }
        let value = Tensor {
            shape: v.shape().to_vec(),
            data,
        };
        let rg = self.requires_grad(x);
        Ok(self.push(value, rg, Op::RowAffine { x, scale }))
    }

    /// Elementwise map with a caller-supplied derivative.
    pub fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64) -> Var {
        let vx = &self.node(x).value;
        let derivative = vx.data().iter().map(|&v| df(v)).collect();
        let value = Tensor {
            shape: vx.shape().to_vec(),
            data: vx.data().iter().map(|&v| f(v)).collect(),
        };
        let rg = self.node(x).requires_grad;
        self.push(value, rg, Op::Map { x, derivative })
    }

    /// Reverse-mode sweep from a scalar seed; gradients are added to the
    /// `grad` of every `requires_grad` leaf reachable from the seed.
    pub fn backward(&mut self, seed: Var) -> Result<()> {
        let seed_node = self.node(seed);
        if seed_node.value.len() != 1 {
            return Err(TimeCfError::Usage(format!(
                "backward seed must be a scalar, got shape {:?}",
                seed_node.value.shape()
            )));
        }
        if !seed_node.requires_grad {
            return Ok(());
        }
        let last = seed.index();
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(last + 1);
        grads.resize_with(last + 1, || None);
        grads[last] = Some(vec![1.0]);

        for i in (0..=last).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                let node = &mut self.nodes[i];
                match node.grad.as_mut() {
                    Some(grad) => axpy(&mut grad.data, 1.0, &g),
                    None => {
                        node.grad = Some(Tensor {
                            shape: node.value.shape().to_vec(),
                            data: g,
                        })
                    }
                }
                continue;
            }
            propagate(&self.nodes, i, &g, &mut grads);
        }
        Ok(())
    }
}

/// Gradient buffer for `v`, allocated on first use; `None` when `v` does not
/// need a gradient.
pub(super) fn slot<'a>(
    nodes: &[Node],
    grads: &'a mut [Option<Vec<f64>>],
    v: Var,
) -> Option<&'a mut Vec<f64>> {
    let i = v.index();
    if !nodes[i].requires_grad {
        return None;
    }
    Some(grads[i].get_or_insert_with(|| vec![0.0; nodes[i].value.len()]))
}

fn propagate(nodes: &[Node], i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[i];
    let val = |v: Var| &nodes[v.index()].value;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            if let Some(ga) = slot(nodes, grads, *a) {
                axpy(ga, 1.0, g);
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                axpy(gb, 1.0, g);
            }
        }
        Op::Sub(a, b) => {
            if let Some(ga) = slot(nodes, grads, *a) {
                axpy(ga, 1.0, g);
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                axpy(gb, -1.0, g);
            }
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a).data(), val(*b).data());
            if let Some(ga) = slot(nodes, grads, *a) {
                for ((d, &gi), &y) in ga.iter_mut().zip(g).zip(vb) {
                    *d += gi * y;
                }
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                for ((d, &gi), &x) in gb.iter_mut().zip(g).zip(va) {
                    *d += gi * x;
                }
            }
        }
        Op::Scale(x, factor) => {
            if let Some(gx) = slot(nodes, grads, *x) {
                axpy(gx, *factor, g);
            }
        }
        Op::ScaleBy(x, s) => {
            let factor = val(*s).data()[0];
            if let Some(gx) = slot(nodes, grads, *x) {
                axpy(gx, factor, g);
            }
            let dot: f64 = g.iter().zip(val(*x).data()).map(|(a, b)| a * b).sum();
            if let Some(gs) = slot(nodes, grads, *s) {
                gs[0] += dot;
            }
        }
        Op::Square(x) => {
            let vx = val(*x).data();
            if let Some(gx) = slot(nodes, grads, *x) {
                for ((d, &gi), &v) in gx.iter_mut().zip(g).zip(vx) {
                    *d += 2.0 * v * gi;
                }
            }
        }
        Op::Sum(x) => {
            if let Some(gx) = slot(nodes, grads, *x) {
                gx.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        Op::Mean(x) => {
            let n = val(*x).len() as f64;
            if let Some(gx) = slot(nodes, grads, *x) {
                let share = g[0] / n;
                gx.iter_mut().for_each(|d| *d += share);
            }
        }
        Op::Transpose(x) => {
            let shape = node.value.shape();
            let r = shape.len();
            let back = transpose_last2(g, shape[r - 2], shape[r - 1]);
            if let Some(gx) = slot(nodes, grads, *x) {
                axpy(gx, 1.0, &back);
            }
        }
        Op::Reshape(x) => {
            if let Some(gx) = slot(nodes, grads, *x) {
                axpy(gx, 1.0, g);
            }
        }
        Op::RowAffine { x, scale } => {
            let width = node.value.last_dim();
            if let Some(gx) = slot(nodes, grads, *x) {
                for (r, (dst, src)) in gx.chunks_mut(width).zip(g.chunks(width)).enumerate() {
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += s * scale[r];
                    }
                }
            }
        }
        Op::Map { x, derivative } => {
            if let Some(gx) = slot(nodes, grads, *x) {
                for ((d, &gi), &k) in gx.iter_mut().zip(g).zip(derivative) {
                    *d += gi * k;
                }
            }
        }
        Op::Affine { x, weight, bias } => {
            linear::affine_backward(nodes, grads, g, *x, *weight, *bias)
        }
        Op::Conv1d {
            x,
            kernel,
            bias,
            padding,
        } => linear::conv1d_backward(nodes, grads, g, *x, *kernel, *bias, *padding),
        Op::DepthwiseConv1d { x, kernel, bias } => {
            linear::depthwise_backward(nodes, grads, g, *x, *kernel, *bias)
        }
        Op::Gelu(x) => activation::gelu_backward(nodes, grads, g, *x),
        Op::AvgPool { x, window, pad } => {
            pool::avg_pool_backward(nodes, grads, g, *x, *window, *pad)
        }
        Op::MovingAverage { x, kernel } => {
            pool::moving_average_backward(nodes, grads, g, *x, *kernel)
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            normalized,
            inv_std,
        } => norm::layer_norm_backward(nodes, grads, g, *x, *gamma, *beta, normalized, inv_std),
        Op::Rfft(x) => spectral::rfft_backward(nodes, grads, g, *x),
        Op::Modulus(x) => spectral::modulus_backward(nodes, grads, g, *x, &node.value),
    }
}

pub(super) fn axpy(dst: &mut [f64], alpha: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}

pub(super) fn transpose_last2(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let block = rows * cols;
    let mut out = vec![0.0; data.len()];
    if block == 0 {
        return out;
    }
    for (src, dst) in data.chunks(block).zip(out.chunks_mut(block)) {
        for r in 0..rows {
            for c in 0..cols {
                dst[c * rows + r] = src[r * cols + c];
            }
        }
    }
    out
}
