//! Dense real arrays and the reverse-mode gradient tape.
//!
//! Only the primitives the forecaster and its loss need are provided. Every
//! differentiable op records its inputs on a [`Tape`]; [`Tape::backward`]
//! replays the recorded adjoints in reverse insertion order.

mod activation;
mod gradcheck;
mod linear;
mod norm;
mod pool;
mod spectral;
mod tape;

pub use activation::{gelu_derivative, gelu_scalar};
pub use gradcheck::{
    central_differences, grad_check, grad_check_inputs, max_relative_error, primitive_checks,
    PrimitiveCheck,
};
pub use linear::Padding;
pub use norm::LAYER_NORM_EPS;
pub use pool::{pool_len, pool_padding};
pub use spectral::{ComplexSpectrum, MODULUS_EPS};
pub use tape::{Tape, Var};

use crate::error::{Result, TimeCfError};

/// Highest rank a [`Tensor`] may have.
pub const MAX_RANK: usize = 3;

/// Dense row-major real array of rank at most three.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.len() > MAX_RANK {
            return Err(TimeCfError::dim(
                "tensor",
                format!("rank {} exceeds {MAX_RANK}", shape.len()),
            ));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TimeCfError::dim(
                "tensor",
                format!(
                    "shape {shape:?} needs {expected} values, got {}",
                    data.len()
                ),
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(&[rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Size of the last axis (1 for scalars).
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Value at a multi-index; panics when out of range.
    pub fn at(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        let mut flat = 0;
        for (i, (&ix, &dim)) in index.iter().zip(&self.shape).enumerate() {
            assert!(
                ix < dim,
                "index {ix} out of range for axis {i} of size {dim}"
            );
            flat = flat * dim + ix;
        }
        self.data[flat]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.len() > MAX_RANK {
            return Err(TimeCfError::dim(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }
}
