//! Long-horizon time-series forecasting with multi-scale decomposable mixing,
//! adaptive convolution, and sharpness-aware frequency-domain training.

pub mod data;
pub mod error;
pub mod experiment;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Result, TimeCfError};
