//! Dense 64-bit tensors with reverse-mode differentiation.
//!
//! The engine is deliberately small: eager op recording into a [`Graph`]
//! per forward pass, a reverse sweep for gradients, and a finite-check
//! after every op (NaN/Inf anywhere is an error, never a silent value).

mod gradcheck;
mod graph;

pub use gradcheck::grad_check;
pub use graph::{Graph, Op, PadMode, TensorId};

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::rng::SplitMix64;

/// Errors from tensor construction and graph operations.
#[derive(Debug, Clone, PartialEq)]
pub enum NumericsError {
    ShapeMismatch { op: &'static str, detail: String },
    NonFinite { op: &'static str },
    NonScalarOutput { op: &'static str },
    InvalidArgument { op: &'static str, detail: String },
}

impl core::fmt::Display for NumericsError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            NumericsError::ShapeMismatch { op, detail } => {
                write!(f, "shape mismatch in {op}: {detail}")
            }
            NumericsError::NonFinite { op } => {
                write!(f, "non-finite value produced by {op}")
            }
            NumericsError::NonScalarOutput { op } => {
                write!(f, "{op} requires a scalar output")
            }
            NumericsError::InvalidArgument { op, detail } => {
                write!(f, "invalid argument to {op}: {detail}")
            }
        }
    }
}

impl core::error::Error for NumericsError {}

pub type Result<T> = core::result::Result<T, NumericsError>;

/// Immutable dense tensor: row-major `f64` data plus shape.
///
/// A rank-0 shape (`[]`) is a scalar with one element. Data is shared via
/// `Arc`, so clones are cheap and tensors can cross threads.
#[derive(Debug, Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    requires_grad: bool,
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "Tensor::from_vec",
                detail: alloc::format!("shape {:?} wants {} values, got {}", shape, numel, data.len()),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(NumericsError::NonFinite { op: "Tensor::from_vec" });
        }
        Ok(Tensor { shape, data: Arc::new(data), requires_grad: false })
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Tensor::from_vec(vec![], vec![value])
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor { shape, data: Arc::new(vec![0.0; numel]), requires_grad: false }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Result<Self> {
        let numel: usize = shape.iter().product();
        Tensor::from_vec(shape, vec![value; numel])
    }

    /// Seeded truncated-normal tensor (|z| <= 2 sigma), the init used for
    /// all learned weights.
    pub fn trunc_normal(shape: Vec<usize>, std: f64, rng: &mut SplitMix64) -> Self {
        let numel: usize = shape.iter().product();
        let data: Vec<f64> = (0..numel).map(|_| rng.next_trunc_normal(std)).collect();
        Tensor { shape, data: Arc::new(data), requires_grad: false }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single element of a scalar tensor.
    pub fn item(&self) -> Result<f64> {
        if !self.is_scalar() {
            return Err(NumericsError::NonScalarOutput { op: "Tensor::item" });
        }
        Ok(self.data[0])
    }
}
