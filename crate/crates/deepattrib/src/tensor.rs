//! Dense n-dimensional tensors of 32-bit floats, row-major.
//!
//! The numeric contract for the whole crate lives here: all arithmetic is
//! plain f32 with sequential, index-order accumulation and no fused
//! multiply-add, so that regenerating an image from the same inputs
//! reproduces it bit-exactly on one platform.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape {shape:?} implies {expected} elements, data has {actual}")]
    ShapeDataMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: invalid shape {shape:?} ({reason})")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },
    #[error("tensor contains a non-finite value at flat index {index}")]
    NonFinite { index: usize },
}

/// A dense row-major array of f32 with explicit shape.
///
/// Tensors are immutable values in practice: every operation in the crate
/// produces a new tensor rather than mutating in place, which makes them
/// safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::ShapeDataMismatch {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f32) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<f32>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single element of a scalar tensor.
    pub fn item(&self) -> f32 {
        assert!(self.is_scalar(), "item() on non-scalar {:?}", self.shape);
        self.data[0]
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Reinterpret as a new shape with the same element count.
    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Self, TensorError> {
        Tensor::new(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn check_finite(&self) -> Result<(), TensorError> {
        match self.data.iter().position(|x| !x.is_finite()) {
            None => Ok(()),
            Some(index) => Err(TensorError::NonFinite { index }),
        }
    }

    /// Euclidean norm of the flattened data, accumulated in index order.
    pub fn l2_norm(&self) -> f32 {
        let mut acc = 0.0f32;
        for &x in &self.data {
            acc += x * x;
        }
        acc.sqrt()
    }

    /// Elementwise clamp into [lo, hi].
    pub fn clamped(&self, lo: f32, hi: f32) -> Self {
        self.map(|x| x.clamp(lo, hi))
    }
}

/// Quantize an image tensor in [0,1] to 8-bit levels (round-to-nearest).
///
/// This is the canonical byte form used for image hashing everywhere in the
/// crate: the attribution report's target digest and the ledger's image
/// hash both commit to these bytes.
pub fn quantize8(image: &Tensor) -> Vec<u8> {
    image
        .data()
        .iter()
        .map(|&x| (x.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

/// Map 8-bit levels back to [0,1] floats.
pub fn dequantize8(bytes: &[u8], shape: Vec<usize>) -> Result<Tensor, TensorError> {
    Tensor::new(shape, bytes.iter().map(|&b| b as f32 / 255.0).collect())
}
