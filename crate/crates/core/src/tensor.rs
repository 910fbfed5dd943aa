//! Dense n-dimensional arrays in row-major order.

use ndarray::Array2;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("shape {shape:?} holds {expected} elements but {actual} were given")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("expected a rank-{expected} tensor, got rank {actual}")]
    Rank { expected: usize, actual: usize },
}

/// Element type of a [`Tensor`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn size_of(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    /// NPY type descriptor, always little-endian.
    pub fn descr(self) -> &'static str {
        match self {
            DType::F32 => "<f4",
            DType::F64 => "<f8",
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DType::F32 => f.write_str("float32"),
            DType::F64 => f.write_str("float64"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
        }
    }
}

/// A shaped block of floats. `shape.iter().product() == data.len()` always holds.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: TensorData,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::LengthMismatch {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_f64(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        Self::new(shape, TensorData::F64(data))
    }

    pub fn from_f32(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        Self::new(shape, TensorData::F32(data))
    }

    pub fn vector(data: Vec<f64>) -> Self {
        let n = data.len();
        Tensor {
            shape: vec![n],
            data: TensorData::F64(data),
        }
    }

    pub fn from_array2(a: &Array2<f64>) -> Self {
        let (r, c) = a.dim();
        Tensor {
            shape: vec![r, c],
            data: TensorData::F64(a.iter().copied().collect()),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Values widened to f64 (exact for both supported dtypes).
    pub fn to_f64_vec(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| f64::from(x)).collect(),
            TensorData::F64(v) => v.clone(),
        }
    }

    pub fn to_array2(&self) -> Result<Array2<f64>, TensorError> {
        if self.rank() != 2 {
            return Err(TensorError::Rank {
                expected: 2,
                actual: self.rank(),
            });
        }
        Ok(Array2::from_shape_vec((self.shape[0], self.shape[1]), self.to_f64_vec())
            .expect("shape checked at construction"))
    }

    /// Same values, converted to `dtype`. Narrowing to f32 rounds to nearest.
    pub fn cast(&self, dtype: DType) -> Tensor {
        let data = match (&self.data, dtype) {
            (TensorData::F32(v), DType::F32) => TensorData::F32(v.clone()),
            (TensorData::F64(v), DType::F64) => TensorData::F64(v.clone()),
            (TensorData::F32(v), DType::F64) => TensorData::F64(v.iter().map(|&x| x as f64).collect()),
            (TensorData::F64(v), DType::F32) => TensorData::F32(v.iter().map(|&x| x as f32).collect()),
        };
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }

    /// Bit-level equality; unlike `==`, treats NaN payloads and signed zeros exactly.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        if self.shape != other.shape {
            return false;
        }
        match (&self.data, &other.data) {
            (TensorData::F32(a), TensorData::F32(b)) => {
                a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (TensorData::F64(a), TensorData::F64(b)) => {
                a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            _ => false,
        }
    }
}
