//! Scalar abstraction so the toy model can train in single precision and be
//! gradient-checked in double precision with the same code.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{ArrayView2, ArrayViewMut2, LinalgScalar, ScalarOperand};
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::tensor::DType;

pub trait Real: Float + LinalgScalar + ScalarOperand + Sum + Debug + Display + Default + Send + Sync + 'static {
    const DTYPE: DType;

    fn of(x: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Real for f32 {
    const DTYPE: DType = DType::F32;

    fn of(x: f64) -> Self {
        x as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const DTYPE: DType = DType::F64;

    fn of(x: f64) -> Self {
        x
    }

    fn as_f64(self) -> f64 {
        self
    }
}

/// Arithmetic precision used for training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

/// `out = a b`, or `out += a b` when `accumulate`; single-threaded and
/// deterministic for a given machine.
pub fn matmul_into<T: Real>(mut out: ArrayViewMut2<'_, T>, a: ArrayView2<'_, T>, b: ArrayView2<'_, T>, accumulate: bool) {
    let (m, k) = a.dim();
    let (k2, n) = b.dim();
    assert_eq!(k, k2, "inner dimensions differ");
    assert_eq!(out.dim(), (m, n), "output shape");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            out.fill(T::zero());
        }
        return;
    }
    let (ars, acs) = (a.strides()[0], a.strides()[1]);
    let (brs, bcs) = (b.strides()[0], b.strides()[1]);
    let (ors, ocs) = (out.strides()[0], out.strides()[1]);
    // SAFETY: the pointers come from live views whose shapes and strides are
    // passed unchanged, and `out` is a unique borrow disjoint from `a` and `b`.
    unsafe {
        gemm::gemm(
            m,
            n,
            k,
            out.as_mut_ptr(),
            ocs,
            ors,
            accumulate,
            a.as_ptr(),
            acs,
            ars,
            b.as_ptr(),
            bcs,
            brs,
            T::one(),
            T::one(),
            false,
            false,
            false,
            gemm::Parallelism::None,
        );
    }
}

/// Allocating form of [`matmul_into`].
pub fn matmul<T: Real>(a: ArrayView2<'_, T>, b: ArrayView2<'_, T>) -> ndarray::Array2<T> {
    let mut out = ndarray::Array2::zeros((a.nrows(), b.ncols()));
    matmul_into(out.view_mut(), a, b, false);
    out
}
