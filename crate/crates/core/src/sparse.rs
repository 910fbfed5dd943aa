//! Sparse condition vectors and sparse-times-dense products for the
//! modulation projections, plus a timing harness comparing both paths.
//!
//! Both kernels accumulate each output row in ascending column order with a
//! single accumulator. Skipped zeros contribute exactly `±0.0`, so the dense
//! and sparse results are bitwise identical, not merely close.

use std::hint::black_box;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SparseError {
    #[error("threshold must be positive and finite, got {0}")]
    NonPositiveTau(f64),
    #[error("dimension mismatch: matrix has {cols} columns, vector has dim {dim}")]
    DimMismatch { cols: usize, dim: usize },
    #[error("invalid sparse vector: {0}")]
    Invalid(String),
    #[error("bad benchmark parameters: {0}")]
    BadParams(String),
}

/// Coordinate-list vector: strictly ascending indices, no stored zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVec {
    dim: usize,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseVec {
    pub fn new(dim: usize, indices: Vec<usize>, values: Vec<f64>) -> Result<Self, SparseError> {
        if indices.len() != values.len() {
            return Err(SparseError::Invalid("indices and values differ in length".into()));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SparseError::Invalid("indices not strictly ascending".into()));
        }
        if indices.last().is_some_and(|&i| i >= dim) {
            return Err(SparseError::Invalid("index out of range".into()));
        }
        if values.iter().any(|&v| v == 0.0) {
            return Err(SparseError::Invalid("explicit zero stored".into()));
        }
        Ok(SparseVec { dim, indices, values })
    }

    /// Keeps every nonzero entry of `c`.
    pub fn from_dense(c: &[f64]) -> Self {
        let (indices, values) = c.iter().enumerate().filter(|(_, &x)| x != 0.0).map(|(i, &x)| (i, x)).unzip();
        SparseVec {
            dim: c.len(),
            indices,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn densify(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i] = v;
        }
        out
    }
}

/// Stores the entries with `|c_i| >= tau`; the sparse view of tail pruning.
pub fn sparsify(c: &[f64], tau: f64) -> Result<SparseVec, SparseError> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(SparseError::NonPositiveTau(tau));
    }
    let (indices, values) = c
        .iter()
        .enumerate()
        .filter(|(_, &x)| x.abs() >= tau)
        .map(|(i, &x)| (i, x))
        .unzip();
    Ok(SparseVec {
        dim: c.len(),
        indices,
        values,
    })
}

/// `W s` touching only the stored columns.
pub fn spmv(w: ArrayView2<'_, f64>, s: &SparseVec) -> Result<Vec<f64>, SparseError> {
    if w.ncols() != s.dim {
        return Err(SparseError::DimMismatch {
            cols: w.ncols(),
            dim: s.dim,
        });
    }
    let mut out = vec![0.0; w.nrows()];
    spmv_into(w, s, &mut out);
    Ok(out)
}

fn spmv_into(w: ArrayView2<'_, f64>, s: &SparseVec, out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(w.rows()) {
        let row = row.as_slice().expect("row-major matrix");
        let mut acc = 0.0;
        for (&j, &v) in s.indices.iter().zip(&s.values) {
            acc += row[j] * v;
        }
        *o = acc;
    }
}

/// Plain dense `W c`, same accumulation order as [`spmv`].
pub fn dense_matvec(w: ArrayView2<'_, f64>, c: &[f64]) -> Result<Vec<f64>, SparseError> {
    if w.ncols() != c.len() {
        return Err(SparseError::DimMismatch {
            cols: w.ncols(),
            dim: c.len(),
        });
    }
    let mut out = vec![0.0; w.nrows()];
    dense_into(w, c, &mut out);
    Ok(out)
}

fn dense_into(w: ArrayView2<'_, f64>, c: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(w.rows()) {
        let row = row.as_slice().expect("row-major matrix");
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(c) {
            acc += a * b;
        }
        *o = acc;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchParams {
    pub d: usize,
    pub out_dim: usize,
    pub sparsity: f64,
    pub iters: usize,
    pub seed: u64,
}

impl BenchParams {
    /// `out_dim` defaults to `2 d`, one row block each for gamma and beta.
    pub fn new(d: usize, sparsity: f64) -> Self {
        BenchParams {
            d,
            out_dim: 2 * d,
            sparsity,
            iters: 1000,
            seed: 0,
        }
    }
}

impl Default for BenchParams {
    fn default() -> Self {
        BenchParams::new(1152, 0.9)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub d: usize,
    pub out_dim: usize,
    /// Fraction of zero coordinates actually present in the input.
    pub sparsity: f64,
    pub nnz: usize,
    pub iters: usize,
    pub warmup_iters: usize,
    pub threads: usize,
    pub dense_ns_per_op: f64,
    pub sparse_ns_per_op: f64,
    pub speedup: f64,
    pub checksum_dense: f64,
    pub checksum_sparse: f64,
    pub outputs_identical: bool,
}

pub const MIN_BENCH_ITERS: usize = 100;

/// Random `W` and a random vector with `round(sparsity * d)` zeros.
pub fn bench_inputs(p: &BenchParams) -> (Array2<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let w = Array2::from_shape_simple_fn((p.out_dim, p.d), || rng.sample::<f64, _>(StandardNormal));
    let zeros = (p.sparsity * p.d as f64).round() as usize;
    let mut positions: Vec<usize> = (0..p.d).collect();
    positions.shuffle(&mut rng);
    let mut c: Vec<f64> = (0..p.d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    for &i in &positions[..zeros] {
        c[i] = 0.0;
    }
    // a StandardNormal draw of exactly 0.0 would skew nnz; nudge it
    for (i, x) in c.iter_mut().enumerate() {
        if *x == 0.0 && !positions[..zeros].contains(&i) {
            *x = f64::MIN_POSITIVE;
        }
    }
    (w, c)
}

/// Times dense and sparse products on identical data. Single-threaded.
pub fn bench(p: &BenchParams) -> Result<BenchReport, SparseError> {
    if p.iters < MIN_BENCH_ITERS {
        return Err(SparseError::BadParams(format!("iters must be at least {MIN_BENCH_ITERS}, got {}", p.iters)));
    }
    if !(0.0..1.0).contains(&p.sparsity) {
        return Err(SparseError::BadParams(format!("sparsity must be in [0, 1), got {}", p.sparsity)));
    }
    if p.d == 0 || p.out_dim == 0 {
        return Err(SparseError::BadParams("dimensions must be positive".into()));
    }
    let (w, c) = bench_inputs(p);
    let s = SparseVec::from_dense(&c);
    let mut dense_out = vec![0.0; p.out_dim];
    let mut sparse_out = vec![0.0; p.out_dim];
    let warmup = (p.iters / 10).max(10);

    for _ in 0..warmup {
        dense_into(black_box(w.view()), black_box(&c), &mut dense_out);
        spmv_into(black_box(w.view()), black_box(&s), &mut sparse_out);
    }
    let start = Instant::now();
    for _ in 0..p.iters {
        dense_into(black_box(w.view()), black_box(&c), &mut dense_out);
        black_box(&dense_out);
    }
    let dense_ns = start.elapsed().as_nanos() as f64 / p.iters as f64;
    let start = Instant::now();
    for _ in 0..p.iters {
        spmv_into(black_box(w.view()), black_box(&s), &mut sparse_out);
        black_box(&sparse_out);
    }
    let sparse_ns = start.elapsed().as_nanos() as f64 / p.iters as f64;

    // timer resolution floor so the ratio stays finite
    let dense_ns = dense_ns.max(1.0);
    let sparse_ns = sparse_ns.max(1.0);
    Ok(BenchReport {
        d: p.d,
        out_dim: p.out_dim,
        sparsity: (p.d - s.nnz()) as f64 / p.d as f64,
        nnz: s.nnz(),
        iters: p.iters,
        warmup_iters: warmup,
        threads: 1,
        dense_ns_per_op: dense_ns,
        sparse_ns_per_op: sparse_ns,
        speedup: dense_ns / sparse_ns,
        checksum_dense: dense_out.iter().sum(),
        checksum_sparse: sparse_out.iter().sum(),
        outputs_identical: dense_out.iter().zip(&sparse_out).all(|(a, b)| a.to_bits() == b.to_bits()),
    })
}

pub const BENCH_CSV_HEADER: [&str; 8] = [
    "sparsity",
    "nnz",
    "dense_ns_per_op",
    "sparse_ns_per_op",
    "speedup",
    "checksum_dense",
    "checksum_sparse",
    "outputs_identical",
];

pub fn bench_csv_row(r: &BenchReport) -> Vec<String> {
    vec![
        r.sparsity.to_string(),
        r.nnz.to_string(),
        r.dense_ns_per_op.to_string(),
        r.sparse_ns_per_op.to_string(),
        r.speedup.to_string(),
        r.checksum_dense.to_string(),
        r.checksum_sparse.to_string(),
        r.outputs_identical.to_string(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pruning::{prune, PruneConfig};
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn sparsify_cases() {
        assert_eq!(sparsify(&[0.0; 4], 0.1).unwrap().nnz(), 0);
        let s = sparsify(&[0.005, 5.0, 0.0, -7.1], 0.01).unwrap();
        assert_eq!(s.indices(), &[1, 3]);
        assert_eq!(s.values(), &[5.0, -7.1]);
        let s = sparsify(&[0.01, 0.009], 0.01).unwrap();
        assert_eq!(s.indices(), &[0]);
        assert!(matches!(sparsify(&[1.0], 0.0), Err(SparseError::NonPositiveTau(_))));
    }

    #[test]
    fn constructor_checks() {
        assert!(SparseVec::new(3, vec![0, 2], vec![1.0, 2.0]).is_ok());
        assert!(SparseVec::new(3, vec![2, 0], vec![1.0, 2.0]).is_err());
        assert!(SparseVec::new(3, vec![0, 3], vec![1.0, 2.0]).is_err());
        assert!(SparseVec::new(3, vec![0], vec![0.0]).is_err());
        assert!(SparseVec::new(3, vec![0], vec![]).is_err());
    }

    #[test]
    fn spmv_cases() {
        let w = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        let empty = SparseVec::from_dense(&[0.0; 3]);
        assert_eq!(spmv(w.view(), &empty).unwrap(), vec![0.0, 0.0]);
        let one = SparseVec::new(3, vec![1], vec![-2.0]).unwrap();
        assert_eq!(spmv(w.view(), &one).unwrap(), vec![-4.0, -10.0]);
        let wrong = SparseVec::from_dense(&[1.0; 4]);
        assert_eq!(spmv(w.view(), &wrong), Err(SparseError::DimMismatch { cols: 3, dim: 4 }));
    }

    #[test]
    fn large_random_matches_dense() {
        let p = BenchParams {
            d: 1152,
            out_dim: 2304,
            sparsity: 0.95,
            iters: 100,
            seed: 3,
        };
        let (w, c) = bench_inputs(&p);
        let s = SparseVec::from_dense(&c);
        assert_eq!(s.nnz(), 1152 - 1094);
        let a = dense_matvec(w.view(), &c).unwrap();
        let b = spmv(w.view(), &s).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-6 * x.abs().max(1e-12));
        }
    }

    #[test]
    fn bench_rejects_bad_params() {
        let mut p = BenchParams::new(16, 0.5);
        p.iters = 50;
        assert!(matches!(bench(&p), Err(SparseError::BadParams(_))));
        let p = BenchParams::new(16, 1.0);
        assert!(matches!(bench(&p), Err(SparseError::BadParams(_))));
    }

    #[test]
    fn bench_checksums_agree() {
        for sparsity in [0.0, 0.9] {
            let mut p = BenchParams::new(64, sparsity);
            p.iters = 100;
            let r = bench(&p).unwrap();
            assert!(r.outputs_identical);
            assert_eq!(r.checksum_dense.to_bits(), r.checksum_sparse.to_bits());
            assert!(r.speedup > 0.0 && r.dense_ns_per_op > 0.0 && r.sparse_ns_per_op > 0.0);
        }
    }

    proptest! {
        #[test]
        fn densify_equals_tail_prune(c in prop::collection::vec(prop_oneof![Just(0.0), -1.0f64..1.0], 1..64), tau in 0.001f64..0.8) {
            let s = sparsify(&c, tau).unwrap();
            prop_assert_eq!(s.densify(), prune(&c, &PruneConfig::Tail { tau }).unwrap());
        }
    }
}
