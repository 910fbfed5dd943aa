//! Similarity and sparsity measurements on embedding vectors.
//!
//! Magnitude-based statistics (participation ratio, sparsity, head/tail
//! splits, histograms) all operate on `|c_i|`. Threshold comparisons are
//! strict on both sides: `|c_i| < tau` is tail, `|c_i| > tau` is head, and
//! exact ties land in an explicit boundary set.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{EmbeddingKind, EmbeddingSet};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("row {0} has zero norm")]
    ZeroNormRow(usize),
    #[error("need at least {need} rows, got {got}")]
    TooSmall { need: usize, got: usize },
    #[error("matrix is {0}x{1}, expected square")]
    NotSquare(usize, usize),
    #[error("vector is all zeros")]
    AllZeroVector,
    #[error("participation ratio {alpha} outside [1, {d}]")]
    OutOfRange { alpha: f64, d: usize },
    #[error("threshold must be positive and finite, got {0}")]
    NonPositiveTau(f64),
    #[error("histogram edges must be strictly ascending with at least two entries")]
    BadEdges,
    #[error("row {row} out of range for {n} rows")]
    BadRow { row: usize, n: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Pairwise cosine similarity of the rows of `e`.
///
/// Each entry is computed from normalized rows in a fixed left-to-right
/// summation order; the upper triangle is mirrored so the result is exactly
/// symmetric, and the diagonal is set to 1.
pub fn cosine_matrix(e: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let (n, _) = e.dim();
    let mut sq = Vec::with_capacity(n);
    for (i, row) in e.axis_iter(Axis(0)).enumerate() {
        let s = row.iter().fold(0.0, |acc, x| acc + x * x);
        if s == 0.0 || !s.is_finite() {
            return Err(MetricsError::ZeroNormRow(i));
        }
        sq.push(s);
    }
    let mut m = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        m[[i, i]] = 1.0;
        let ri = e.row(i);
        for j in (i + 1)..n {
            let rj = e.row(j);
            let dot = ri.iter().zip(rj.iter()).fold(0.0, |acc, (a, b)| acc + a * b);
            let v = (dot / (sq[i] * sq[j]).sqrt()).clamp(-1.0, 1.0);
            m[[i, j]] = v;
            m[[j, i]] = v;
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineSummary {
    pub n: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

/// Mean/min/max over strictly off-diagonal entries.
pub fn cosine_summary(m: ArrayView2<'_, f64>) -> Result<CosineSummary> {
    let (r, c) = m.dim();
    if r != c {
        return Err(MetricsError::NotSquare(r, c));
    }
    if r < 2 {
        return Err(MetricsError::TooSmall { need: 2, got: r });
    }
    let (mut sum, mut min, mut max) = (0.0, f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..r {
        for j in 0..r {
            if i != j {
                let v = m[[i, j]];
                sum += v;
                min = min.min(v);
                max = max.max(v);
            }
        }
    }
    let mean = (sum / (r * (r - 1)) as f64).clamp(min, max);
    Ok(CosineSummary { n: r, mean, min, max })
}

/// `(Σ|v_i|)² / Σ v_i²`, the effective number of contributing coordinates.
///
/// The result is clamped to `[1, d]` to absorb last-bit rounding.
pub fn participation_ratio(v: &[f64]) -> Result<f64> {
    let (mut l1, mut l2) = (0.0f64, 0.0f64);
    for &x in v {
        let a = x.abs();
        l1 += a;
        l2 += a * a;
    }
    if l2 == 0.0 {
        return Err(MetricsError::AllZeroVector);
    }
    Ok((l1 * l1 / l2).clamp(1.0, v.len() as f64))
}

/// Normalized participation ratio `alpha / d`.
pub fn npr(alpha: f64, d: usize) -> Result<f64> {
    if d == 0 || !alpha.is_finite() || alpha < 1.0 || alpha > d as f64 {
        return Err(MetricsError::OutOfRange { alpha, d });
    }
    Ok(alpha / d as f64)
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(MetricsError::NonPositiveTau(tau))
    }
}

/// Fraction of coordinates with `|c_i| < tau`.
pub fn sparsity_tail(v: &[f64], tau: f64) -> Result<f64> {
    check_tau(tau)?;
    let n = v.iter().filter(|x| x.abs() < tau).count();
    Ok(n as f64 / v.len() as f64)
}

/// Fraction of coordinates with `|c_i| > tau`.
pub fn sparsity_head(v: &[f64], tau: f64) -> Result<f64> {
    check_tau(tau)?;
    let n = v.iter().filter(|x| x.abs() > tau).count();
    Ok(n as f64 / v.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadTailSplit {
    pub tau: f64,
    pub head: Vec<usize>,
    pub tail: Vec<usize>,
    pub boundary: Vec<usize>,
}

pub fn head_tail_split(v: &[f64], tau: f64) -> Result<HeadTailSplit> {
    check_tau(tau)?;
    let mut split = HeadTailSplit {
        tau,
        head: Vec::new(),
        tail: Vec::new(),
        boundary: Vec::new(),
    };
    for (i, x) in v.iter().enumerate() {
        let a = x.abs();
        if a > tau {
            split.head.push(i);
        } else if a < tau {
            split.tail.push(i);
        } else {
            split.boundary.push(i);
        }
    }
    Ok(split)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DimVariance {
    pub values: Vec<f64>,
    /// `(dimension, variance)` pairs, largest variance first.
    pub sorted: Vec<(usize, f64)>,
}

/// Population variance (divide by N) of every column of `e`.
pub fn variance_per_dim(e: ArrayView2<'_, f64>) -> Result<DimVariance> {
    let (n, _) = e.dim();
    if n < 2 {
        return Err(MetricsError::TooSmall { need: 2, got: n });
    }
    let values: Vec<f64> = e
        .axis_iter(Axis(1))
        .map(|col| {
            let mean = col.sum() / n as f64;
            col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64
        })
        .collect();
    let mut sorted: Vec<(usize, f64)> = values.iter().copied().enumerate().collect();
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(DimVariance { values, sorted })
}

pub const DEFAULT_HISTOGRAM_EDGES: [f64; 6] = [1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    /// `counts[k]` holds magnitudes in `[edges[k], edges[k + 1])`.
    pub counts: Vec<usize>,
    pub underflow: usize,
    pub overflow: usize,
}

pub fn magnitude_histogram(v: &[f64], edges: &[f64]) -> Result<Histogram> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(MetricsError::BadEdges);
    }
    let last = edges[edges.len() - 1];
    let mut h = Histogram {
        edges: edges.to_vec(),
        counts: vec![0; edges.len() - 1],
        underflow: 0,
        overflow: 0,
    };
    for x in v {
        let a = x.abs();
        if a < edges[0] {
            h.underflow += 1;
        } else if a >= last {
            h.overflow += 1;
        } else {
            // first edge strictly greater than a, minus one
            let k = edges.partition_point(|&e| e <= a) - 1;
            h.counts[k] += 1;
        }
    }
    Ok(h)
}

/// Element-wise mean of `|E|` across rows.
pub fn mean_abs_vector(e: ArrayView2<'_, f64>) -> Vec<f64> {
    let n = e.nrows().max(1) as f64;
    e.axis_iter(Axis(1))
        .map(|col| col.iter().map(|x| x.abs()).sum::<f64>() / n)
        .collect()
}

/// Which part of the conditioning signal a report describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnalysisMode {
    #[serde(rename = "y")]
    ClassOnly,
    #[serde(rename = "t")]
    TimestepOnly,
    #[serde(rename = "y+t")]
    Combined,
}

impl AnalysisMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AnalysisMode::ClassOnly => "y",
            AnalysisMode::TimestepOnly => "t",
            AnalysisMode::Combined => "y+t",
        }
    }

    pub fn for_kind(kind: EmbeddingKind) -> Self {
        match kind {
            EmbeddingKind::ClassTable => AnalysisMode::ClassOnly,
            EmbeddingKind::TimestepGrid => AnalysisMode::TimestepOnly,
            EmbeddingKind::Condition => AnalysisMode::Combined,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrMode {
    /// PR of the mean |c| over rows, one number per model.
    #[default]
    MeanAbs,
    /// Additionally report the PR of every row.
    PerRow,
}

#[derive(Debug, Clone, Default)]
pub struct AnalyzeOptions {
    pub pr_mode: PrMode,
    /// Row to drop before analysis, e.g. a null/unconditional class.
    pub exclude_row: Option<usize>,
    /// Overrides the mode inferred from the embedding kind.
    pub mode: Option<AnalysisMode>,
}

/// Composite report over one embedding set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub kind: AnalysisMode,
    pub model_name: String,
    pub d: usize,
    pub n_rows: usize,
    pub pr: f64,
    pub npr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pr_per_row: Option<Vec<f64>>,
    /// `None` when fewer than two rows are available.
    pub cosine: Option<CosineStats>,
    pub cosine_omitted: bool,
    pub tail_fraction: BTreeMap<String, f64>,
    pub head_count: BTreeMap<String, usize>,
    pub variance_top20: Vec<f64>,
    pub variance_top20_dims: Vec<usize>,
    pub histogram: Histogram,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestep_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excluded_row: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

/// Map keys used for thresholds: shortest round-trip decimal form.
pub fn tau_key(tau: f64) -> String {
    format!("{tau}")
}

fn drop_row(e: ArrayView2<'_, f64>, row: usize) -> Result<Array2<f64>> {
    let n = e.nrows();
    if row >= n {
        return Err(MetricsError::BadRow { row, n });
    }
    let keep: Vec<usize> = (0..n).filter(|&i| i != row).collect();
    Ok(e.select(Axis(0), &keep))
}

/// Runs the whole measurement suite on `set`.
pub fn analyze_embedding_set(set: &EmbeddingSet, taus: &[f64], opts: &AnalyzeOptions) -> Result<AnalysisReport> {
    let full = set
        .matrix()
        .to_array2()
        .map_err(|e| MetricsError::Shape(e.to_string()))?;
    let e = match opts.exclude_row {
        Some(r) => drop_row(full.view(), r)?,
        None => full,
    };
    analyze_matrix(
        e.view(),
        taus,
        opts,
        opts.mode.unwrap_or(AnalysisMode::for_kind(set.kind())),
        &set.meta().model_name,
        set.meta().timestep_value,
    )
}

pub fn analyze_matrix(
    e: ArrayView2<'_, f64>,
    taus: &[f64],
    opts: &AnalyzeOptions,
    kind: AnalysisMode,
    model_name: &str,
    timestep_value: Option<f64>,
) -> Result<AnalysisReport> {
    let (n, d) = e.dim();
    if n == 0 || d == 0 {
        return Err(MetricsError::TooSmall { need: 1, got: n.min(d) });
    }
    for &t in taus {
        check_tau(t)?;
    }
    let magnitude = mean_abs_vector(e);
    let pr = participation_ratio(&magnitude)?;
    let npr_value = npr(pr, d)?;
    let pr_per_row = match opts.pr_mode {
        PrMode::MeanAbs => None,
        PrMode::PerRow => Some(
            e.axis_iter(Axis(0))
                .map(|r| participation_ratio(r.as_slice().expect("standard layout")))
                .collect::<Result<Vec<_>>>()?,
        ),
    };

    let cosine = if n >= 2 {
        let s = cosine_summary(cosine_matrix(e)?.view())?;
        Some(CosineStats {
            mean: s.mean,
            min: s.min,
            max: s.max,
        })
    } else {
        None
    };

    let mut tail_fraction = BTreeMap::new();
    let mut head_count = BTreeMap::new();
    for &tau in taus {
        tail_fraction.insert(tau_key(tau), sparsity_tail(&magnitude, tau)?);
        head_count.insert(tau_key(tau), head_tail_split(&magnitude, tau)?.head.len());
    }

    let (variance_top20, variance_top20_dims) = if n >= 2 {
        let v = variance_per_dim(e)?;
        v.sorted.iter().take(20).map(|&(i, x)| (x, i)).unzip()
    } else {
        (Vec::new(), Vec::new())
    };

    Ok(AnalysisReport {
        kind,
        model_name: model_name.to_string(),
        d,
        n_rows: n,
        pr,
        npr: npr_value,
        pr_per_row,
        cosine,
        cosine_omitted: n < 2,
        tail_fraction,
        head_count,
        variance_top20,
        variance_top20_dims,
        histogram: magnitude_histogram(&magnitude, &DEFAULT_HISTOGRAM_EDGES)?,
        timestep_value,
        excluded_row: opts.exclude_row,
    })
}
