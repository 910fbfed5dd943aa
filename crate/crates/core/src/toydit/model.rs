//! Toy AdaLN diffusion transformer on 2-D points, with a hand-written
//! backward pass.
//!
//! ```text
//! c   = class_table[y] + W2 silu(W1 feats(t) + b1) + b2
//! u   = act(c)
//! h   = W_in x + b_in
//! per block:  h += gate(u) * MLP(gamma(u) * norm(h) + beta(u))
//! eps = W_out h + b_out
//! ```

use ndarray::{s, Array1, Array2, ArrayView2, ArrayViewD, ArrayViewMutD, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::{CondActivation, ToyConfig};
use super::real::{matmul, matmul_into, Real};
use super::ToyError;
use crate::adaln::{embed_timestep, NORM_EPS};

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<T: Real = f64> {
    pub w_gamma: Array2<T>,
    pub w_beta: Array2<T>,
    pub w_gate: Array2<T>,
    pub b_gamma: Option<Array1<T>>,
    pub b_beta: Option<Array1<T>>,
    pub b_gate: Option<Array1<T>>,
    pub mlp_w1: Array2<T>,
    pub mlp_b1: Array1<T>,
    pub mlp_w2: Array2<T>,
    pub mlp_b2: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T: Real = f64> {
    pub class_table: Array2<T>,
    pub t_w1: Array2<T>,
    pub t_b1: Array1<T>,
    pub t_w2: Array2<T>,
    pub t_b2: Array1<T>,
    pub in_w: Array2<T>,
    pub in_b: Array1<T>,
    pub out_w: Array2<T>,
    pub out_b: Array1<T>,
    pub blocks: Vec<BlockParams<T>>,
    pub cond_activation: CondActivation,
    /// Multiplies the integer timestep before the sinusoidal features.
    pub time_scale: f64,
}

fn normal<T: Real>(rng: &mut ChaCha8Rng, shape: (usize, usize), std: f64) -> Array2<T> {
    Array2::from_shape_simple_fn(shape, || T::of(std * rng.sample::<f64, _>(StandardNormal)))
}

fn fan_in<T: Real>(rng: &mut ChaCha8Rng, out: usize, inp: usize) -> Array2<T> {
    normal(rng, (out, inp), (1.0 / inp as f64).sqrt())
}

impl<T: Real> ModelParams<T> {
    /// Gate projections start at zero so every residual branch is the identity.
    /// Draws are made in double precision, so both precisions share an init.
    pub fn init(cfg: &ToyConfig) -> Result<Self, ToyError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (k, d, w, fd) = (cfg.n_classes, cfg.cond_dim, cfg.hidden_width, cfg.freq_dim);
        let class_table = normal(&mut rng, (k, d), cfg.init_std_cond);
        let t_w1 = normal(&mut rng, (d, fd), cfg.init_std_cond);
        let t_w2 = normal(&mut rng, (d, d), cfg.init_std_cond);
        let in_w = fan_in(&mut rng, w, 2);
        let out_w = fan_in(&mut rng, 2, w);
        let bias = |n: usize| cfg.modulation_bias.then(|| Array1::zeros(n));
        let blocks = (0..cfg.n_blocks)
            .map(|_| BlockParams {
                w_gamma: normal(&mut rng, (w, d), cfg.init_std_mod),
                w_beta: normal(&mut rng, (w, d), cfg.init_std_mod),
                w_gate: Array2::zeros((w, d)),
                b_gamma: bias(w),
                b_beta: bias(w),
                b_gate: bias(w),
                mlp_w1: fan_in(&mut rng, 4 * w, w),
                mlp_b1: Array1::zeros(4 * w),
                mlp_w2: fan_in(&mut rng, w, 4 * w),
                mlp_b2: Array1::zeros(w),
            })
            .collect();
        Ok(ModelParams {
            class_table,
            t_w1,
            t_b1: Array1::zeros(d),
            t_w2,
            t_b2: Array1::zeros(d),
            in_w,
            in_b: Array1::zeros(w),
            out_w,
            out_b: Array1::zeros(2),
            blocks,
            cond_activation: cfg.cond_activation,
            time_scale: cfg.time_scale(),
        })
    }

    /// Element-wise conversion to another precision.
    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let m2 = |a: &Array2<T>| a.mapv(|x| U::of(x.as_f64()));
        let m1 = |a: &Array1<T>| a.mapv(|x| U::of(x.as_f64()));
        ModelParams {
            class_table: m2(&self.class_table),
            t_w1: m2(&self.t_w1),
            t_b1: m1(&self.t_b1),
            t_w2: m2(&self.t_w2),
            t_b2: m1(&self.t_b2),
            in_w: m2(&self.in_w),
            in_b: m1(&self.in_b),
            out_w: m2(&self.out_w),
            out_b: m1(&self.out_b),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockParams {
                    w_gamma: m2(&b.w_gamma),
                    w_beta: m2(&b.w_beta),
                    w_gate: m2(&b.w_gate),
                    b_gamma: b.b_gamma.as_ref().map(m1),
                    b_beta: b.b_beta.as_ref().map(m1),
                    b_gate: b.b_gate.as_ref().map(m1),
                    mlp_w1: m2(&b.mlp_w1),
                    mlp_b1: m1(&b.mlp_b1),
                    mlp_w2: m2(&b.mlp_w2),
                    mlp_b2: m1(&b.mlp_b2),
                })
                .collect(),
            cond_activation: self.cond_activation,
            time_scale: self.time_scale,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.class_table.nrows()
    }

    pub fn cond_dim(&self) -> usize {
        self.class_table.ncols()
    }

    pub fn freq_dim(&self) -> usize {
        self.t_w1.ncols()
    }

    pub fn hidden_width(&self) -> usize {
        self.in_w.nrows()
    }

    /// Same shapes, all zeros; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, mut t) in z.tensors_mut() {
            t.fill(T::zero());
        }
        z
    }

    /// Every trainable tensor with a stable name, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        let mut out = vec![
            ("class_table".to_string(), self.class_table.view().into_dyn()),
            ("t_mlp.w1".into(), self.t_w1.view().into_dyn()),
            ("t_mlp.b1".into(), self.t_b1.view().into_dyn()),
            ("t_mlp.w2".into(), self.t_w2.view().into_dyn()),
            ("t_mlp.b2".into(), self.t_b2.view().into_dyn()),
            ("input.w".into(), self.in_w.view().into_dyn()),
            ("input.b".into(), self.in_b.view().into_dyn()),
            ("output.w".into(), self.out_w.view().into_dyn()),
            ("output.b".into(), self.out_b.view().into_dyn()),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            let p = |n: &str| format!("blocks.{i}.{n}");
            out.push((p("w_gamma"), b.w_gamma.view().into_dyn()));
            out.push((p("w_beta"), b.w_beta.view().into_dyn()));
            out.push((p("w_gate"), b.w_gate.view().into_dyn()));
            for (n, v) in [("b_gamma", &b.b_gamma), ("b_beta", &b.b_beta), ("b_gate", &b.b_gate)] {
                if let Some(v) = v {
                    out.push((p(n), v.view().into_dyn()));
                }
            }
            out.push((p("mlp.w1"), b.mlp_w1.view().into_dyn()));
            out.push((p("mlp.b1"), b.mlp_b1.view().into_dyn()));
            out.push((p("mlp.w2"), b.mlp_w2.view().into_dyn()));
            out.push((p("mlp.b2"), b.mlp_b2.view().into_dyn()));
        }
        out
    }

    /// Mutable counterpart of [`ModelParams::tensors`], same order and names.
    pub fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, T>)> {
        let mut out = vec![
            ("class_table".to_string(), self.class_table.view_mut().into_dyn()),
            ("t_mlp.w1".into(), self.t_w1.view_mut().into_dyn()),
            ("t_mlp.b1".into(), self.t_b1.view_mut().into_dyn()),
            ("t_mlp.w2".into(), self.t_w2.view_mut().into_dyn()),
            ("t_mlp.b2".into(), self.t_b2.view_mut().into_dyn()),
            ("input.w".into(), self.in_w.view_mut().into_dyn()),
            ("input.b".into(), self.in_b.view_mut().into_dyn()),
            ("output.w".into(), self.out_w.view_mut().into_dyn()),
            ("output.b".into(), self.out_b.view_mut().into_dyn()),
        ];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let p = |n: &str| format!("blocks.{i}.{n}");
            out.push((p("w_gamma"), b.w_gamma.view_mut().into_dyn()));
            out.push((p("w_beta"), b.w_beta.view_mut().into_dyn()));
            out.push((p("w_gate"), b.w_gate.view_mut().into_dyn()));
            for (n, v) in [("b_gamma", &mut b.b_gamma), ("b_beta", &mut b.b_beta), ("b_gate", &mut b.b_gate)] {
                if let Some(v) = v {
                    out.push((p(n), v.view_mut().into_dyn()));
                }
            }
            out.push((p("mlp.w1"), b.mlp_w1.view_mut().into_dyn()));
            out.push((p("mlp.b1"), b.mlp_b1.view_mut().into_dyn()));
            out.push((p("mlp.w2"), b.mlp_w2.view_mut().into_dyn()));
            out.push((p("mlp.b2"), b.mlp_b2.view_mut().into_dyn()));
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    /// True while every gate projection (and gate bias) is exactly zero.
    pub fn gates_are_zero(&self) -> bool {
        self.blocks.iter().all(|b| {
            b.w_gate.iter().all(|x| x.is_zero()) && b.b_gate.as_ref().is_none_or(|g| g.iter().all(|x| x.is_zero()))
        })
    }

    /// Sinusoidal features for each timestep, one row per entry.
    pub fn time_features(&self, ts: &[usize]) -> Array2<T> {
        let fd = self.freq_dim();
        let mut out = Array2::zeros((ts.len(), fd));
        for (mut row, &t) in out.rows_mut().into_iter().zip(ts) {
            let e = embed_timestep(t as f64 * self.time_scale, fd).expect("freq_dim validated even");
            row.iter_mut().zip(e).for_each(|(o, v)| *o = T::of(v));
        }
        out
    }

    fn check_batch(&self, n: usize, feats: ArrayView2<'_, T>, labels: &[usize]) -> Result<(), ToyError> {
        if feats.nrows() != n || labels.len() != n || feats.ncols() != self.freq_dim() {
            return Err(ToyError::ShapeMismatch(format!(
                "batch of {n}: {} feature rows of width {} (want {}), {} labels",
                feats.nrows(),
                feats.ncols(),
                self.freq_dim(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= self.n_classes()) {
            return Err(ToyError::ShapeMismatch(format!("label {l} out of range for {} classes", self.n_classes())));
        }
        Ok(())
    }

    /// Condition vectors `c`, one row per (feature row, label).
    pub fn condition(&self, feats: ArrayView2<'_, T>, labels: &[usize]) -> Result<Array2<T>, ToyError> {
        self.check_batch(labels.len(), feats, labels)?;
        Ok(self.condition_cached(feats, labels).c)
    }

    fn condition_cached(&self, feats: ArrayView2<'_, T>, labels: &[usize]) -> CondCache<T> {
        let a1 = affine(feats, &self.t_w1, Some(&self.t_b1));
        let (s1, sig1) = silu_pair(&a1);
        let mut c = affine(s1.view(), &self.t_w2, Some(&self.t_b2));
        for (mut row, &l) in c.rows_mut().into_iter().zip(labels) {
            row.zip_mut_with(&self.class_table.row(l), |a, &b| *a = *a + b);
        }
        CondCache { a1, sig1, s1, c }
    }

    /// Noise prediction from precomputed condition vectors; this is where a
    /// pruned `c` enters.
    pub fn forward_from_condition(&self, x: ArrayView2<'_, T>, c: ArrayView2<'_, T>) -> Result<Array2<T>, ToyError> {
        if x.ncols() != 2 || c.nrows() != x.nrows() || c.ncols() != self.cond_dim() {
            return Err(ToyError::ShapeMismatch(format!(
                "x {:?} and c {:?} (cond_dim {})",
                x.dim(),
                c.dim(),
                self.cond_dim()
            )));
        }
        Ok(self.trunk(x, c).out)
    }

    /// `eps_hat` together with the `c` that produced it.
    pub fn forward_eps(&self, x: ArrayView2<'_, T>, ts: &[usize], labels: &[usize]) -> Result<(Array2<T>, Array2<T>), ToyError> {
        let feats = self.time_features(ts);
        let c = self.condition(feats.view(), labels)?;
        let out = self.forward_from_condition(x, c.view())?;
        Ok((out, c))
    }

    fn trunk(&self, x: ArrayView2<'_, T>, c: ArrayView2<'_, T>) -> TrunkCache<T> {
        let (u, sig_c) = match self.cond_activation {
            CondActivation::Identity => (c.to_owned(), None),
            CondActivation::Silu => {
                let (u, s) = silu_pair(&c.to_owned());
                (u, Some(s))
            }
        };
        let mut h = affine(x, &self.in_w, Some(&self.in_b));
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let g = affine(u.view(), &b.w_gamma, b.b_gamma.as_ref());
            let be = affine(u.view(), &b.w_beta, b.b_beta.as_ref());
            let ga = affine(u.view(), &b.w_gate, b.b_gate.as_ref());
            let (n, sd) = normalize(&h);
            let mut a = g.clone();
            zip3(&mut a, &n, &be, |a, n, be| *a = *a * n + be);
            let z1 = affine(a.view(), &b.mlp_w1, Some(&b.mlp_b1));
            let (s, sig) = silu_pair(&z1);
            let f = affine(s.view(), &b.mlp_w2, Some(&b.mlp_b2));
            zip3(&mut h, &ga, &f, |h, ga, f| *h = *h + ga * f);
            blocks.push(BlockCache {
                n,
                sd,
                g,
                ga,
                a,
                z1,
                sig,
                s,
                f,
            });
        }
        let out = affine(h.view(), &self.out_w, Some(&self.out_b));
        TrunkCache { u, sig_c, blocks, h, out }
    }

    /// Mean squared noise error over the batch and its gradient for every tensor.
    pub fn loss_and_grads(&self, batch: &Batch<T>) -> Result<(f64, ModelParams<T>), ToyError> {
        let mut grads = self.zeros_like();
        let loss = self.accumulate_grads(batch, &mut grads)?;
        Ok((loss, grads))
    }

    /// Loss only; no gradient bookkeeping.
    pub fn loss(&self, batch: &Batch<T>) -> Result<f64, ToyError> {
        self.validate_batch(batch)?;
        let c = self.condition_cached(batch.feats.view(), &batch.labels).c;
        let out = self.trunk(batch.x.view(), c.view()).out;
        Ok(mse(&out, &batch.eps))
    }

    fn validate_batch(&self, batch: &Batch<T>) -> Result<(), ToyError> {
        let n = batch.x.nrows();
        if n == 0 {
            return Err(ToyError::ShapeMismatch("empty batch".into()));
        }
        if batch.x.ncols() != 2 || batch.eps.dim() != (n, 2) {
            return Err(ToyError::ShapeMismatch(format!("x {:?}, eps {:?}", batch.x.dim(), batch.eps.dim())));
        }
        self.check_batch(n, batch.feats.view(), &batch.labels)
    }

    /// Writes gradients into `grads` (overwriting) and returns the loss.
    pub fn accumulate_grads(&self, batch: &Batch<T>, grads: &mut ModelParams<T>) -> Result<f64, ToyError> {
        self.validate_batch(batch)?;
        let cc = self.condition_cached(batch.feats.view(), &batch.labels);
        let tc = self.trunk(batch.x.view(), cc.c.view());
        let loss = mse(&tc.out, &batch.eps);

        let scale = T::of(2.0 / batch.x.nrows() as f64);
        let mut dout = tc.out.clone();
        zip2(&mut dout, &batch.eps, |d, e| *d = (*d - e) * scale);
        matmul_into(grads.out_w.view_mut(), dout.t(), tc.h.view(), false);
        col_sum(&dout, &mut grads.out_b);
        let mut dh = matmul(dout.view(), self.out_w.view());
        let mut du = Array2::<T>::zeros(tc.u.dim());

        for (bi, (b, k)) in self.blocks.iter().zip(&tc.blocks).enumerate().rev() {
            let gb = &mut grads.blocks[bi];
            let mut dga = dh.clone();
            zip2(&mut dga, &k.f, |d, f| *d = *d * f);
            let mut df = dh.clone();
            zip2(&mut df, &k.ga, |d, g| *d = *d * g);
            matmul_into(gb.mlp_w2.view_mut(), df.t(), k.s.view(), false);
            col_sum(&df, &mut gb.mlp_b2);
            let mut dz1 = matmul(df.view(), b.mlp_w2.view());
            zip3(&mut dz1, &k.z1, &k.sig, |d, z, s| *d = *d * silu_grad_from(z, s));
            matmul_into(gb.mlp_w1.view_mut(), dz1.t(), k.a.view(), false);
            col_sum(&dz1, &mut gb.mlp_b1);
            let da = matmul(dz1.view(), b.mlp_w1.view());
            let mut dg = da.clone();
            zip2(&mut dg, &k.n, |d, n| *d = *d * n);
            let mut dn = da.clone();
            zip2(&mut dn, &k.g, |d, g| *d = *d * g);

            matmul_into(gb.w_gamma.view_mut(), dg.t(), tc.u.view(), false);
            matmul_into(gb.w_beta.view_mut(), da.t(), tc.u.view(), false);
            matmul_into(gb.w_gate.view_mut(), dga.t(), tc.u.view(), false);
            for (slot, d) in [(&mut gb.b_gamma, &dg), (&mut gb.b_beta, &da), (&mut gb.b_gate, &dga)] {
                if let Some(v) = slot {
                    col_sum(d, v);
                }
            }
            matmul_into(du.view_mut(), dg.view(), b.w_gamma.view(), true);
            matmul_into(du.view_mut(), da.view(), b.w_beta.view(), true);
            matmul_into(du.view_mut(), dga.view(), b.w_gate.view(), true);

            normalize_backward(&dn, &k.n, &k.sd, &mut dh);
        }

        matmul_into(grads.in_w.view_mut(), dh.t(), batch.x.view(), false);
        col_sum(&dh, &mut grads.in_b);

        let mut dc = du;
        if let Some(sig) = &tc.sig_c {
            zip3(&mut dc, &cc.c, sig, |d, c, s| *d = *d * silu_grad_from(c, s));
        }
        grads.class_table.fill(T::zero());
        for (row, &l) in dc.rows().into_iter().zip(&batch.labels) {
            grads.class_table.row_mut(l).zip_mut_with(&row, |a, &b| *a = *a + b);
        }
        matmul_into(grads.t_w2.view_mut(), dc.t(), cc.s1.view(), false);
        col_sum(&dc, &mut grads.t_b2);
        let mut da1 = matmul(dc.view(), self.t_w2.view());
        zip3(&mut da1, &cc.a1, &cc.sig1, |d, a, s| *d = *d * silu_grad_from(a, s));
        matmul_into(grads.t_w1.view_mut(), da1.t(), batch.feats.view(), false);
        col_sum(&da1, &mut grads.t_b1);
        Ok(loss)
    }
}

/// One training or evaluation batch; `feats` are the timestep features.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T: Real = f64> {
    pub x: Array2<T>,
    pub feats: Array2<T>,
    pub labels: Vec<usize>,
    pub eps: Array2<T>,
}

struct CondCache<T: Real> {
    a1: Array2<T>,
    sig1: Array2<T>,
    s1: Array2<T>,
    c: Array2<T>,
}

struct BlockCache<T: Real> {
    n: Array2<T>,
    sd: Array1<T>,
    g: Array2<T>,
    ga: Array2<T>,
    a: Array2<T>,
    z1: Array2<T>,
    sig: Array2<T>,
    s: Array2<T>,
    f: Array2<T>,
}

struct TrunkCache<T: Real> {
    u: Array2<T>,
    sig_c: Option<Array2<T>>,
    blocks: Vec<BlockCache<T>>,
    h: Array2<T>,
    out: Array2<T>,
}

pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

pub fn silu<T: Real>(x: T) -> T {
    x * sigmoid(x)
}

pub fn silu_grad<T: Real>(x: T) -> T {
    silu_grad_from(x, sigmoid(x))
}

fn silu_grad_from<T: Real>(x: T, s: T) -> T {
    s * (T::one() + x * (T::one() - s))
}

/// `(silu(z), sigmoid(z))`, element-wise.
fn silu_pair<T: Real>(z: &Array2<T>) -> (Array2<T>, Array2<T>) {
    let sig = z.mapv(sigmoid);
    let mut out = z.clone();
    zip2(&mut out, &sig, |o, s| *o = *o * s);
    (out, sig)
}

fn contiguous<T: Real>(a: &Array2<T>) -> &[T] {
    a.as_slice().expect("standard layout")
}

fn zip2<T: Real>(a: &mut Array2<T>, b: &Array2<T>, f: impl Fn(&mut T, T)) {
    debug_assert_eq!(a.dim(), b.dim());
    let a = a.as_slice_mut().expect("standard layout");
    for (x, &y) in a.iter_mut().zip(contiguous(b)) {
        f(x, y);
    }
}

fn zip3<T: Real>(a: &mut Array2<T>, b: &Array2<T>, c: &Array2<T>, f: impl Fn(&mut T, T, T)) {
    debug_assert_eq!(a.dim(), b.dim());
    debug_assert_eq!(a.dim(), c.dim());
    let a = a.as_slice_mut().expect("standard layout");
    for ((x, &y), &z) in a.iter_mut().zip(contiguous(b)).zip(contiguous(c)) {
        f(x, y, z);
    }
}

/// Sums over rows in ascending order into `out`.
fn col_sum<T: Real>(d: &Array2<T>, out: &mut Array1<T>) {
    out.fill(T::zero());
    let out = out.as_slice_mut().expect("contiguous");
    for row in d.rows() {
        for (o, &v) in out.iter_mut().zip(row.iter()) {
            *o = *o + v;
        }
    }
}

/// `x W^T + b`.
fn affine<T: Real>(x: ArrayView2<'_, T>, w: &Array2<T>, b: Option<&Array1<T>>) -> Array2<T> {
    let mut y = matmul(x, w.t());
    if let Some(b) = b {
        let b = b.as_slice().expect("contiguous");
        for mut row in y.rows_mut() {
            for (o, &v) in row.iter_mut().zip(b) {
                *o = *o + v;
            }
        }
    }
    y
}

fn mse<T: Real>(out: &Array2<T>, eps: &Array2<T>) -> f64 {
    let total = contiguous(out)
        .iter()
        .zip(contiguous(eps))
        .fold(T::zero(), |acc, (&o, &e)| acc + (o - e) * (o - e));
    total.as_f64() / out.nrows() as f64
}

/// Row-wise `(h - mu) / (sd + eps)` with population sd.
fn normalize<T: Real>(h: &Array2<T>) -> (Array2<T>, Array1<T>) {
    let w = T::of(h.ncols() as f64);
    let eps = T::of(NORM_EPS);
    let mut n = h.clone();
    let mut sds = Array1::zeros(h.nrows());
    for (mut row, sd) in n.rows_mut().into_iter().zip(sds.iter_mut()) {
        let row = row.as_slice_mut().expect("standard layout");
        let mu = row.iter().fold(T::zero(), |a, &x| a + x) / w;
        row.iter_mut().for_each(|x| *x = *x - mu);
        let var = row.iter().fold(T::zero(), |a, &x| a + x * x) / w;
        *sd = var.sqrt();
        let inv = T::one() / (*sd + eps);
        row.iter_mut().for_each(|x| *x = *x * inv);
    }
    (n, sds)
}

/// Adds the input gradient of [`normalize`] to `dh`.
fn normalize_backward<T: Real>(dn: &Array2<T>, n: &Array2<T>, sd: &Array1<T>, dh: &mut Array2<T>) {
    let w = T::of(n.ncols() as f64);
    let eps = T::of(NORM_EPS);
    for (((dn, n), &sd), mut dh) in dn.rows().into_iter().zip(n.rows()).zip(sd).zip(dh.rows_mut()) {
        let (dn, n, dh) = (
            dn.to_slice().expect("standard layout"),
            n.to_slice().expect("standard layout"),
            dh.as_slice_mut().expect("standard layout"),
        );
        let inv = T::one() / (sd + eps);
        let mean_dn = dn.iter().fold(T::zero(), |a, &x| a + x) / w;
        let proj = if sd > T::zero() {
            dn.iter().zip(n).fold(T::zero(), |a, (&x, &y)| a + x * y) / (w * sd)
        } else {
            T::zero()
        };
        for ((dh, &dn), &n) in dh.iter_mut().zip(dn).zip(n) {
            *dh = *dh + (dn - mean_dn) * inv - proj * n;
        }
    }
}

/// Builds a batch from raw points: `feats` computed for each timestep.
pub fn make_batch<T: Real>(params: &ModelParams<T>, x: Array2<T>, ts: &[usize], labels: Vec<usize>, eps: Array2<T>) -> Batch<T> {
    Batch {
        feats: params.time_features(ts),
        x,
        labels,
        eps,
    }
}

/// Duplicates every row of a batch; used to check mean invariance.
pub fn duplicate_batch<T: Real>(b: &Batch<T>) -> Batch<T> {
    let cat = |a: &Array2<T>| ndarray::concatenate(Axis(0), &[a.view(), a.view()]).expect("same widths");
    Batch {
        x: cat(&b.x),
        feats: cat(&b.feats),
        labels: b.labels.iter().chain(&b.labels).copied().collect(),
        eps: cat(&b.eps),
    }
}

/// First `n` rows of a batch.
pub fn head_of_batch<T: Real>(b: &Batch<T>, n: usize) -> Batch<T> {
    Batch {
        x: b.x.slice(s![..n, ..]).to_owned(),
        feats: b.feats.slice(s![..n, ..]).to_owned(),
        labels: b.labels[..n].to_vec(),
        eps: b.eps.slice(s![..n, ..]).to_owned(),
    }
}
