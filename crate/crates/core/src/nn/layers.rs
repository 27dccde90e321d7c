//! Forward passes returning a cache; each cache's `backward` maps the upstream
//! gradient to input gradients and accumulates parameter gradients.

use serde::{Deserialize, Serialize};

use super::tensor::{Param, Tensor2};
use crate::error::{Error, Result};
use crate::graph::CsrMatrix;

/// Sparse-dense product `A · H`. Each output row is reduced in column order.
pub fn spmm(a: &CsrMatrix, h: &Tensor2) -> Result<Tensor2> {
    if a.n_cols() != h.rows() {
        return Err(Error::shape("spmm", a.n_cols(), h.rows()));
    }
    let mut out = Tensor2::zeros(a.n_rows(), h.cols());
    for i in 0..a.n_rows() {
        let (idx, val) = a.row(i);
        let out_row = out.row_mut(i);
        for (&j, &w) in idx.iter().zip(val) {
            for (o, &x) in out_row.iter_mut().zip(h.row(j)) {
                *o += w * x;
            }
        }
    }
    Ok(out)
}

fn relu_in_place(x: &mut Tensor2) -> Vec<bool> {
    x.as_mut_slice()
        .iter_mut()
        .map(|v| {
            // derivative at exactly 0 is taken as 0
            let on = *v > 0.0;
            if !on {
                *v = 0.0;
            }
            on
        })
        .collect()
}

fn apply_mask(grad: &Tensor2, mask: Option<&[bool]>) -> Tensor2 {
    match mask {
        None => grad.clone(),
        Some(mask) => {
            let mut g = grad.clone();
            for (x, &on) in g.as_mut_slice().iter_mut().zip(mask) {
                if !on {
                    *x = 0.0;
                }
            }
            g
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReluCache {
    mask: Vec<bool>,
}

pub fn relu(x: &Tensor2) -> (Tensor2, ReluCache) {
    let mut out = x.clone();
    let mask = relu_in_place(&mut out);
    (out, ReluCache { mask })
}

impl ReluCache {
    pub fn backward(&self, grad_out: &Tensor2) -> Tensor2 {
        apply_mask(grad_out, Some(&self.mask))
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }
}

/// Cache of one `ζ(Â H W)` layer.
#[derive(Debug, Clone)]
pub struct GcnCache {
    propagated: Tensor2,
    mask: Option<Vec<bool>>,
}

/// `ζ(Â · H_in · W)`, ReLU optional. `a` must be symmetric (as the GCN
/// propagation matrix is); the backward pass uses it as its own transpose.
pub fn gcn_layer(
    h_in: &Tensor2,
    w: &Param,
    a: &CsrMatrix,
    apply_relu: bool,
) -> Result<(Tensor2, GcnCache)> {
    if h_in.cols() != w.value.rows() {
        return Err(Error::shape("gcn_layer", w.value.rows(), h_in.cols()));
    }
    let propagated = spmm(a, h_in)?;
    let mut out = propagated.matmul(&w.value)?;
    let mask = apply_relu.then(|| relu_in_place(&mut out));
    Ok((out, GcnCache { propagated, mask }))
}

impl GcnCache {
    pub fn backward(&self, grad_out: &Tensor2, w: &mut Param, a: &CsrMatrix) -> Result<Tensor2> {
        let g = apply_mask(grad_out, self.mask.as_deref());
        w.grad.add_assign(&self.propagated.t_matmul(&g)?)?;
        spmm(a, &g.matmul_t(&w.value)?)
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }
}

#[derive(Debug, Clone)]
pub struct SageCache {
    concat: Tensor2,
    mask: Option<Vec<bool>>,
}

/// Mean-aggregator SAGE layer `ζ([H ; M·H] W)` where `M` is the row-normalised
/// neighbour matrix. `W` has `2·d_in` rows.
pub fn sage_layer(
    h_in: &Tensor2,
    w: &Param,
    mean: &CsrMatrix,
    apply_relu: bool,
) -> Result<(Tensor2, SageCache)> {
    if 2 * h_in.cols() != w.value.rows() {
        return Err(Error::shape("sage_layer", w.value.rows(), 2 * h_in.cols()));
    }
    let concat = h_in.hcat(&spmm(mean, h_in)?)?;
    let mut out = concat.matmul(&w.value)?;
    let mask = apply_relu.then(|| relu_in_place(&mut out));
    Ok((out, SageCache { concat, mask }))
}

impl SageCache {
    /// `mean_t` is the transpose of the aggregation matrix used forward.
    pub fn backward(
        &self,
        grad_out: &Tensor2,
        w: &mut Param,
        mean_t: &CsrMatrix,
    ) -> Result<Tensor2> {
        let g = apply_mask(grad_out, self.mask.as_deref());
        w.grad.add_assign(&self.concat.t_matmul(&g)?)?;
        let g_concat = g.matmul_t(&w.value)?;
        let (g_self, g_nbr) = g_concat.hsplit(g_concat.cols() / 2);
        let mut g_in = g_self;
        g_in.add_assign(&spmm(mean_t, &g_nbr)?)?;
        Ok(g_in)
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }
}

#[derive(Debug, Clone)]
pub struct LinearCache {
    input: Tensor2,
}

/// `X W + b` with `b` a `1 × out` row broadcast over rows.
pub fn linear(x: &Tensor2, w: &Param, b: &Param) -> Result<(Tensor2, LinearCache)> {
    if b.value.shape() != (1, w.value.cols()) {
        return Err(Error::shape(
            "linear bias",
            format!("(1, {})", w.value.cols()),
            format!("{:?}", b.value.shape()),
        ));
    }
    let mut out = x.matmul(&w.value)?;
    let bias = b.value.row(0);
    for i in 0..out.rows() {
        for (o, &c) in out.row_mut(i).iter_mut().zip(bias) {
            *o += c;
        }
    }
    Ok((out, LinearCache { input: x.clone() }))
}

impl LinearCache {
    pub fn backward(&self, grad_out: &Tensor2, w: &mut Param, b: &mut Param) -> Result<Tensor2> {
        w.grad.add_assign(&self.input.t_matmul(grad_out)?)?;
        let db = b.grad.row_mut(0);
        for i in 0..grad_out.rows() {
            for (d, &g) in db.iter_mut().zip(grad_out.row(i)) {
                *d += g;
            }
        }
        grad_out.matmul_t(&w.value)
    }
}

/// Which statistics batch norm normalises with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BnMode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics.
    Eval,
    /// Batch statistics without touching the running statistics.
    EvalBatchStats,
}

impl BnMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            BnMode::Train => "train",
            BnMode::Eval => "eval",
            BnMode::EvalBatchStats => "eval_batch_stats",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNormState {
    pub const DEFAULT_EPSILON: f64 = 1e-5;
    pub const DEFAULT_MOMENTUM: f64 = 0.1;

    /// γ = 1, β = 0, running mean 0 and variance 1.
    pub fn new(width: usize) -> Self {
        Self {
            gamma: Param::new(Tensor2::filled(1, width, 1.0)),
            beta: Param::new(Tensor2::zeros(1, width)),
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
            momentum: Self::DEFAULT_MOMENTUM,
            epsilon: Self::DEFAULT_EPSILON,
        }
    }

    /// `epsilon = 0` is accepted for exact closed-form comparisons; a
    /// zero-variance column then normalises to 0 instead of NaN.
    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        assert!(epsilon >= 0.0, "epsilon must be non-negative");
        self.epsilon = epsilon;
        self
    }

    pub fn with_momentum(mut self, momentum: f64) -> Self {
        assert!(momentum > 0.0 && momentum < 1.0, "momentum must be in (0, 1)");
        self.momentum = momentum;
        self
    }

    pub fn width(&self) -> usize {
        self.running_mean.len()
    }

    pub fn forward(&mut self, x: &Tensor2, mode: BnMode) -> Result<(Tensor2, BnCache)> {
        let (k, h) = x.shape();
        if h != self.width() {
            return Err(Error::shape("batchnorm", self.width(), h));
        }
        if k == 0 {
            return Err(Error::EmptyBatch);
        }
        if mode == BnMode::Train && k < 2 {
            return Err(Error::SingleRowBatch(k));
        }

        let (mean, var) = match mode {
            BnMode::Eval => (self.running_mean.clone(), self.running_var.clone()),
            BnMode::Train | BnMode::EvalBatchStats => column_moments(x),
        };
        if mode == BnMode::Train {
            let m = self.momentum;
            for j in 0..h {
                self.running_mean[j] = (1.0 - m) * self.running_mean[j] + m * mean[j];
                self.running_var[j] = (1.0 - m) * self.running_var[j] + m * var[j];
            }
        }

        let inv_std: Vec<f64> = var
            .iter()
            .map(|&v| {
                let d = v + self.epsilon;
                if d > 0.0 {
                    1.0 / d.sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        let gamma = self.gamma.value.row(0);
        let beta = self.beta.value.row(0);
        let mut x_hat = Tensor2::zeros(k, h);
        let mut out = Tensor2::zeros(k, h);
        for i in 0..k {
            for j in 0..h {
                let n = (x[(i, j)] - mean[j]) * inv_std[j];
                x_hat[(i, j)] = n;
                out[(i, j)] = gamma[j] * n + beta[j];
            }
        }
        Ok((
            out,
            BnCache {
                x_hat,
                inv_std,
                batch_stats: mode != BnMode::Eval,
            },
        ))
    }
}

/// Per-column mean and population variance (divide by K).
pub fn column_moments(x: &Tensor2) -> (Vec<f64>, Vec<f64>) {
    let (k, h) = x.shape();
    let mut mean = vec![0.0; h];
    for i in 0..k {
        for (m, &v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= k as f64);
    let mut var = vec![0.0; h];
    for i in 0..k {
        for ((s, &v), &m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= k as f64);
    (mean, var)
}

#[derive(Debug, Clone)]
pub struct BnCache {
    x_hat: Tensor2,
    inv_std: Vec<f64>,
    batch_stats: bool,
}

impl BnCache {
    pub fn normalized(&self) -> &Tensor2 {
        &self.x_hat
    }

    pub fn backward(&self, grad_out: &Tensor2, state: &mut BatchNormState) -> Result<Tensor2> {
        self.x_hat.check_same_shape("batchnorm backward", grad_out)?;
        let (k, h) = grad_out.shape();
        let kf = k as f64;
        let mut sum_dy = vec![0.0; h];
        let mut sum_dy_xhat = vec![0.0; h];
        for i in 0..k {
            for j in 0..h {
                let dy = grad_out[(i, j)];
                sum_dy[j] += dy;
                sum_dy_xhat[j] += dy * self.x_hat[(i, j)];
            }
        }
        for j in 0..h {
            state.gamma.grad[(0, j)] += sum_dy_xhat[j];
            state.beta.grad[(0, j)] += sum_dy[j];
        }

        let gamma = state.gamma.value.row(0);
        let mut dx = Tensor2::zeros(k, h);
        for i in 0..k {
            for j in 0..h {
                let dy = grad_out[(i, j)];
                let scale = gamma[j] * self.inv_std[j];
                dx[(i, j)] = if self.batch_stats {
                    scale * (dy - sum_dy[j] / kf - self.x_hat[(i, j)] * sum_dy_xhat[j] / kf)
                } else {
                    scale * dy
                };
            }
        }
        Ok(dx)
    }
}

#[derive(Debug, Clone)]
pub struct HadamardCache {
    zs: Tensor2,
    zt: Tensor2,
}

pub fn hadamard(zs: &Tensor2, zt: &Tensor2) -> Result<(Tensor2, HadamardCache)> {
    zs.check_same_shape("hadamard", zt)?;
    let data = zs
        .as_slice()
        .iter()
        .zip(zt.as_slice())
        .map(|(a, b)| a * b)
        .collect();
    let out = Tensor2::from_vec(zs.rows(), zs.cols(), data)?;
    Ok((
        out,
        HadamardCache {
            zs: zs.clone(),
            zt: zt.clone(),
        },
    ))
}

impl HadamardCache {
    /// Returns `(grad_zs, grad_zt)`.
    pub fn backward(&self, grad_out: &Tensor2) -> Result<(Tensor2, Tensor2)> {
        Ok((hadamard(grad_out, &self.zt)?.0, hadamard(grad_out, &self.zs)?.0))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy on logits and its gradient `(σ(ℓ) − φ) / K`.
///
/// Each term is `softplus(−ℓ)` for a positive and `softplus(ℓ)` for a
/// negative, which makes `bce(ℓ, φ) == bce(−ℓ, 1 − φ)` hold bitwise.
pub fn bce_with_logits(logits: &[f64], labels: &[f64]) -> Result<(f64, Vec<f64>)> {
    if logits.len() != labels.len() {
        return Err(Error::LengthMismatch(logits.len(), labels.len()));
    }
    if logits.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let k = logits.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&l, &y) in logits.iter().zip(labels) {
        debug_assert!(y == 0.0 || y == 1.0, "labels must be binary");
        let signed = if y == 1.0 { -l } else { l };
        total += signed.max(0.0) + (-l.abs()).exp().ln_1p();
        grad.push((sigmoid(l) - y) / k);
    }
    Ok((total / k, grad))
}
