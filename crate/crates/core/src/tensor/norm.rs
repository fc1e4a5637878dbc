use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// Running statistics of a batch-norm layer, stored as gradient-free leaves
/// so they travel with checkpoints and target-network syncs.
#[derive(Clone, Debug)]
pub struct BatchNormStats {
    pub mean: Tensor,
    pub var: Tensor,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormStats {
    pub fn new(channels: usize, momentum: f64, eps: f64) -> Result<Self> {
        Ok(BatchNormStats {
            mean: Tensor::zeros(&[channels])?,
            var: Tensor::full(&[channels], 1.0)?,
            momentum,
            eps,
        })
    }
}

/// Which statistics a batch-norm forward normalizes with.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchNormMode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Batch statistics; running statistics untouched.
    TrainFrozen,
    /// Running statistics.
    Eval,
}

impl Tensor {
    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let d = self.dims();
        if axis >= d.len() {
            return Err(Error::shape("softmax", format!("axis {axis} out of range for {}", self.shape())));
        }
        let n = d[axis];
        let inner: usize = d[axis + 1..].iter().product();
        let outer: usize = d[..axis].iter().product();
        let mut out = vec![0.0; self.numel()];
        {
            let x = self.data();
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric("softmax input contains non-finite values".into()));
            }
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| (o * n + j) * inner + i;
                    let m = (0..n).map(|j| x[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                    let mut s = 0.0;
                    for j in 0..n {
                        let e = (x[at(j)] - m).exp();
                        out[at(j)] = e;
                        s += e;
                    }
                    for j in 0..n {
                        out[at(j)] /= s;
                    }
                }
            }
        }
        let y = out.clone();
        Ok(Tensor::from_op("softmax", self.shape().clone(), out, &[self], move |g| {
            let mut gx = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| (o * n + j) * inner + i;
                    let dot: f64 = (0..n).map(|j| g[at(j)] * y[at(j)]).sum();
                    for j in 0..n {
                        gx[at(j)] = y[at(j)] * (g[at(j)] - dot);
                    }
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Normalizes each row over the last axis, then applies `gain`·x̂ + `shift`.
    pub fn layer_norm(&self, gain: &Tensor, shift: &Tensor, eps: f64) -> Result<Tensor> {
        let d = self.shape().last();
        if gain.dims() != [d] || shift.dims() != [d] {
            return Err(Error::shape(
                "layer_norm",
                format!("affine {} / {} does not match row length {d}", gain.shape(), shift.shape()),
            ));
        }
        let rows = self.numel() / d;
        let mut xhat = vec![0.0; self.numel()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; self.numel()];
        {
            let (x, gm, sh) = (self.data(), gain.data(), shift.data());
            for r in 0..rows {
                let row = &x[r * d..(r + 1) * d];
                let mu = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
                let is = 1.0 / (var + eps).sqrt();
                inv_std[r] = is;
                for j in 0..d {
                    let h = (row[j] - mu) * is;
                    xhat[r * d + j] = h;
                    out[r * d + j] = gm[j] * h + sh[j];
                }
            }
        }
        let tg = gain.clone();
        let (need_x, need_g, need_s) = (self.requires_grad(), gain.requires_grad(), shift.requires_grad());
        Ok(Tensor::from_op("layer_norm", self.shape().clone(), out, &[self, gain, shift], move |g| {
            let gm = tg.data();
            let mut gx = need_x.then(|| vec![0.0; rows * d]);
            let mut gg = need_g.then(|| vec![0.0; d]);
            let mut gs = need_s.then(|| vec![0.0; d]);
            for r in 0..rows {
                let gr = &g[r * d..(r + 1) * d];
                let hr = &xhat[r * d..(r + 1) * d];
                if let Some(gg) = gg.as_mut() {
                    for j in 0..d {
                        gg[j] += gr[j] * hr[j];
                    }
                }
                if let Some(gs) = gs.as_mut() {
                    for j in 0..d {
                        gs[j] += gr[j];
                    }
                }
                if let Some(gx) = gx.as_mut() {
                    let gh: Vec<f64> = (0..d).map(|j| gr[j] * gm[j]).collect();
                    let m1 = gh.iter().sum::<f64>() / d as f64;
                    let m2 = gh.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for j in 0..d {
                        gx[r * d + j] = inv_std[r] * (gh[j] - m1 - hr[j] * m2);
                    }
                }
            }
            vec![gx, gg, gs]
        }))
    }

    /// Per-channel normalization of `[B×C×…]` over every axis but the channel axis.
    pub fn batch_norm(
        &self,
        gain: &Tensor,
        shift: &Tensor,
        stats: &BatchNormStats,
        mode: BatchNormMode,
    ) -> Result<Tensor> {
        let d = self.dims();
        if d.len() < 2 {
            return Err(Error::shape("batch_norm", format!("need [B×C×…], got {}", self.shape())));
        }
        let (b, c) = (d[0], d[1]);
        let spatial: usize = d[2..].iter().product();
        if gain.dims() != [c] || shift.dims() != [c] || stats.mean.dims() != [c] || stats.var.dims() != [c] {
            return Err(Error::shape("batch_norm", format!("parameters do not match {c} channels")));
        }
        let batch_stats = mode != BatchNormMode::Eval;
        if batch_stats && b < 2 {
            return Err(Error::shape(
                "batch_norm",
                "batch size 1 in training mode leaves the batch variance undefined",
            ));
        }
        let count = (b * spatial) as f64;
        let at = move |n: usize, ch: usize, s: usize| (n * c + ch) * spatial + s;

        let (mean, var) = if batch_stats {
            let x = self.data();
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ch in 0..c {
                let mut s = 0.0;
                for n in 0..b {
                    s += x[at(n, ch, 0)..at(n, ch, 0) + spatial].iter().sum::<f64>();
                }
                let mu = s / count;
                let mut v = 0.0;
                for n in 0..b {
                    v += x[at(n, ch, 0)..at(n, ch, 0) + spatial].iter().map(|t| (t - mu) * (t - mu)).sum::<f64>();
                }
                mean[ch] = mu;
                var[ch] = v / count;
            }
            if mode == BatchNormMode::Train {
                let unbias = count / (count - 1.0);
                let mom = stats.momentum;
                let mut rm = stats.mean.data_mut();
                for (r, m) in rm.iter_mut().zip(&mean) {
                    *r = (1.0 - mom) * *r + mom * m;
                }
                drop(rm);
                let mut rv = stats.var.data_mut();
                for (r, v) in rv.iter_mut().zip(&var) {
                    *r = (1.0 - mom) * *r + mom * v * unbias;
                }
            }
            (mean, var)
        } else {
            (stats.mean.to_vec(), stats.var.to_vec())
        };

        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + stats.eps).sqrt()).collect();
        let mut xhat = vec![0.0; self.numel()];
        let mut out = vec![0.0; self.numel()];
        {
            let (x, gm, sh) = (self.data(), gain.data(), shift.data());
            for n in 0..b {
                for ch in 0..c {
                    for s in 0..spatial {
                        let i = at(n, ch, s);
                        let h = (x[i] - mean[ch]) * inv_std[ch];
                        xhat[i] = h;
                        out[i] = gm[ch] * h + sh[ch];
                    }
                }
            }
        }
        let tg = gain.clone();
        let (need_x, need_g, need_s) = (self.requires_grad(), gain.requires_grad(), shift.requires_grad());
        Ok(Tensor::from_op("batch_norm", Shape::of(d.to_vec()), out, &[self, gain, shift], move |g| {
            let gm = tg.data();
            let mut sum_g = vec![0.0; c];
            let mut sum_gh = vec![0.0; c];
            for n in 0..b {
                for ch in 0..c {
                    for s in 0..spatial {
                        let i = at(n, ch, s);
                        sum_g[ch] += g[i];
                        sum_gh[ch] += g[i] * xhat[i];
                    }
                }
            }
            let gx = need_x.then(|| {
                let mut gx = vec![0.0; g.len()];
                for n in 0..b {
                    for ch in 0..c {
                        let k = gm[ch] * inv_std[ch];
                        for s in 0..spatial {
                            let i = at(n, ch, s);
                            gx[i] = if batch_stats {
                                k * (g[i] - sum_g[ch] / count - xhat[i] * sum_gh[ch] / count)
                            } else {
                                k * g[i]
                            };
                        }
                    }
                }
                gx
            });
            vec![gx, need_g.then(|| sum_gh.clone()), need_s.then(|| sum_g.clone())]
        }))
    }
}
