//! Elementwise, broadcasting, reduction and layout ops.

use rand::Rng;

use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// How a binary op's operands map onto its output.
enum Layout {
    Same,
    /// rhs extent list is a suffix of lhs; rhs index = i % rhs.len
    RhsSuffix,
    LhsSuffix,
    General { ia: Vec<usize>, ib: Vec<usize> },
}

impl Layout {
    #[inline]
    fn index(&self, i: usize, na: usize, nb: usize) -> (usize, usize) {
        match self {
            Layout::Same => (i, i),
            Layout::RhsSuffix => (i, i % nb),
            Layout::LhsSuffix => (i % na, i),
            Layout::General { ia, ib } => (ia[i], ib[i]),
        }
    }
}

fn broadcast(op: &'static str, a: &Shape, b: &Shape) -> Result<(Shape, Layout)> {
    if a == b {
        return Ok((a.clone(), Layout::Same));
    }
    let (ad, bd) = (a.dims(), b.dims());
    let rank = ad.len().max(bd.len());
    let pad = |d: &[usize]| {
        let mut v = vec![1; rank - d.len()];
        v.extend_from_slice(d);
        v
    };
    let (pa, pb) = (pad(ad), pad(bd));
    let mut out = Vec::with_capacity(rank);
    for (&x, &y) in pa.iter().zip(&pb) {
        if x == y || y == 1 {
            out.push(x);
        } else if x == 1 {
            out.push(y);
        } else {
            return Err(Error::shape(op, format!("cannot broadcast {a} with {b}")));
        }
    }
    let out_shape = Shape::of(out.clone());
    let is_suffix = |small: &[usize]| {
        let s = small.iter().skip_while(|&&d| d == 1).copied().collect::<Vec<_>>();
        out.ends_with(&s) && small.iter().product::<usize>() == s.iter().product::<usize>()
    };
    if out_shape == *a && is_suffix(bd) {
        return Ok((out_shape, Layout::RhsSuffix));
    }
    if out_shape == *b && is_suffix(ad) {
        return Ok((out_shape, Layout::LhsSuffix));
    }

    let strides = |p: &[usize]| {
        let mut s = vec![0usize; rank];
        let mut acc = 1;
        for k in (0..rank).rev() {
            s[k] = if p[k] == 1 { 0 } else { acc };
            acc *= p[k];
        }
        s
    };
    let (sa, sb) = (strides(&pa), strides(&pb));
    let n = out_shape.numel();
    let mut ia = Vec::with_capacity(n);
    let mut ib = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let (mut xa, mut xb) = (0usize, 0usize);
    for _ in 0..n {
        ia.push(xa);
        ib.push(xb);
        for k in (0..rank).rev() {
            idx[k] += 1;
            xa += sa[k];
            xb += sb[k];
            if idx[k] < out[k] {
                break;
            }
            xa -= sa[k] * out[k];
            xb -= sb[k] * out[k];
            idx[k] = 0;
        }
    }
    Ok((out_shape, Layout::General { ia, ib }))
}

type Partial = fn(f64, f64, f64) -> f64;

impl Tensor {
    fn binary(
        &self,
        other: &Tensor,
        op: &'static str,
        f: fn(f64, f64) -> f64,
        // partials take (x, y, upstream grad)
        dx: Partial,
        dy: Partial,
    ) -> Result<Tensor> {
        let (shape, layout) = broadcast(op, self.shape(), other.shape())?;
        let (na, nb) = (self.numel(), other.numel());
        let out: Vec<f64> = {
            let (a, b) = (self.data(), other.data());
            (0..shape.numel())
                .map(|i| {
                    let (p, q) = layout.index(i, na, nb);
                    f(a[p], b[q])
                })
                .collect()
        };
        if !Tensor::tracks(&[self, other]) {
            return Ok(Tensor::from_op(op, shape, out, &[], |_| vec![]));
        }
        let (ta, tb) = (self.clone(), other.clone());
        let (need_a, need_b) = (self.requires_grad(), other.requires_grad());
        Ok(Tensor::from_op(op, shape, out, &[self, other], move |g| {
            let (a, b) = (ta.data(), tb.data());
            let mut ga = need_a.then(|| vec![0.0; na]);
            let mut gb = need_b.then(|| vec![0.0; nb]);
            for (i, &gi) in g.iter().enumerate() {
                let (p, q) = layout.index(i, na, nb);
                if let Some(ga) = ga.as_mut() {
                    ga[p] += dx(a[p], b[q], gi);
                }
                if let Some(gb) = gb.as_mut() {
                    gb[q] += dy(a[p], b[q], gi);
                }
            }
            vec![ga, gb]
        }))
    }

    /// Elementwise sum with numpy-style broadcasting.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "add", |x, y| x + y, |_, _, g| g, |_, _, g| g)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "sub", |x, y| x - y, |_, _, g| g, |_, _, g| -g)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "mul", |x, y| x * y, |_, y, g| g * y, |x, _, g| g * x)
    }

    /// Elementwise map with derivative `df(x, y)` where `y = f(x)`.
    fn unary(
        &self,
        op: &'static str,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|&x| f(x)).collect();
        if !Tensor::tracks(&[self]) {
            return Tensor::from_op(op, self.shape().clone(), out, &[], |_| vec![]);
        }
        let input = self.clone();
        let saved = out.clone();
        Tensor::from_op(op, self.shape().clone(), out, &[self], move |g| {
            let x = input.data();
            let gx = g
                .iter()
                .zip(x.iter().zip(&saved))
                .map(|(&gi, (&xi, &yi))| gi * df(xi, yi))
                .collect();
            vec![Some(gx)]
        })
    }

    pub fn relu(&self) -> Tensor {
        self.unary("relu", |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(
            "sigmoid",
            |x| {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            },
            |_, y| y * (1.0 - y),
        )
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.unary("scale", move |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.unary("add_scalar", move |x| x + c, |_, _| 1.0)
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn square(&self) -> Tensor {
        self.unary("square", |x| x * x, |x, _| 2.0 * x)
    }

    /// Elementwise Huber penalty: `½e²` for `|e| ≤ δ`, else `δ(|e| − ½δ)`.
    pub fn huber(&self, delta: f64) -> Tensor {
        self.unary(
            "huber",
            move |e| {
                if e.abs() <= delta {
                    0.5 * e * e
                } else {
                    delta * (e.abs() - 0.5 * delta)
                }
            },
            move |e, _| {
                if e.abs() <= delta {
                    e
                } else {
                    delta * e.signum()
                }
            },
        )
    }

    /// Inverted dropout. Identity when `rate == 0` or not training.
    pub fn dropout(&self, rate: f64, training: bool, rng: &mut impl Rng) -> Result<Tensor> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if rate == 0.0 || !training {
            return Ok(self.clone());
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.numel())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let m = Tensor::new(self.dims(), mask)?;
        self.mul(&m)
    }

    pub fn sum(&self) -> Tensor {
        let s: f64 = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op("sum", Shape::of(vec![1]), vec![s], &[self], move |g| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Same values, new extents.
    pub fn reshape(&self, dims: &[usize]) -> Result<Tensor> {
        let shape = Shape::new(dims.to_vec())?;
        if shape.numel() != self.numel() {
            return Err(Error::shape(
                "reshape",
                format!("cannot reshape {} into {shape}", self.shape()),
            ));
        }
        let out = self.to_vec();
        Ok(Tensor::from_op("reshape", shape, out, &[self], |g| {
            vec![Some(g.to_vec())]
        }))
    }

    /// Reorders axes: output axis `k` is input axis `axes[k]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let dims = self.dims();
        let rank = dims.len();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::shape(
                "permute",
                format!("{axes:?} is not a permutation of {rank} axes"),
            ));
        }
        let out_dims: Vec<usize> = axes.iter().map(|&a| dims[a]).collect();
        let mut in_strides = vec![1usize; rank];
        for k in (0..rank.saturating_sub(1)).rev() {
            in_strides[k] = in_strides[k + 1] * dims[k + 1];
        }
        let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let n = self.numel();
        let mut map = Vec::with_capacity(n);
        let mut idx = vec![0usize; rank];
        let mut off = 0usize;
        for _ in 0..n {
            map.push(off);
            for k in (0..rank).rev() {
                idx[k] += 1;
                off += src_strides[k];
                if idx[k] < out_dims[k] {
                    break;
                }
                off -= src_strides[k] * out_dims[k];
                idx[k] = 0;
            }
        }
        let out: Vec<f64> = {
            let x = self.data();
            map.iter().map(|&j| x[j]).collect()
        };
        Ok(Tensor::from_op("permute", Shape::of(out_dims), out, &[self], move |g| {
            let mut gx = vec![0.0; n];
            for (gi, &j) in g.iter().zip(&map) {
                gx[j] = *gi;
            }
            vec![Some(gx)]
        }))
    }

    /// Concatenates along the last axis; leading extents must agree.
    pub fn concat_last(&self, other: &Tensor) -> Result<Tensor> {
        let (ad, bd) = (self.dims(), other.dims());
        if ad.len() != bd.len() || ad[..ad.len() - 1] != bd[..bd.len() - 1] {
            return Err(Error::shape(
                "concat",
                format!("leading extents differ: {} vs {}", self.shape(), other.shape()),
            ));
        }
        let (da, db) = (self.shape().last(), other.shape().last());
        let rows = self.numel() / da;
        let mut out = Vec::with_capacity(self.numel() + other.numel());
        {
            let (a, b) = (self.data(), other.data());
            for r in 0..rows {
                out.extend_from_slice(&a[r * da..(r + 1) * da]);
                out.extend_from_slice(&b[r * db..(r + 1) * db]);
            }
        }
        let mut dims = ad.to_vec();
        *dims.last_mut().unwrap() = da + db;
        Ok(Tensor::from_op("concat", Shape::of(dims), out, &[self, other], move |g| {
            let mut ga = Vec::with_capacity(rows * da);
            let mut gb = Vec::with_capacity(rows * db);
            for row in g.chunks_exact(da + db) {
                ga.extend_from_slice(&row[..da]);
                gb.extend_from_slice(&row[da..]);
            }
            vec![Some(ga), Some(gb)]
        }))
    }

    /// `len` consecutive entries of `axis` starting at `start`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let d = self.dims();
        if axis >= d.len() || len == 0 || start + len > d[axis] {
            return Err(Error::shape(
                "narrow",
                format!("range {start}..{} of axis {axis} outside {}", start + len, self.shape()),
            ));
        }
        let inner: usize = d[axis + 1..].iter().product();
        let outer: usize = d[..axis].iter().product();
        let n = d[axis];
        let mut out = Vec::with_capacity(outer * len * inner);
        {
            let x = self.data();
            for o in 0..outer {
                let base = (o * n + start) * inner;
                out.extend_from_slice(&x[base..base + len * inner]);
            }
        }
        let mut dims = d.to_vec();
        dims[axis] = len;
        let total = self.numel();
        Ok(Tensor::from_op("narrow", Shape::of(dims), out, &[self], move |g| {
            let mut gx = vec![0.0; total];
            for o in 0..outer {
                let base = (o * n + start) * inner;
                gx[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(gx)]
        }))
    }

    /// Picks `self[i, index[i]]` from a `[k×A]` matrix.
    pub fn gather_rows(&self, index: &[usize]) -> Result<Tensor> {
        let d = self.dims();
        if d.len() != 2 || d[0] != index.len() {
            return Err(Error::shape(
                "gather",
                format!("need [{}×A], got {}", index.len(), self.shape()),
            ));
        }
        let cols = d[1];
        if let Some(&bad) = index.iter().find(|&&a| a >= cols) {
            return Err(Error::InvalidAction { action: bad, count: cols });
        }
        let out: Vec<f64> = {
            let x = self.data();
            index.iter().enumerate().map(|(i, &a)| x[i * cols + a]).collect()
        };
        let idx = index.to_vec();
        let n = self.numel();
        Ok(Tensor::from_op("gather", Shape::of(vec![index.len()]), out, &[self], move |g| {
            let mut gx = vec![0.0; n];
            for (i, (&a, &gi)) in idx.iter().zip(g).enumerate() {
                gx[i * cols + a] = gi;
            }
            vec![Some(gx)]
        }))
    }

    /// Row-wise maximum of a `[k×A]` matrix (no gradient).
    pub fn max_rows(&self) -> Result<Vec<f64>> {
        let d = self.dims();
        if d.len() != 2 {
            return Err(Error::shape("max_rows", format!("need a matrix, got {}", self.shape())));
        }
        Ok(self
            .data()
            .chunks_exact(d[1])
            .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn t(dims: &[usize], v: &[f64]) -> Tensor {
        Tensor::param(dims, v.to_vec()).unwrap()
    }

    #[test]
    fn bias_broadcast_and_grad() {
        let x = t(&[2, 3], &[1., 2., 3., 4., 5., 6.]);
        let b = t(&[3], &[10., 20., 30.]);
        let y = x.add(&b).unwrap();
        assert_eq!(y.to_vec(), vec![11., 22., 33., 14., 25., 36.]);
        y.sum().backward().unwrap();
        assert_eq!(b.grad().unwrap(), vec![2., 2., 2.]);
    }

    #[test]
    fn general_broadcast() {
        let a = t(&[2, 1], &[1., 2.]);
        let b = t(&[1, 3], &[10., 20., 30.]);
        let y = a.mul(&b).unwrap();
        assert_eq!(y.dims(), &[2, 3]);
        assert_eq!(y.to_vec(), vec![10., 20., 30., 20., 40., 60.]);
        y.sum().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![60., 60.]);
        assert_eq!(b.grad().unwrap(), vec![3., 3., 3.]);
    }

    #[test]
    fn leading_one_broadcast() {
        let pe = t(&[1, 2, 2], &[1., 2., 3., 4.]);
        let x = t(&[3, 2, 2], &[0.0; 12]);
        let y = x.add(&pe).unwrap();
        assert_eq!(&y.to_vec()[8..], &[1., 2., 3., 4.]);
        y.sum().backward().unwrap();
        assert_eq!(pe.grad().unwrap(), vec![3.; 4]);
    }

    #[test]
    fn incompatible_broadcast_errors() {
        let a = t(&[2, 3], &[0.; 6]);
        let b = t(&[2], &[0.; 2]);
        assert!(a.add(&b).is_err());
    }

    #[test]
    fn permute_round_trip() {
        let x = t(&[2, 3, 4], &(0..24).map(f64::from).collect::<Vec<_>>());
        let p = x.permute(&[2, 0, 1]).unwrap();
        assert_eq!(p.dims(), &[4, 2, 3]);
        // p[k, i, j] == x[i, j, k]
        assert_eq!(p.data()[(3 * 2 + 1) * 3 + 2], x.data()[(1 * 3 + 2) * 4 + 3]);
        let back = p.permute(&[1, 2, 0]).unwrap();
        assert_eq!(back.to_vec(), x.to_vec());
        assert!(x.permute(&[0, 0, 1]).is_err());
    }

    #[test]
    fn concat_splits_gradient() {
        let a = t(&[2, 1], &[1., 2.]);
        let b = t(&[2, 2], &[3., 4., 5., 6.]);
        let c = a.concat_last(&b).unwrap();
        assert_eq!(c.to_vec(), vec![1., 3., 4., 2., 5., 6.]);
        let w = Tensor::new(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        c.mul(&w).unwrap().sum().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![1., 4.]);
        assert_eq!(b.grad().unwrap(), vec![2., 3., 5., 6.]);
    }

    #[test]
    fn gather_picks_and_routes_grad() {
        let q = t(&[2, 3], &[1., 2., 3., 4., 5., 6.]);
        let g = q.gather_rows(&[2, 0]).unwrap();
        assert_eq!(g.to_vec(), vec![3., 4.]);
        g.sum().backward().unwrap();
        assert_eq!(q.grad().unwrap(), vec![0., 0., 1., 1., 0., 0.]);
        assert!(q.gather_rows(&[3, 0]).is_err());
    }

    #[test]
    fn huber_branches() {
        let e = t(&[3], &[0.5, 2.0, -2.0]);
        let h = e.huber(1.0);
        assert_eq!(h.to_vec(), vec![0.125, 1.5, 1.5]);
        h.sum().backward().unwrap();
        assert_eq!(e.grad().unwrap(), vec![0.5, 1.0, -1.0]);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        let x = Tensor::new(&[2], vec![-800.0, 800.0]).unwrap().sigmoid();
        assert_eq!(x.to_vec(), vec![0.0, 1.0]);
    }

    #[test]
    fn dropout_zero_rate_is_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let x = t(&[4], &[1., 2., 3., 4.]);
        let y = x.dropout(0.0, true, &mut rng).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
        let z = x.dropout(0.5, true, &mut rng).unwrap();
        assert!(z.to_vec().iter().all(|&v| v == 0.0 || [2., 4., 6., 8.].contains(&v)));
        assert!(x.dropout(1.0, true, &mut rng).is_err());
    }
}
