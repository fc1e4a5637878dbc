use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// `c (+)= op(a) · op(b)` on row-major slices, where `op` optionally transposes.
/// `a` is `[m×k]` (stored `[k×m]` when `ta`), `b` is `[k×n]` (stored `[n×k]` when `tb`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    let av = if ta {
        ArrayView2::from_shape((k, m), a).expect("gemm lhs").reversed_axes()
    } else {
        ArrayView2::from_shape((m, k), a).expect("gemm lhs")
    };
    let bv = if tb {
        ArrayView2::from_shape((n, k), b).expect("gemm rhs").reversed_axes()
    } else {
        ArrayView2::from_shape((k, n), b).expect("gemm rhs")
    };
    let mut cv = ArrayViewMut2::from_shape((m, n), c).expect("gemm out");
    general_mat_mul(1.0, &av, &bv, if accumulate { 1.0 } else { 0.0 }, &mut cv);
}

impl Tensor {
    /// Matrix product of `[M×K]` and `[K×N]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (ad, bd) = (self.dims(), other.dims());
        if ad.len() != 2 || bd.len() != 2 || ad[1] != bd[0] {
            return Err(Error::shape(
                "matmul",
                format!("cannot multiply {} by {}", self.shape(), other.shape()),
            ));
        }
        let (m, k, n) = (ad[0], ad[1], bd[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &self.data(), false, &other.data(), false, &mut out, false);
        let (ta, tb) = (self.clone(), other.clone());
        Ok(Tensor::from_op("matmul", Shape::of(vec![m, n]), out, &[self, other], move |g| {
            let ga = ta.requires_grad().then(|| {
                let mut ga = vec![0.0; m * k];
                gemm(m, n, k, g, false, &tb.data(), true, &mut ga, false);
                ga
            });
            let gb = tb.requires_grad().then(|| {
                let mut gb = vec![0.0; k * n];
                gemm(k, m, n, &ta.data(), true, g, false, &mut gb, false);
                gb
            });
            vec![ga, gb]
        }))
    }

    /// Batched matrix product of `[G×M×K]` and `[G×K×N]`.
    pub fn bmm(&self, other: &Tensor) -> Result<Tensor> {
        let (ad, bd) = (self.dims(), other.dims());
        if ad.len() != 3 || bd.len() != 3 || ad[0] != bd[0] || ad[2] != bd[1] {
            return Err(Error::shape(
                "bmm",
                format!("cannot batch-multiply {} by {}", self.shape(), other.shape()),
            ));
        }
        let (groups, m, k, n) = (ad[0], ad[1], ad[2], bd[2]);
        let mut out = vec![0.0; groups * m * n];
        {
            let (a, b) = (self.data(), other.data());
            for gi in 0..groups {
                gemm(
                    m,
                    k,
                    n,
                    &a[gi * m * k..(gi + 1) * m * k],
                    false,
                    &b[gi * k * n..(gi + 1) * k * n],
                    false,
                    &mut out[gi * m * n..(gi + 1) * m * n],
                    false,
                );
            }
        }
        let (ta, tb) = (self.clone(), other.clone());
        Ok(Tensor::from_op("bmm", Shape::of(vec![groups, m, n]), out, &[self, other], move |g| {
            let ga = ta.requires_grad().then(|| {
                let b = tb.data();
                let mut ga = vec![0.0; groups * m * k];
                for gi in 0..groups {
                    gemm(
                        m,
                        n,
                        k,
                        &g[gi * m * n..(gi + 1) * m * n],
                        false,
                        &b[gi * k * n..(gi + 1) * k * n],
                        true,
                        &mut ga[gi * m * k..(gi + 1) * m * k],
                        false,
                    );
                }
                ga
            });
            let gb = tb.requires_grad().then(|| {
                let a = ta.data();
                let mut gb = vec![0.0; groups * k * n];
                for gi in 0..groups {
                    gemm(
                        k,
                        m,
                        n,
                        &a[gi * m * k..(gi + 1) * m * k],
                        true,
                        &g[gi * m * n..(gi + 1) * m * n],
                        false,
                        &mut gb[gi * k * n..(gi + 1) * k * n],
                        false,
                    );
                }
                gb
            });
            vec![ga, gb]
        }))
    }
}
