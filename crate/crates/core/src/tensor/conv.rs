use super::linalg::gemm;
use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// Output extent of a valid (unpadded) convolution.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize) -> Option<usize> {
    (kernel >= 1 && stride >= 1 && kernel <= input).then(|| (input - kernel) / stride + 1)
}

struct Geometry {
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    out_channels: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn patch_len(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// Lowers one sample `[C×H×W]` into columns `[C·kh·kw × oh·ow]`.
    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let p = self.positions();
        for c in 0..self.channels {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        let src = (c * self.height + oy * self.stride + ki) * self.width + kj;
                        for ox in 0..self.ow {
                            dst[oy * self.ow + ox] = x[src + ox * self.stride];
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], gx: &mut [f64]) {
        let p = self.positions();
        for c in 0..self.channels {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        let dst = (c * self.height + oy * self.stride + ki) * self.width + kj;
                        for ox in 0..self.ow {
                            gx[dst + ox * self.stride] += src[oy * self.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

impl Tensor {
    /// Valid 2-D cross-correlation of `[B×C×H×W]` with `[O×C×kh×kw]` plus bias `[O]`.
    pub fn conv2d(&self, kernel: &Tensor, bias: &Tensor, stride: usize) -> Result<Tensor> {
        let (xd, kd) = (self.dims(), kernel.dims());
        if xd.len() != 4 || kd.len() != 4 || xd[1] != kd[1] {
            return Err(Error::shape(
                "conv2d",
                format!("input {} incompatible with kernel {}", self.shape(), kernel.shape()),
            ));
        }
        if bias.dims() != [kd[0]] {
            return Err(Error::shape(
                "conv2d",
                format!("bias {} does not match {} output channels", bias.shape(), kd[0]),
            ));
        }
        let (oh, ow) = match (conv_out_extent(xd[2], kd[2], stride), conv_out_extent(xd[3], kd[3], stride)) {
            (Some(oh), Some(ow)) => (oh, ow),
            _ => {
                return Err(Error::shape(
                    "conv2d",
                    format!("kernel {} larger than input {} (stride {stride})", kernel.shape(), self.shape()),
                ))
            }
        };
        let geo = Geometry {
            batch: xd[0],
            channels: xd[1],
            height: xd[2],
            width: xd[3],
            out_channels: kd[0],
            kh: kd[2],
            kw: kd[3],
            stride,
            oh,
            ow,
        };
        let (plen, pos, o) = (geo.patch_len(), geo.positions(), geo.out_channels);
        let sample = geo.channels * geo.height * geo.width;

        let mut cols = vec![0.0; geo.batch * plen * pos];
        let mut out = vec![0.0; geo.batch * o * pos];
        {
            let (x, k, b) = (self.data(), kernel.data(), bias.data());
            for n in 0..geo.batch {
                let c = &mut cols[n * plen * pos..(n + 1) * plen * pos];
                geo.im2col(&x[n * sample..(n + 1) * sample], c);
                let y = &mut out[n * o * pos..(n + 1) * o * pos];
                for (oc, row) in y.chunks_exact_mut(pos).enumerate() {
                    row.fill(b[oc]);
                }
                gemm(o, plen, pos, &k, false, c, false, y, true);
            }
        }

        let shape = Shape::of(vec![geo.batch, o, oh, ow]);
        if !Tensor::tracks(&[self, kernel, bias]) {
            return Ok(Tensor::from_op("conv2d", shape, out, &[], |_| vec![]));
        }
        let (tx, tk, tb) = (self.clone(), kernel.clone(), bias.clone());
        Ok(Tensor::from_op("conv2d", shape, out, &[self, kernel, bias], move |g| {
            let k = tk.data();
            let mut gk = tk.requires_grad().then(|| vec![0.0; k.len()]);
            let mut gb = tb.requires_grad().then(|| vec![0.0; o]);
            let mut gx = tx.requires_grad().then(|| vec![0.0; geo.batch * sample]);
            let mut gcols = vec![0.0; plen * pos];
            for n in 0..geo.batch {
                let gy = &g[n * o * pos..(n + 1) * o * pos];
                let c = &cols[n * plen * pos..(n + 1) * plen * pos];
                if let Some(gk) = gk.as_mut() {
                    gemm(o, pos, plen, gy, false, c, true, gk, true);
                }
                if let Some(gb) = gb.as_mut() {
                    for (oc, row) in gy.chunks_exact(pos).enumerate() {
                        gb[oc] += row.iter().sum::<f64>();
                    }
                }
                if let Some(gx) = gx.as_mut() {
                    gemm(plen, o, pos, &k, true, gy, false, &mut gcols, false);
                    geo.col2im(&gcols, &mut gx[n * sample..(n + 1) * sample]);
                }
            }
            vec![gx, gk, gb]
        }))
    }

    /// Splits each `H×W` frame of `[B×F×H×W]` into non-overlapping `p×p` patches
    /// taken with stride `p`, giving `[B×(F·N)×p²]` with `N = ⌊H/p⌋·⌊W/p⌋`.
    /// Pixels past the last whole patch are dropped.
    pub fn unfold_patches(&self, p: usize) -> Result<Tensor> {
        let d = self.dims();
        if d.len() != 4 {
            return Err(Error::shape("unfold_patches", format!("need [B×F×H×W], got {}", self.shape())));
        }
        let (b, f, h, w) = (d[0], d[1], d[2], d[3]);
        if p == 0 || p > h || p > w {
            return Err(Error::shape(
                "unfold_patches",
                format!("patch side {p} does not fit frame {h}×{w}"),
            ));
        }
        let (nh, nw) = (h / p, w / p);
        let n = nh * nw;
        let total = b * f * n * p * p;
        // map[out] = input offset
        let mut map = Vec::with_capacity(total);
        for bi in 0..b {
            for fi in 0..f {
                let base = (bi * f + fi) * h * w;
                for py in 0..nh {
                    for px in 0..nw {
                        for i in 0..p {
                            for j in 0..p {
                                map.push(base + (py * p + i) * w + px * p + j);
                            }
                        }
                    }
                }
            }
        }
        let out: Vec<f64> = {
            let x = self.data();
            map.iter().map(|&k| x[k]).collect()
        };
        let len = self.numel();
        Ok(Tensor::from_op("unfold_patches", Shape::of(vec![b, f * n, p * p]), out, &[self], move |g| {
            let mut gx = vec![0.0; len];
            for (gi, &k) in g.iter().zip(&map) {
                gx[k] += gi;
            }
            vec![Some(gx)]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unit_kernel_is_identity() {
        let x = Tensor::new(&[1, 1, 2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let k = Tensor::new(&[1, 1, 1, 1], vec![1.]).unwrap();
        let b = Tensor::zeros(&[1]).unwrap();
        let y = x.conv2d(&k, &b, 1).unwrap();
        assert_eq!(y.dims(), x.dims());
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn ones_kernel_sums_window() {
        let x = Tensor::new(&[1, 1, 2, 2], vec![1., 2., 3., 4.]).unwrap();
        let k = Tensor::full(&[1, 1, 2, 2], 1.0).unwrap();
        let b = Tensor::zeros(&[1]).unwrap();
        assert_eq!(x.conv2d(&k, &b, 1).unwrap().to_vec(), vec![10.]);
    }

    #[test]
    fn atari_first_layer_extent() {
        assert_eq!(conv_out_extent(84, 8, 4), Some(20));
        assert_eq!(conv_out_extent(20, 4, 2), Some(9));
        assert_eq!(conv_out_extent(9, 3, 1), Some(7));
    }

    #[test]
    fn oversized_kernel_rejected() {
        let x = Tensor::zeros(&[1, 1, 3, 3]).unwrap();
        let k = Tensor::zeros(&[1, 1, 4, 4]).unwrap();
        let b = Tensor::zeros(&[1]).unwrap();
        assert!(matches!(x.conv2d(&k, &b, 1), Err(Error::Shape { .. })));
    }

    #[test]
    fn hand_checked_two_channel_stride_two() {
        // two input channels, one output channel, 2x2 kernel, stride 2 over 4x4
        let x: Vec<f64> = (0..32).map(f64::from).collect();
        let x = Tensor::new(&[1, 2, 4, 4], x).unwrap();
        let k = Tensor::new(&[1, 2, 2, 2], vec![1., 0., 0., 0., 0., 0., 0., 1.]).unwrap();
        let b = Tensor::new(&[1], vec![0.5]).unwrap();
        let y = x.conv2d(&k, &b, 2).unwrap();
        // out[oy,ox] = x0[2oy,2ox] + x1[2oy+1,2ox+1] + 0.5
        assert_eq!(y.to_vec(), vec![0. + 21. + 0.5, 2. + 23. + 0.5, 8. + 29. + 0.5, 10. + 31. + 0.5]);
    }

    #[test]
    fn patch_counts() {
        let x = Tensor::zeros(&[1, 1, 32, 32]).unwrap();
        assert_eq!(x.unfold_patches(16).unwrap().dims(), &[1, 4, 256]);
        let x = Tensor::zeros(&[2, 4, 84, 84]).unwrap();
        assert_eq!(x.unfold_patches(16).unwrap().dims(), &[2, 100, 256]);
        assert!(x.unfold_patches(85).is_err());
    }

    #[test]
    fn patch_layout() {
        let x = Tensor::new(&[1, 1, 4, 4], (0..16).map(f64::from).collect()).unwrap();
        let p = x.unfold_patches(2).unwrap();
        assert_eq!(&p.to_vec()[..8], &[0., 1., 4., 5., 2., 3., 6., 7.]);
    }

    proptest! {
        #[test]
        fn conv_shape_rule(h in 1usize..30, w in 1usize..30, k in 1usize..8, s in 1usize..5) {
            prop_assume!(k <= h && k <= w);
            let x = Tensor::zeros(&[1, 1, h, w]).unwrap();
            let kern = Tensor::zeros(&[2, 1, k, k]).unwrap();
            let b = Tensor::zeros(&[2]).unwrap();
            let y = x.conv2d(&kern, &b, s).unwrap();
            prop_assert_eq!(y.dims(), &[1, 2, (h - k) / s + 1, (w - k) / s + 1]);
        }
    }
}
