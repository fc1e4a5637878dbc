use rand::Rng;

use super::{fan_in_uniform, join, ForwardCtx, Module, TensorRole};
use crate::error::{Error, Result};
use crate::tensor::{BatchNormStats, Tensor};

/// `y = x·W + b` over the last axis; `W` is `[in×out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(rng: &mut impl Rng, input: usize, output: usize, gain: f64) -> Result<Self> {
        Ok(Linear {
            weight: Tensor::param(&[input, output], fan_in_uniform(rng, input, input * output, gain))?,
            bias: Tensor::param(&[output], fan_in_uniform(rng, input, output, 1.0))?,
        })
    }

    pub fn zeros(input: usize, output: usize) -> Result<Self> {
        Ok(Linear {
            weight: Tensor::param(&[input, output], vec![0.0; input * output])?,
            bias: Tensor::param(&[output], vec![0.0; output])?,
        })
    }

    pub fn from_values(weight: Tensor, bias: Tensor) -> Result<Self> {
        let (wd, bd) = (weight.dims(), bias.dims());
        if wd.len() != 2 || bd != [wd[1]] {
            return Err(Error::shape(
                "linear",
                format!("weight {} and bias {} disagree", weight.shape(), bias.shape()),
            ));
        }
        Ok(Linear { weight, bias })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let d = x.dims();
        let input = self.input_dim();
        if d.last() != Some(&input) {
            return Err(Error::shape(
                "linear",
                format!("input {} does not end in {input}", x.shape()),
            ));
        }
        let rows = x.numel() / input;
        let flat = if d.len() == 2 { x.clone() } else { x.reshape(&[rows, input])? };
        let y = flat.matmul(&self.weight)?.add(&self.bias)?;
        if d.len() == 2 {
            return Ok(y);
        }
        let mut out_dims = d.to_vec();
        *out_dims.last_mut().unwrap() = self.output_dim();
        y.reshape(&out_dims)
    }
}

impl Module for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor, TensorRole)) {
        f(join(prefix, "weight"), &self.weight, TensorRole::Param);
        f(join(prefix, "bias"), &self.bias, TensorRole::Param);
    }
}

/// Valid square-kernel convolution.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub kernel: Tensor,
    pub bias: Tensor,
    pub stride: usize,
}

impl Conv2d {
    pub fn new(
        rng: &mut impl Rng,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        gain: f64,
    ) -> Result<Self> {
        if stride == 0 || kernel == 0 {
            return Err(Error::Config("conv kernel and stride must be positive".into()));
        }
        let fan_in = in_channels * kernel * kernel;
        Ok(Conv2d {
            kernel: Tensor::param(
                &[out_channels, in_channels, kernel, kernel],
                fan_in_uniform(rng, fan_in, out_channels * fan_in, gain),
            )?,
            bias: Tensor::param(&[out_channels], fan_in_uniform(rng, fan_in, out_channels, 1.0))?,
            stride,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.conv2d(&self.kernel, &self.bias, self.stride)
    }
}

impl Module for Conv2d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor, TensorRole)) {
        f(join(prefix, "kernel"), &self.kernel, TensorRole::Param);
        f(join(prefix, "bias"), &self.bias, TensorRole::Param);
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gain: Tensor,
    pub shift: Tensor,
    pub stats: BatchNormStats,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Result<Self> {
        Ok(BatchNorm2d {
            gain: Tensor::param(&[channels], vec![1.0; channels])?,
            shift: Tensor::param(&[channels], vec![0.0; channels])?,
            stats: BatchNormStats::new(channels, 0.1, 1e-5)?,
        })
    }

    pub fn forward(&self, x: &Tensor, ctx: &ForwardCtx) -> Result<Tensor> {
        x.batch_norm(&self.gain, &self.shift, &self.stats, ctx.batch_norm)
    }
}

impl Module for BatchNorm2d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor, TensorRole)) {
        f(join(prefix, "gain"), &self.gain, TensorRole::Param);
        f(join(prefix, "shift"), &self.shift, TensorRole::Param);
        f(join(prefix, "running_mean"), &self.stats.mean, TensorRole::Buffer);
        f(join(prefix, "running_var"), &self.stats.var, TensorRole::Buffer);
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: Tensor,
    pub shift: Tensor,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gain: Tensor::param(&[dim], vec![1.0; dim])?,
            shift: Tensor::param(&[dim], vec![0.0; dim])?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.layer_norm(&self.gain, &self.shift, self.eps)
    }
}

impl Module for LayerNorm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor, TensorRole)) {
        f(join(prefix, "gain"), &self.gain, TensorRole::Param);
        f(join(prefix, "shift"), &self.shift, TensorRole::Param);
    }
}

/// Learned per-position offsets, table `[1×S_max×E]`, broadcast over the batch.
#[derive(Clone, Debug)]
pub struct PositionalEmbedding {
    pub table: Tensor,
}

impl PositionalEmbedding {
    pub fn new(rng: &mut impl Rng, max_len: usize, embed: usize) -> Result<Self> {
        let values = (0..max_len * embed).map(|_| rng.random_range(-0.02..=0.02)).collect();
        Ok(PositionalEmbedding {
            table: Tensor::param(&[1, max_len, embed], values)?,
        })
    }

    pub fn zeros(max_len: usize, embed: usize) -> Result<Self> {
        Ok(PositionalEmbedding {
            table: Tensor::param(&[1, max_len, embed], vec![0.0; max_len * embed])?,
        })
    }

    pub fn max_len(&self) -> usize {
        self.table.dims()[1]
    }

    /// `x + P[:S]` for `x` of shape `[B×S×E]`.
    pub fn add_to(&self, x: &Tensor) -> Result<Tensor> {
        let d = x.dims();
        let (max_len, embed) = (self.table.dims()[1], self.table.dims()[2]);
        if d.len() != 3 || d[2] != embed {
            return Err(Error::shape(
                "positional",
                format!("need [B×S×{embed}], got {}", x.shape()),
            ));
        }
        if d[1] > max_len {
            return Err(Error::shape(
                "positional",
                format!("sequence length {} exceeds table length {max_len}", d[1]),
            ));
        }
        if d[1] == max_len {
            x.add(&self.table)
        } else {
            x.add(&self.table.narrow(1, 0, d[1])?)
        }
    }
}

impl Module for PositionalEmbedding {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor, TensorRole)) {
        f(join(prefix, "table"), &self.table, TensorRole::Param);
    }
}
