use rand::Rng;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{join, BatchNorm2d, Conv2d, ForwardCtx, Linear, Module, TensorRole, HE_GAIN};
use crate::tensor::Tensor;

/// Convolution stages `X_{i+1} = ReLU(BN(Conv_i(X_i)))`.
#[derive(Clone, Debug)]
pub struct ConvStack {
    pub convs: Vec<Conv2d>,
    pub norms: Vec<BatchNorm2d>,
}

impl ConvStack {
    pub fn new(cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut convs = Vec::with_capacity(cfg.conv.len());
        let mut norms = Vec::with_capacity(cfg.conv.len());
        let mut channels = cfg.frames;
        for spec in &cfg.conv {
            convs.push(Conv2d::new(rng, channels, spec.out_channels, spec.kernel, spec.stride, HE_GAIN)?);
            norms.push(BatchNorm2d::new(spec.out_channels)?);
            channels = spec.out_channels;
        }
        Ok(ConvStack { convs, norms })
    }

    pub fn forward(&self, x: &Tensor, ctx: &ForwardCtx) -> Result<Tensor> {
        let mut h = x.clone();
        for (conv, bn) in self.convs.iter().zip(&self.norms) {
            h = bn.forward(&conv.forward(&h)?, ctx)?.relu();
        }
        Ok(h)
    }
}

impl Module for ConvStack {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor, TensorRole)) {
        for (i, (conv, bn)) in self.convs.iter().zip(&self.norms).enumerate() {
            conv.visit(&join(prefix, &format!("conv{i}")), f);
            bn.visit(&join(prefix, &format!("bn{i}")), f);
        }
    }
}

/// Convolutional Q-network: conv stack, flatten, two ReLU layers, linear head.
#[derive(Clone, Debug)]
pub struct Dcqn {
    pub cfg: ModelConfig,
    pub features: ConvStack,
    pub fc1: Linear,
    pub fc2: Linear,
    pub head: Linear,
}

impl Dcqn {
    pub fn new(cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let side = *cfg.conv_extents()?.last().unwrap();
        let flat = cfg.conv.last().unwrap().out_channels * side * side;
        let features = ConvStack::new(cfg, rng)?;
        let fc = cfg.fc_widths();
        Ok(Dcqn {
            cfg: cfg.clone(),
            features,
            fc1: Linear::new(rng, flat, fc[0], HE_GAIN)?,
            fc2: Linear::new(rng, fc[0], fc[1], HE_GAIN)?,
            head: Linear::new(rng, fc[1], cfg.actions, 1.0)?,
        })
    }

    /// `[B×F×H×W]` → `[B×A]`.
    pub fn forward(&self, input: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor> {
        let d = input.dims();
        let s = self.cfg.frame_size;
        if d.len() != 4 || d[1] != self.cfg.frames || d[2] != s || d[3] != s {
            return Err(Error::shape(
                "dcqn",
                format!("need [B×{}×{s}×{s}], got {}", self.cfg.frames, input.shape()),
            ));
        }
        let x3 = self.features.forward(input, ctx)?;
        let flat = x3.reshape(&[d[0], x3.numel() / d[0]])?;
        let x4 = self.fc1.forward(&flat)?.relu();
        let x5 = self.fc2.forward(&x4)?.relu();
        self.head.forward(&x5)
    }
}

impl Module for Dcqn {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor, TensorRole)) {
        self.features.visit(&join(prefix, "features"), f);
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
        self.head.visit(&join(prefix, "head"), f);
    }
}
