use rand::Rng;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{
    join, AttentionPooling, ForwardCtx, GatedEncoder, Linear, Module, PositionalEmbedding, TensorRole, HE_GAIN,
};
use crate::tensor::Tensor;

fn encoder(cfg: &ModelConfig, rng: &mut impl Rng) -> Result<GatedEncoder> {
    GatedEncoder::build(rng, cfg.depth, cfg.embed, cfg.heads, cfg.ff_width(), cfg.dropout, cfg.gate_mode)
}

/// Patch-embedding transformer Q-network.
#[derive(Clone, Debug)]
pub struct DtqnVit {
    pub cfg: ModelConfig,
    pub patch_proj: Linear,
    pub positions: PositionalEmbedding,
    pub encoder: GatedEncoder,
    pub fc: [Linear; 3],
    pub head: Linear,
}

impl DtqnVit {
    pub fn new(cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let seq = cfg.sequence_len()?;
        let p2 = cfg.patch * cfg.patch;
        let patch_proj = Linear::new(rng, p2, cfg.embed, 1.0)?;
        let positions = PositionalEmbedding::new(rng, seq, cfg.embed)?;
        let encoder = encoder(cfg, rng)?;
        let w = cfg.fc_widths();
        let fc = [
            Linear::new(rng, seq * cfg.embed, w[0], HE_GAIN)?,
            Linear::new(rng, w[0], w[1], HE_GAIN)?,
            Linear::new(rng, w[1], w[2], HE_GAIN)?,
        ];
        let head = Linear::new(rng, w[2], cfg.actions, 1.0)?;
        Ok(DtqnVit { cfg: cfg.clone(), patch_proj, positions, encoder, fc, head })
    }

    /// Embedded patch sequence `[B×(F·N)×E]` with positions added.
    pub fn embed(&self, input: &Tensor) -> Result<Tensor> {
        let (f, s) = (self.cfg.frames, self.cfg.frame_size);
        let d = input.dims();
        if d.len() != 2 || d[1] != f * s * s {
            return Err(Error::shape(
                "dtqn_vit",
                format!("need [B×{}], got {}", f * s * s, input.shape()),
            ));
        }
        let patches = input.reshape(&[d[0], f, s, s])?.unfold_patches(self.cfg.patch)?;
        self.positions.add_to(&self.patch_proj.forward(&patches)?)
    }

    /// `[B×(F·H·W)]` → `[B×A]`.
    pub fn forward(&self, input: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor> {
        let b = input.dims()[0];
        let enc = self.encoder.forward(&self.embed(input)?, ctx)?;
        let mut h = enc.reshape(&[b, enc.numel() / b])?;
        for layer in &self.fc {
            h = layer.forward(&h)?.relu();
        }
        self.head.forward(&h)
    }
}

impl Module for DtqnVit {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor, TensorRole)) {
        self.patch_proj.visit(&join(prefix, "patch_proj"), f);
        self.positions.visit(&join(prefix, "positions"), f);
        self.encoder.visit(&join(prefix, "encoder"), f);
        for (i, layer) in self.fc.iter().enumerate() {
            layer.visit(&join(prefix, &format!("fc{}", i + 1)), f);
        }
        self.head.visit(&join(prefix, "head"), f);
    }
}

/// Per-frame linear-projection transformer with attention pooling.
/// Each stacked frame is one token.
#[derive(Clone, Debug)]
pub struct DtqnProj {
    pub cfg: ModelConfig,
    pub input_proj: Linear,
    pub positions: PositionalEmbedding,
    pub encoder: GatedEncoder,
    pub pooling: AttentionPooling,
    pub head: Linear,
}

impl DtqnProj {
    pub fn new(cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let pixels = cfg.frame_size * cfg.frame_size;
        Ok(DtqnProj {
            cfg: cfg.clone(),
            input_proj: Linear::new(rng, pixels, cfg.embed, 1.0)?,
            positions: PositionalEmbedding::new(rng, cfg.frames, cfg.embed)?,
            encoder: encoder(cfg, rng)?,
            pooling: AttentionPooling::new(rng, cfg.embed)?,
            head: Linear::new(rng, cfg.embed, cfg.actions, 1.0)?,
        })
    }

    /// Encoder output `[B×F×E]`.
    pub fn encode(&self, input: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor> {
        let (f, s) = (self.cfg.frames, self.cfg.frame_size);
        let d = input.dims();
        if d.len() != 3 || d[1] != f || d[2] != s * s {
            return Err(Error::shape(
                "dtqn_proj",
                format!("need [B×{f}×{}], got {}", s * s, input.shape()),
            ));
        }
        let x = self.positions.add_to(&self.input_proj.forward(input)?)?;
        self.encoder.forward(&x, ctx)
    }

    /// Pooled context `[B×E]`.
    pub fn context(&self, input: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor> {
        self.pooling.forward(&self.encode(input, ctx)?)
    }

    /// `[B×F×(H·W)]` → `[B×A]`.
    pub fn forward(&self, input: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor> {
        self.head.forward(&self.context(input, ctx)?)
    }
}

impl Module for DtqnProj {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor, TensorRole)) {
        self.input_proj.visit(&join(prefix, "input_proj"), f);
        self.positions.visit(&join(prefix, "positions"), f);
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.pooling.visit(&join(prefix, "pooling"), f);
        self.head.visit(&join(prefix, "head"), f);
    }
}
