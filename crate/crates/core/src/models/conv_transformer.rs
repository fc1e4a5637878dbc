use rand::Rng;

use super::{ConvStack, ModelConfig};
use crate::error::Result;
use crate::nn::{join, ForwardCtx, GatedEncoder, Linear, Module, PositionalEmbedding, TensorRole};
use crate::tensor::Tensor;

/// Conv features tokenized by spatial position (`H'·W'` tokens of width
/// `F_dim`), projected to the embedding size and fed to the gated encoder.
#[derive(Clone, Debug)]
pub struct ConvTransformer {
    pub cfg: ModelConfig,
    pub features: ConvStack,
    pub token_proj: Linear,
    pub positions: PositionalEmbedding,
    pub encoder: GatedEncoder,
    pub head: Linear,
}

impl ConvTransformer {
    pub fn new(cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let tokens = cfg.sequence_len()?;
        let feature_dim = cfg.conv.last().unwrap().out_channels;
        let features = ConvStack::new(cfg, rng)?;
        let token_proj = Linear::new(rng, feature_dim, cfg.embed, 1.0)?;
        let positions = PositionalEmbedding::new(rng, tokens, cfg.embed)?;
        let encoder = GatedEncoder::build(
            rng,
            cfg.depth,
            cfg.embed,
            cfg.heads,
            cfg.ff_width(),
            cfg.dropout,
            cfg.gate_mode,
        )?;
        let head = Linear::new(rng, tokens * cfg.embed, cfg.actions, 1.0)?;
        Ok(ConvTransformer { cfg: cfg.clone(), features, token_proj, positions, encoder, head })
    }

    /// Spatial tokens `[B×(H'·W')×F_dim]` before projection.
    pub fn tokens(&self, input: &Tensor, ctx: &ForwardCtx) -> Result<Tensor> {
        let feat = self.features.forward(input, ctx)?;
        let d = feat.dims().to_vec();
        feat.reshape(&[d[0], d[1], d[2] * d[3]])?.permute(&[0, 2, 1])
    }

    /// `[B×F×H×W]` → `[B×A]`.
    pub fn forward(&self, input: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor> {
        let tokens = self.tokens(input, ctx)?;
        let x = self.positions.add_to(&self.token_proj.forward(&tokens)?)?;
        let enc = self.encoder.forward(&x, ctx)?;
        let b = enc.dims()[0];
        self.head.forward(&enc.reshape(&[b, enc.numel() / b])?)
    }
}

impl Module for ConvTransformer {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor, TensorRole)) {
        self.features.visit(&join(prefix, "features"), f);
        self.token_proj.visit(&join(prefix, "token_proj"), f);
        self.positions.visit(&join(prefix, "positions"), f);
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.head.visit(&join(prefix, "head"), f);
    }
}
