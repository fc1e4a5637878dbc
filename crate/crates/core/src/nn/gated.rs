//! Gated transformer-XL layer and encoder stack.
//!
//! Each layer is pre-norm:
//!
//! ```text
//! G1 = σ(W_g [X, Attn(LN1(X))] + b_g)      Y = X + Dropout(G1)
//! G2 = σ(W_g' [Y, FF(LN2(Y))] + b_g')      Z = Y + Dropout(G2)
//! out = LN_out(Z)
//! ```
//!
//! with `FF(y) = ReLU(y W1 + b1) W2 + b2`. In [`GateMode::Multiplicative`] the
//! residual adds `G1 ⊙ Attn` and `G2 ⊙ FF` instead of the bare gates.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{join, ForwardCtx, LayerNorm, Linear, Module, MultiHeadAttention, TensorRole, HE_GAIN};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    /// Residual adds the sigmoid gate itself.
    #[default]
    Literal,
    /// Residual adds the gate times the sublayer output.
    Multiplicative,
}

#[derive(Clone, Debug)]
pub struct GatedTxlLayer {
    pub norm_attn: LayerNorm,
    pub attention: MultiHeadAttention,
    pub gate_attn: Linear,
    pub norm_ff: LayerNorm,
    pub ff_in: Linear,
    pub ff_out: Linear,
    pub gate_ff: Linear,
    pub norm_out: LayerNorm,
    pub dropout: f64,
    pub mode: GateMode,
}

/// Intermediate values of one layer, for inspection.
pub struct GatedTrace {
    pub output: Tensor,
    pub gate_attn: Tensor,
    pub gate_ff: Tensor,
    pub residual_attn: Tensor,
    pub residual_ff: Tensor,
}

impl GatedTxlLayer {
    pub fn new(
        rng: &mut impl Rng,
        dim: usize,
        heads: usize,
        ff_dim: usize,
        dropout: f64,
        mode: GateMode,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!("dropout rate {dropout} outside [0, 1)")));
        }
        let gate = |rng: &mut _| -> Result<Linear> {
            let mut g = Linear::new(rng, 2 * dim, dim, 1.0)?;
            g.bias = Tensor::param(&[dim], vec![0.0; dim])?;
            Ok(g)
        };
        Ok(GatedTxlLayer {
            norm_attn: LayerNorm::new(dim)?,
            attention: MultiHeadAttention::new(rng, dim, heads)?,
            gate_attn: gate(rng)?,
            norm_ff: LayerNorm::new(dim)?,
            ff_in: Linear::new(rng, dim, ff_dim, HE_GAIN)?,
            ff_out: Linear::new(rng, ff_dim, dim, 1.0)?,
            gate_ff: gate(rng)?,
            norm_out: LayerNorm::new(dim)?,
            dropout,
            mode,
        })
    }

    pub fn dim(&self) -> usize {
        self.attention.dim()
    }

    pub fn forward(&self, x: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor> {
        Ok(self.trace(x, ctx)?.output)
    }

    pub fn trace(&self, x: &Tensor, ctx: &mut ForwardCtx) -> Result<GatedTrace> {
        let attn = self.attention.forward(&self.norm_attn.forward(x)?)?;
        let g1 = self.gate_attn.forward(&x.concat_last(&attn)?)?.sigmoid();
        let update1 = match self.mode {
            GateMode::Literal => g1.clone(),
            GateMode::Multiplicative => g1.mul(&attn)?,
        };
        let y = x.add(&update1.dropout(self.dropout, ctx.dropout_active, &mut ctx.rng)?)?;

        let ff = self.ff_out.forward(&self.ff_in.forward(&self.norm_ff.forward(&y)?)?.relu())?;
        let g2 = self.gate_ff.forward(&y.concat_last(&ff)?)?.sigmoid();
        let update2 = match self.mode {
            GateMode::Literal => g2.clone(),
            GateMode::Multiplicative => g2.mul(&ff)?,
        };
        let z = y.add(&update2.dropout(self.dropout, ctx.dropout_active, &mut ctx.rng)?)?;
        Ok(GatedTrace {
            output: self.norm_out.forward(&z)?,
            gate_attn: g1,
            gate_ff: g2,
            residual_attn: y,
            residual_ff: z,
        })
    }
}

impl Module for GatedTxlLayer {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor, TensorRole)) {
        self.norm_attn.visit(&join(prefix, "norm_attn"), f);
        self.attention.visit(&join(prefix, "attention"), f);
        self.gate_attn.visit(&join(prefix, "gate_attn"), f);
        self.norm_ff.visit(&join(prefix, "norm_ff"), f);
        self.ff_in.visit(&join(prefix, "ff_in"), f);
        self.ff_out.visit(&join(prefix, "ff_out"), f);
        self.gate_ff.visit(&join(prefix, "gate_ff"), f);
        self.norm_out.visit(&join(prefix, "norm_out"), f);
    }
}

/// A stack of gated layers applied in sequence.
#[derive(Clone, Debug)]
pub struct GatedEncoder {
    pub layers: Vec<GatedTxlLayer>,
}

impl GatedEncoder {
    pub fn new(layers: Vec<GatedTxlLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("gated encoder needs at least one layer".into()));
        }
        Ok(GatedEncoder { layers })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn build(
        rng: &mut impl Rng,
        depth: usize,
        dim: usize,
        heads: usize,
        ff_dim: usize,
        dropout: f64,
        mode: GateMode,
    ) -> Result<Self> {
        let layers = (0..depth)
            .map(|_| GatedTxlLayer::new(rng, dim, heads, ff_dim, dropout, mode))
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn forward(&self, x: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.forward(&h, ctx)?;
        }
        Ok(h)
    }
}

impl Module for GatedEncoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor, TensorRole)) {
        for (i, layer) in self.layers.iter().enumerate() {
            layer.visit(&join(prefix, &format!("layers.{i}")), f);
        }
    }
}
