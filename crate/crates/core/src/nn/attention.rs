use rand::Rng;

use super::{join, Linear, Module, TensorRole};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Scaled dot-product self-attention with `heads` heads over `[B×S×d]`.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(rng: &mut impl Rng, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!(
                "model dim {dim} is not divisible by {heads} attention heads"
            )));
        }
        Ok(MultiHeadAttention {
            query: Linear::new(rng, dim, dim, 1.0)?,
            key: Linear::new(rng, dim, dim, 1.0)?,
            value: Linear::new(rng, dim, dim, 1.0)?,
            output: Linear::new(rng, dim, dim, 1.0)?,
            heads,
        })
    }

    pub fn from_parts(query: Linear, key: Linear, value: Linear, output: Linear, heads: usize) -> Result<Self> {
        let dim = query.input_dim();
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!(
                "model dim {dim} is not divisible by {heads} attention heads"
            )));
        }
        Ok(MultiHeadAttention { query, key, value, output, heads })
    }

    pub fn dim(&self) -> usize {
        self.query.input_dim()
    }

    /// `[B×S×d]` → `[B·h×S×d_k]`.
    fn split_heads(&self, x: &Tensor) -> Result<Tensor> {
        let d = x.dims();
        let (b, s, dim) = (d[0], d[1], d[2]);
        let dk = dim / self.heads;
        x.reshape(&[b, s, self.heads, dk])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[b * self.heads, s, dk])
    }

    fn check(&self, x: &Tensor) -> Result<(usize, usize)> {
        let d = x.dims();
        if d.len() != 3 || d[2] != self.dim() {
            return Err(Error::shape(
                "attention",
                format!("need [B×S×{}], got {}", self.dim(), x.shape()),
            ));
        }
        Ok((d[0], d[1]))
    }

    /// Attention probabilities `[B·h×S×S]` (rows sum to one).
    pub fn weights(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let q = self.split_heads(&self.query.forward(x)?)?;
        let k = self.split_heads(&self.key.forward(x)?)?;
        let dk = (self.dim() / self.heads) as f64;
        q.bmm(&k.permute(&[0, 2, 1])?)?.scale(1.0 / dk.sqrt()).softmax(2)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, s) = self.check(x)?;
        let att = self.weights(x)?;
        let v = self.split_heads(&self.value.forward(x)?)?;
        let dk = self.dim() / self.heads;
        let mixed = att
            .bmm(&v)?
            .reshape(&[b, self.heads, s, dk])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[b, s, self.dim()])?;
        self.output.forward(&mixed)
    }
}

impl Module for MultiHeadAttention {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor, TensorRole)) {
        self.query.visit(&join(prefix, "query"), f);
        self.key.visit(&join(prefix, "key"), f);
        self.value.visit(&join(prefix, "value"), f);
        self.output.visit(&join(prefix, "output"), f);
    }
}

/// Collapses `[B×S×E]` to a context vector `[B×E]` with learned softmax weights.
#[derive(Clone, Debug)]
pub struct AttentionPooling {
    pub score: Linear,
}

impl AttentionPooling {
    pub fn new(rng: &mut impl Rng, embed: usize) -> Result<Self> {
        Ok(AttentionPooling {
            score: Linear::new(rng, embed, 1, 1.0)?,
        })
    }

    pub fn zeros(embed: usize) -> Result<Self> {
        Ok(AttentionPooling {
            score: Linear::zeros(embed, 1)?,
        })
    }

    /// Pooling weights `[B×S]`.
    pub fn weights(&self, x: &Tensor) -> Result<Tensor> {
        let d = x.dims();
        if d.len() != 3 {
            return Err(Error::shape("attention_pooling", format!("need [B×S×E], got {}", x.shape())));
        }
        self.score.forward(x)?.reshape(&[d[0], d[1]])?.softmax(1)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let w = self.weights(x)?;
        let d = x.dims();
        w.reshape(&[d[0], 1, d[1]])?.bmm(x)?.reshape(&[d[0], d[2]])
    }
}

impl Module for AttentionPooling {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor, TensorRole)) {
        self.score.visit(&join(prefix, "score"), f);
    }
}
