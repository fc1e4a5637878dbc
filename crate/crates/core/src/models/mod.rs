//! Q-network architectures mapping stacked frames to one Q-value per action.
//!
//! | variant            | input                 | body                                            |
//! |--------------------|-----------------------|-------------------------------------------------|
//! | `dcqn`             | `[B×F×H×W]`           | 3×(conv → BN → ReLU), 2 ReLU FC, linear head    |
//! | `dtqn_vit`         | `[B×(F·H·W)]`         | patches → proj → +pos → gated encoder → 3 FC → head |
//! | `dtqn_proj`        | `[B×F×(H·W)]`         | per-frame proj → +pos → gated encoder → attention pooling → head |
//! | `conv_transformer` | `[B×F×H×W]`           | conv stack → spatial tokens → proj → +pos → gated encoder → head |

pub mod checkpoint;
mod conv_transformer;
mod dcqn;
mod dtqn;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ForwardCtx, GateMode, Module, TensorRole};
use crate::tensor::{conv_out_extent, Tensor};

pub use conv_transformer::ConvTransformer;
pub use dcqn::{ConvStack, Dcqn};
pub use dtqn::{DtqnProj, DtqnVit};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Dcqn,
    DtqnVit,
    DtqnProj,
    ConvTransformer,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Dcqn, Variant::DtqnVit, Variant::DtqnProj, Variant::ConvTransformer];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Dcqn => "dcqn",
            Variant::DtqnVit => "dtqn_vit",
            Variant::DtqnProj => "dtqn_proj",
            Variant::ConvTransformer => "conv_transformer",
        }
    }

    pub fn uses_encoder(self) -> bool {
        self != Variant::Dcqn
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvSpec {
    pub const fn new(out_channels: usize, kernel: usize, stride: usize) -> Self {
        ConvSpec { out_channels, kernel, stride }
    }
}

fn default_conv() -> Vec<ConvSpec> {
    vec![ConvSpec::new(32, 8, 4), ConvSpec::new(64, 4, 2), ConvSpec::new(64, 3, 1)]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    #[serde(default = "default_frames")]
    pub frames: usize,
    /// Side of the square preprocessed frame.
    #[serde(default = "default_frame_size")]
    pub frame_size: usize,
    /// Number of actions; 0 means "take it from the environment".
    #[serde(default)]
    pub actions: usize,
    #[serde(default = "default_conv")]
    pub conv: Vec<ConvSpec>,
    /// Hidden fully connected widths (two for `dcqn`, three for `dtqn_vit`).
    #[serde(default)]
    pub fc: Vec<usize>,
    #[serde(default = "default_patch")]
    pub patch: usize,
    #[serde(default = "default_embed")]
    pub embed: usize,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    /// Feed-forward width; 0 means `4·embed`.
    #[serde(default)]
    pub ff_dim: usize,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub gate_mode: GateMode,
    #[serde(default)]
    pub init_seed: u64,
}

fn default_frames() -> usize {
    4
}
fn default_frame_size() -> usize {
    84
}
fn default_patch() -> usize {
    16
}
fn default_embed() -> usize {
    128
}
fn default_depth() -> usize {
    2
}
fn default_heads() -> usize {
    4
}

fn default_fc(variant: Variant) -> Vec<usize> {
    match variant {
        Variant::Dcqn => vec![512, 256],
        Variant::DtqnVit => vec![512, 256, 128],
        _ => vec![],
    }
}

impl ModelConfig {
    pub fn new(variant: Variant, actions: usize) -> Self {
        let fc = default_fc(variant);
        ModelConfig {
            variant,
            frames: default_frames(),
            frame_size: default_frame_size(),
            actions,
            conv: default_conv(),
            fc,
            patch: default_patch(),
            embed: default_embed(),
            depth: default_depth(),
            heads: default_heads(),
            ff_dim: 0,
            dropout: 0.0,
            gate_mode: GateMode::Literal,
            init_seed: 0,
        }
    }

    /// Hidden widths of the fully connected head; the variant default when
    /// none are configured.
    pub fn fc_widths(&self) -> Vec<usize> {
        if self.fc.is_empty() {
            default_fc(self.variant)
        } else {
            self.fc.clone()
        }
    }

    /// Writes the implied head widths and feed-forward width into the config.
    pub fn fill_defaults(&mut self) {
        self.fc = self.fc_widths();
        self.ff_dim = self.ff_width();
    }

    pub fn ff_width(&self) -> usize {
        if self.ff_dim == 0 {
            4 * self.embed
        } else {
            self.ff_dim
        }
    }

    /// Spatial extents after each conv layer, starting from the frame size.
    pub fn conv_extents(&self) -> Result<Vec<usize>> {
        let mut sizes = vec![self.frame_size];
        for (i, c) in self.conv.iter().enumerate() {
            let last = *sizes.last().unwrap();
            let next = conv_out_extent(last, c.kernel, c.stride).ok_or_else(|| {
                Error::Config(format!(
                    "conv layer {i}: kernel {} (stride {}) does not fit a {last}×{last} input",
                    c.kernel, c.stride
                ))
            })?;
            sizes.push(next);
        }
        Ok(sizes)
    }

    /// Patches per frame for `dtqn_vit`: `⌊H/p⌋·⌊W/p⌋`.
    pub fn patches_per_frame(&self) -> usize {
        let n = self.frame_size / self.patch.max(1);
        n * n
    }

    /// Encoder sequence length for transformer variants.
    pub fn sequence_len(&self) -> Result<usize> {
        Ok(match self.variant {
            Variant::Dcqn => 0,
            Variant::DtqnVit => self.frames * self.patches_per_frame(),
            Variant::DtqnProj => self.frames,
            Variant::ConvTransformer => {
                let s = *self.conv_extents()?.last().unwrap();
                s * s
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.actions < 2 {
            return bad(format!("model.actions must be at least 2, got {}", self.actions));
        }
        if self.frames < 1 {
            return bad("model.frames must be at least 1".into());
        }
        if self.frame_size < 1 {
            return bad("model.frame_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("model.dropout {} outside [0, 1)", self.dropout));
        }
        if matches!(self.variant, Variant::Dcqn | Variant::ConvTransformer) {
            if self.conv.is_empty() {
                return bad(format!("model.conv must list at least one layer for {}", self.variant));
            }
            if self.conv.iter().any(|c| c.out_channels == 0 || c.kernel == 0 || c.stride == 0) {
                return bad("model.conv entries need positive out_channels, kernel and stride".into());
            }
            self.conv_extents()?;
        }
        let want_fc = match self.variant {
            Variant::Dcqn => 2,
            Variant::DtqnVit => 3,
            _ => 0,
        };
        let fc = self.fc_widths();
        if want_fc > 0 && (fc.len() != want_fc || fc.contains(&0)) {
            return bad(format!(
                "model.fc must list {want_fc} positive widths for {}, got {:?}",
                self.variant, fc
            ));
        }
        if self.variant.uses_encoder() {
            if self.embed == 0 || self.depth == 0 || self.heads == 0 {
                return bad("model.embed, model.depth and model.heads must be positive".into());
            }
            if self.embed % self.heads != 0 {
                return bad(format!(
                    "model.embed {} is not divisible by model.heads {}",
                    self.embed, self.heads
                ));
            }
        }
        if self.variant == Variant::DtqnVit && (self.patch == 0 || self.patch > self.frame_size) {
            return bad(format!(
                "model.patch {} does not fit a {}-pixel frame",
                self.patch, self.frame_size
            ));
        }
        Ok(())
    }
}

/// One of the four architectures.
#[derive(Clone, Debug)]
pub enum QNetwork {
    Dcqn(Dcqn),
    DtqnVit(DtqnVit),
    DtqnProj(DtqnProj),
    ConvTransformer(ConvTransformer),
}

impl QNetwork {
    /// Builds a freshly initialized network (weights drawn from `cfg.init_seed`).
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        Ok(match cfg.variant {
            Variant::Dcqn => QNetwork::Dcqn(Dcqn::new(cfg, &mut rng)?),
            Variant::DtqnVit => QNetwork::DtqnVit(DtqnVit::new(cfg, &mut rng)?),
            Variant::DtqnProj => QNetwork::DtqnProj(DtqnProj::new(cfg, &mut rng)?),
            Variant::ConvTransformer => QNetwork::ConvTransformer(ConvTransformer::new(cfg, &mut rng)?),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            QNetwork::Dcqn(m) => &m.cfg,
            QNetwork::DtqnVit(m) => &m.cfg,
            QNetwork::DtqnProj(m) => &m.cfg,
            QNetwork::ConvTransformer(m) => &m.cfg,
        }
    }

    pub fn actions(&self) -> usize {
        self.config().actions
    }

    /// Q-values `[B×A]` for stacked frames `[B×F×H×W]`, reshaped to whatever
    /// layout the architecture consumes.
    pub fn forward(&self, stack: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor> {
        let cfg = self.config();
        let s = cfg.frame_size;
        let d = stack.dims();
        if d.len() != 4 || d[1] != cfg.frames || d[2] != s || d[3] != s {
            return Err(Error::shape(
                "q_network",
                format!("need [B×{}×{s}×{s}], got {}", cfg.frames, stack.shape()),
            ));
        }
        let b = d[0];
        match self {
            QNetwork::Dcqn(m) => m.forward(stack, ctx),
            QNetwork::DtqnVit(m) => m.forward(&stack.reshape(&[b, cfg.frames * s * s])?, ctx),
            QNetwork::DtqnProj(m) => m.forward(&stack.reshape(&[b, cfg.frames, s * s])?, ctx),
            QNetwork::ConvTransformer(m) => m.forward(stack, ctx),
        }
    }

    /// A second network with identical configuration and values.
    pub fn duplicate(&self) -> Result<Self> {
        let copy = QNetwork::new(self.config())?;
        copy.copy_from(self)?;
        Ok(copy)
    }

    /// Overwrites every parameter and buffer with `other`'s values.
    pub fn copy_from(&self, other: &QNetwork) -> Result<()> {
        if self.config() != other.config() {
            return Err(Error::Config("cannot copy between differently configured networks".into()));
        }
        for ((name, dst, _), (_, src, _)) in self.state().into_iter().zip(other.state()) {
            if dst.dims() != src.dims() {
                return Err(Error::shape("copy_from", format!("{name}: {} vs {}", dst.shape(), src.shape())));
            }
            dst.data_mut().copy_from_slice(&src.data());
        }
        Ok(())
    }

    pub fn zero_grad(&self) {
        for (_, p) in self.parameters() {
            p.zero_grad();
        }
    }

    /// Largest absolute difference over all parameters and buffers.
    pub fn max_abs_diff(&self, other: &QNetwork) -> f64 {
        self.state()
            .into_iter()
            .zip(other.state())
            .flat_map(|((_, a, _), (_, b, _))| {
                let (a, b) = (a.to_vec(), b.to_vec());
                a.into_iter().zip(b).map(|(x, y)| (x - y).abs()).collect::<Vec<_>>()
            })
            .fold(0.0, f64::max)
    }
}

impl Module for QNetwork {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor, TensorRole)) {
        match self {
            QNetwork::Dcqn(m) => m.visit(prefix, f),
            QNetwork::DtqnVit(m) => m.visit(prefix, f),
            QNetwork::DtqnProj(m) => m.visit(prefix, f),
            QNetwork::ConvTransformer(m) => m.visit(prefix, f),
        }
    }
}
