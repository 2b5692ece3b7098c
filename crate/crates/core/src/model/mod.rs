//! Toy-scale mixer-family models with a shared multi-label head.
//!
//! Every architecture maps an `N×C×H×W` batch to `N×P` logits (no sigmoid)
//! and exposes the globally pooled pre-head feature `z` that the
//! model-contrastive objective compares.

mod conv_mixer;
mod layers;
mod mixer;
mod params;
mod resnet;

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{config_err, dim_err, Result};
use crate::rng::rng_for;
use crate::tensor::Tensor;

pub use layers::{BnUpdate, ForwardCtx, BN_MOMENTUM};
pub use params::{count_params, ParamEntry, ParamKind, ParamSet};

use conv_mixer::ConvMixer;
use layers::{Builder, Linear};
use mixer::{MlpMixer, PoolFormer};
use resnet::ResnetS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    MlpMixer,
    ConvMixer,
    PoolFormer,
    ResnetS,
}

impl Arch {
    pub const ALL: [Arch; 4] = [Arch::ResnetS, Arch::MlpMixer, Arch::ConvMixer, Arch::PoolFormer];

    pub fn name(self) -> &'static str {
        match self {
            Arch::MlpMixer => "mlp_mixer",
            Arch::ConvMixer => "conv_mixer",
            Arch::PoolFormer => "pool_former",
            Arch::ResnetS => "resnet_s",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Arch::MlpMixer => "MLP-Mixer",
            Arch::ConvMixer => "ConvMixer",
            Arch::PoolFormer => "PoolFormer",
            Arch::ResnetS => "ResNet-S",
        }
    }

    pub fn parse(s: &str) -> Option<Arch> {
        Arch::ALL.into_iter().find(|a| a.name() == s)
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Architecture and size of a model.
///
/// Arch-specific fields are ignored by the other architectures:
/// `token_mlp_dim` (MLP-Mixer), `channel_mlp_dim` (MLP-Mixer, PoolFormer),
/// `kernel_size` (ConvMixer), `pool_size` (PoolFormer) and `stage_widths`
/// (ResNet-S, whose stem stride is `patch_size`, whose block count is
/// `depth`, and whose representation width `embed_dim` must equal the last
/// stage width).
///
/// When deserialized, omitted fields are filled from [`ModelConfig::toy`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ModelConfigSpec")]
pub struct ModelConfig {
    pub arch: Arch,
    pub input_channels: usize,
    pub image_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub num_classes: usize,
    pub token_mlp_dim: usize,
    pub channel_mlp_dim: usize,
    pub kernel_size: usize,
    pub pool_size: usize,
    pub stage_widths: Vec<usize>,
}

impl ModelConfig {
    /// Desk-scale presets, roughly 70k–100k shared values each on 16×16
    /// three-channel images.
    pub fn toy(arch: Arch, num_classes: usize) -> Self {
        let base = ModelConfig {
            arch,
            input_channels: 3,
            image_size: 16,
            patch_size: 4,
            embed_dim: 64,
            depth: 4,
            num_classes,
            token_mlp_dim: 32,
            channel_mlp_dim: 128,
            kernel_size: 5,
            pool_size: 3,
            stage_widths: vec![16, 32, 32, 64],
        };
        match arch {
            Arch::MlpMixer | Arch::PoolFormer => base,
            Arch::ConvMixer => ModelConfig {
                embed_dim: 96,
                depth: 6,
                ..base
            },
            Arch::ResnetS => ModelConfig { patch_size: 2, ..base },
        }
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_tokens(&self) -> usize {
        self.grid() * self.grid()
    }

    /// Width of the representation vector `z`.
    pub fn repr_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_channels", self.input_channels),
            ("image_size", self.image_size),
            ("patch_size", self.patch_size),
            ("embed_dim", self.embed_dim),
            ("depth", self.depth),
            ("num_classes", self.num_classes),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(config_err!("{name} must be at least 1"));
            }
        }
        if !self.image_size.is_multiple_of(self.patch_size) {
            return Err(config_err!(
                "image_size {} is not divisible by patch_size {}",
                self.image_size,
                self.patch_size
            ));
        }
        match self.arch {
            Arch::MlpMixer => {
                if self.token_mlp_dim == 0 || self.channel_mlp_dim == 0 {
                    return Err(config_err!("mlp_mixer needs positive token and channel MLP widths"));
                }
            }
            Arch::PoolFormer => {
                if self.channel_mlp_dim == 0 {
                    return Err(config_err!("pool_former needs a positive channel MLP width"));
                }
                if self.pool_size.is_multiple_of(2) {
                    return Err(config_err!("pool_size must be odd for same padding, got {}", self.pool_size));
                }
            }
            Arch::ConvMixer => {
                if self.kernel_size.is_multiple_of(2) {
                    return Err(config_err!("kernel_size must be odd for same padding, got {}", self.kernel_size));
                }
            }
            Arch::ResnetS => {
                if self.stage_widths.len() != self.depth || self.stage_widths.contains(&0) {
                    return Err(config_err!(
                        "resnet_s needs depth ({}) positive stage widths, got {:?}",
                        self.depth,
                        self.stage_widths
                    ));
                }
                if self.stage_widths.last() != Some(&self.embed_dim) {
                    return Err(config_err!(
                        "resnet_s embed_dim {} must equal the last stage width {:?}",
                        self.embed_dim,
                        self.stage_widths.last()
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Deserialization form of [`ModelConfig`] with optional fields.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelConfigSpec {
    arch: Arch,
    num_classes: usize,
    input_channels: Option<usize>,
    image_size: Option<usize>,
    patch_size: Option<usize>,
    embed_dim: Option<usize>,
    depth: Option<usize>,
    token_mlp_dim: Option<usize>,
    channel_mlp_dim: Option<usize>,
    kernel_size: Option<usize>,
    pool_size: Option<usize>,
    stage_widths: Option<Vec<usize>>,
}

impl TryFrom<ModelConfigSpec> for ModelConfig {
    type Error = crate::Error;

    fn try_from(s: ModelConfigSpec) -> Result<Self> {
        let d = ModelConfig::toy(s.arch, s.num_classes);
        let cfg = ModelConfig {
            arch: s.arch,
            num_classes: s.num_classes,
            input_channels: s.input_channels.unwrap_or(d.input_channels),
            image_size: s.image_size.unwrap_or(d.image_size),
            patch_size: s.patch_size.unwrap_or(d.patch_size),
            embed_dim: s.embed_dim.unwrap_or(d.embed_dim),
            depth: s.depth.unwrap_or(d.depth),
            token_mlp_dim: s.token_mlp_dim.unwrap_or(d.token_mlp_dim),
            channel_mlp_dim: s.channel_mlp_dim.unwrap_or(d.channel_mlp_dim),
            kernel_size: s.kernel_size.unwrap_or(d.kernel_size),
            pool_size: s.pool_size.unwrap_or(d.pool_size),
            stage_widths: s.stage_widths.unwrap_or(d.stage_widths),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch norm uses batch statistics and reports running-stat updates.
    Train,
    /// Batch norm uses running statistics; samples are independent.
    Eval,
}

/// Output of one forward pass.
pub struct Forward {
    /// `N×P` logits.
    pub logits: Var,
    /// `N×repr_dim` pooled representation.
    pub z: Var,
    /// Running-stat updates to apply after the step (train mode only).
    pub bn_updates: Vec<BnUpdate>,
}

#[derive(Clone, Debug)]
enum Net {
    MlpMixer(MlpMixer),
    ConvMixer(ConvMixer),
    PoolFormer(PoolFormer),
    ResnetS(ResnetS),
}

/// A built model: layer structure plus its initial parameters.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    init: ParamSet,
    net: Net,
}

/// Builds a model with seeded He-uniform initialization.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<Model> {
    config.validate()?;
    let mut b = Builder::new(rng_for(seed, &[0x40de1]));
    let net = match config.arch {
        Arch::MlpMixer => Net::MlpMixer(MlpMixer::build(&mut b, config)?),
        Arch::ConvMixer => Net::ConvMixer(ConvMixer::build(&mut b, config)?),
        Arch::PoolFormer => Net::PoolFormer(PoolFormer::build(&mut b, config)?),
        Arch::ResnetS => Net::ResnetS(ResnetS::build(&mut b, config)?),
    };
    Ok(Model {
        config: config.clone(),
        init: b.params,
        net,
    })
}

impl Model {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Parameters drawn at build time.
    pub fn initial_params(&self) -> &ParamSet {
        &self.init
    }

    /// Records `params` on `graph`. Trainable entries track gradients when
    /// `track` is set; buffers never do.
    pub fn bind(&self, graph: &mut Graph, params: &ParamSet, track: bool) -> Result<Vec<Var>> {
        self.init.ensure_same_structure(params, "bind")?;
        Ok(params
            .iter()
            .map(|e| graph.leaf(e.tensor.clone(), track && e.kind == ParamKind::Trainable))
            .collect())
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let c = &self.config;
        if shape.len() != 4 || shape[1] != c.input_channels || shape[2] != c.image_size || shape[3] != c.image_size {
            return Err(dim_err!(
                "model expects N×{}×{}×{} input, got {:?}",
                c.input_channels,
                c.image_size,
                c.image_size,
                shape
            ));
        }
        Ok(())
    }

    /// Runs the network on `input` using parameter handles from
    /// [`Model::bind`].
    pub fn forward(&self, graph: &mut Graph, params: &[Var], input: Var, mode: Mode) -> Result<Forward> {
        self.check_input(graph.shape(input))?;
        if params.len() != self.init.len() {
            return Err(dim_err!("forward: {} parameter handles for {} entries", params.len(), self.init.len()));
        }
        let mut ctx = ForwardCtx::new(graph, params, mode == Mode::Train);
        let (z, head): (Var, &Linear) = match &self.net {
            Net::MlpMixer(m) => (m.features(&mut ctx, input)?, &m.head),
            Net::ConvMixer(m) => (m.features(&mut ctx, input)?, &m.head),
            Net::PoolFormer(m) => (m.features(&mut ctx, input)?, &m.head),
            Net::ResnetS(m) => (m.features(&mut ctx, input)?, &m.head),
        };
        let logits = head.forward(&mut ctx, z)?;
        Ok(Forward {
            logits,
            z,
            bn_updates: ctx.bn_updates,
        })
    }

    /// Eval-mode forward without gradient tracking: `(logits, z)`.
    pub fn predict(&self, params: &ParamSet, batch: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, params, false)?;
        let x = g.constant(batch.clone());
        let out = self.forward(&mut g, &vars, x, Mode::Eval)?;
        Ok((g.value(out.logits).clone(), g.value(out.z).clone()))
    }
}

#[cfg(test)]
mod tests;
