//! Token-mixing architectures that share the patch-token layout:
//! MLP-Mixer (MLP token mixer) and PoolFormer (average-pooling token mixer).

use alloc::format;
use alloc::vec::Vec;

use super::layers::{Builder, ConvLayer, ForwardCtx, LayerNorm, Linear, Mlp};
use super::ModelConfig;
use crate::autodiff::{Conv2d, Pool2d, Var};
use crate::error::Result;

/// Non-overlapping patch embedding: a convolution with stride = kernel = patch.
pub(crate) fn patch_embed(b: &mut Builder, cfg: &ModelConfig) -> Result<ConvLayer> {
    let spec = Conv2d {
        stride: cfg.patch_size,
        padding: 0,
        groups: 1,
    };
    b.conv("patch_embed", cfg.input_channels, cfg.embed_dim, cfg.patch_size, spec, true)
}

/// `N×D×h×w → N×(h·w)×D`.
pub(crate) fn to_tokens(ctx: &mut ForwardCtx<'_>, x: Var) -> Result<Var> {
    let s = ctx.graph.shape(x).to_vec();
    let t = ctx.graph.permute(x, &[0, 2, 3, 1])?;
    ctx.graph.reshape(t, &[s[0], s[2] * s[3], s[1]])
}

/// `N×(h·w)×D → N×D×h×w`.
pub(crate) fn from_tokens(ctx: &mut ForwardCtx<'_>, x: Var, h: usize, w: usize) -> Result<Var> {
    let s = ctx.graph.shape(x).to_vec();
    let t = ctx.graph.reshape(x, &[s[0], h, w, s[2]])?;
    ctx.graph.permute(t, &[0, 3, 1, 2])
}

#[derive(Clone, Debug)]
struct MixerBlock {
    norm1: LayerNorm,
    token_mlp: Mlp,
    norm2: LayerNorm,
    channel_mlp: Mlp,
}

#[derive(Clone, Debug)]
pub(crate) struct MlpMixer {
    embed: ConvLayer,
    blocks: Vec<MixerBlock>,
    norm: LayerNorm,
    pub head: Linear,
}

impl MlpMixer {
    pub fn build(b: &mut Builder, cfg: &ModelConfig) -> Result<Self> {
        let tokens = cfg.num_tokens();
        let embed = patch_embed(b, cfg)?;
        let blocks = (0..cfg.depth)
            .map(|i| {
                Ok(MixerBlock {
                    norm1: b.layer_norm(&format!("blocks.{i}.norm1"), cfg.embed_dim)?,
                    token_mlp: Mlp::new(b, &format!("blocks.{i}.token_mlp"), tokens, cfg.token_mlp_dim)?,
                    norm2: b.layer_norm(&format!("blocks.{i}.norm2"), cfg.embed_dim)?,
                    channel_mlp: Mlp::new(b, &format!("blocks.{i}.channel_mlp"), cfg.embed_dim, cfg.channel_mlp_dim)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            embed,
            blocks,
            norm: b.layer_norm("norm", cfg.embed_dim)?,
            head: b.linear("head", cfg.embed_dim, cfg.num_classes)?,
        })
    }

    /// Returns the pooled representation `N×D`.
    pub fn features(&self, ctx: &mut ForwardCtx<'_>, x: Var) -> Result<Var> {
        let x = self.embed.forward(ctx, x)?;
        let mut x = to_tokens(ctx, x)?;
        for blk in &self.blocks {
            // token mixing runs along the token axis: N×S×D → N×D×S
            let y = blk.norm1.forward(ctx, x)?;
            let y = ctx.graph.transpose(y)?;
            let y = blk.token_mlp.forward(ctx, y)?;
            let y = ctx.graph.transpose(y)?;
            x = ctx.graph.add(x, y)?;
            let y = blk.norm2.forward(ctx, x)?;
            let y = blk.channel_mlp.forward(ctx, y)?;
            x = ctx.graph.add(x, y)?;
        }
        let x = self.norm.forward(ctx, x)?;
        ctx.graph.mean_axis(x, 1)
    }
}

#[derive(Clone, Debug)]
struct PoolBlock {
    norm1: LayerNorm,
    norm2: LayerNorm,
    channel_mlp: Mlp,
}

#[derive(Clone, Debug)]
pub(crate) struct PoolFormer {
    embed: ConvLayer,
    blocks: Vec<PoolBlock>,
    norm: LayerNorm,
    pool: Pool2d,
    grid: usize,
    pub head: Linear,
}

impl PoolFormer {
    pub fn build(b: &mut Builder, cfg: &ModelConfig) -> Result<Self> {
        let embed = patch_embed(b, cfg)?;
        let blocks = (0..cfg.depth)
            .map(|i| {
                Ok(PoolBlock {
                    norm1: b.layer_norm(&format!("blocks.{i}.norm1"), cfg.embed_dim)?,
                    norm2: b.layer_norm(&format!("blocks.{i}.norm2"), cfg.embed_dim)?,
                    channel_mlp: Mlp::new(b, &format!("blocks.{i}.channel_mlp"), cfg.embed_dim, cfg.channel_mlp_dim)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            embed,
            blocks,
            norm: b.layer_norm("norm", cfg.embed_dim)?,
            pool: Pool2d {
                kernel: cfg.pool_size,
                stride: 1,
                padding: cfg.pool_size / 2,
            },
            grid: cfg.image_size / cfg.patch_size,
            head: b.linear("head", cfg.embed_dim, cfg.num_classes)?,
        })
    }

    pub fn features(&self, ctx: &mut ForwardCtx<'_>, x: Var) -> Result<Var> {
        let x = self.embed.forward(ctx, x)?;
        let mut x = to_tokens(ctx, x)?;
        for blk in &self.blocks {
            // token mixer: avg_pool(y) − y, no parameters
            let y = blk.norm1.forward(ctx, x)?;
            let y = from_tokens(ctx, y, self.grid, self.grid)?;
            let pooled = ctx.graph.avg_pool2d(y, self.pool)?;
            let mixed = ctx.graph.sub(pooled, y)?;
            let mixed = to_tokens(ctx, mixed)?;
            x = ctx.graph.add(x, mixed)?;
            let y = blk.norm2.forward(ctx, x)?;
            let y = blk.channel_mlp.forward(ctx, y)?;
            x = ctx.graph.add(x, y)?;
        }
        let x = self.norm.forward(ctx, x)?;
        ctx.graph.mean_axis(x, 1)
    }
}
