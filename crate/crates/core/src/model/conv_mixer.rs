use alloc::format;
use alloc::vec::Vec;

use super::layers::{BatchNorm, Builder, ConvLayer, ForwardCtx, Linear};
use super::mixer::patch_embed;
use super::ModelConfig;
use crate::autodiff::{Conv2d, Var};
use crate::error::Result;

#[derive(Clone, Debug)]
struct ConvMixerBlock {
    depthwise: ConvLayer,
    bn1: BatchNorm,
    pointwise: ConvLayer,
    bn2: BatchNorm,
}

/// Patch embedding, then blocks of residual depthwise convolution (spatial
/// mixing) followed by pointwise convolution (channel mixing), each
/// followed by GELU and batch norm.
#[derive(Clone, Debug)]
pub(crate) struct ConvMixer {
    embed: ConvLayer,
    embed_bn: BatchNorm,
    blocks: Vec<ConvMixerBlock>,
    pub head: Linear,
}

impl ConvMixer {
    pub fn build(b: &mut Builder, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.embed_dim;
        let embed = patch_embed(b, cfg)?;
        let embed_bn = b.batch_norm("patch_embed.bn", d)?;
        let blocks = (0..cfg.depth)
            .map(|i| {
                let dw = Conv2d {
                    stride: 1,
                    padding: cfg.kernel_size / 2,
                    groups: d,
                };
                Ok(ConvMixerBlock {
                    depthwise: b.conv(&format!("blocks.{i}.depthwise"), d, d, cfg.kernel_size, dw, true)?,
                    bn1: b.batch_norm(&format!("blocks.{i}.bn1"), d)?,
                    pointwise: b.conv(&format!("blocks.{i}.pointwise"), d, d, 1, Conv2d::default(), true)?,
                    bn2: b.batch_norm(&format!("blocks.{i}.bn2"), d)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            embed,
            embed_bn,
            blocks,
            head: b.linear("head", d, cfg.num_classes)?,
        })
    }

    pub fn features(&self, ctx: &mut ForwardCtx<'_>, x: Var) -> Result<Var> {
        let x = self.embed.forward(ctx, x)?;
        let x = ctx.graph.gelu(x);
        let mut x = self.embed_bn.forward(ctx, x)?;
        for blk in &self.blocks {
            let y = blk.depthwise.forward(ctx, x)?;
            let y = ctx.graph.gelu(y);
            let y = blk.bn1.forward(ctx, y)?;
            x = ctx.graph.add(x, y)?;
            let y = blk.pointwise.forward(ctx, x)?;
            let y = ctx.graph.gelu(y);
            x = blk.bn2.forward(ctx, y)?;
        }
        ctx.graph.global_avg_pool(x)
    }
}
