use alloc::format;
use alloc::vec::Vec;

use super::layers::{BatchNorm, Builder, ConvLayer, ForwardCtx, Linear};
use super::ModelConfig;
use crate::autodiff::{Conv2d, Var};
use crate::error::Result;

#[derive(Clone, Debug)]
struct BasicBlock {
    conv1: ConvLayer,
    bn1: BatchNorm,
    conv2: ConvLayer,
    bn2: BatchNorm,
    shortcut: Option<(ConvLayer, BatchNorm)>,
}

/// Small residual CNN: strided 3×3 stem, then one basic block per entry of
/// `stage_widths`. A block downsamples by 2 whenever its width grows and the
/// feature map is still larger than 1×1.
#[derive(Clone, Debug)]
pub(crate) struct ResnetS {
    stem: ConvLayer,
    stem_bn: BatchNorm,
    blocks: Vec<BasicBlock>,
    pub head: Linear,
}

fn conv3(stride: usize) -> Conv2d {
    Conv2d {
        stride,
        padding: 1,
        groups: 1,
    }
}

impl ResnetS {
    pub fn build(b: &mut Builder, cfg: &ModelConfig) -> Result<Self> {
        let first = cfg.stage_widths[0];
        let stem = b.conv("stem", cfg.input_channels, first, 3, conv3(cfg.patch_size), false)?;
        let stem_bn = b.batch_norm("stem.bn", first)?;
        let mut spatial = cfg.image_size / cfg.patch_size;
        let mut width = first;
        let mut blocks = Vec::with_capacity(cfg.stage_widths.len());
        for (i, &out) in cfg.stage_widths.iter().enumerate() {
            let stride = if out != width && spatial > 1 { 2 } else { 1 };
            let name = format!("blocks.{i}");
            let shortcut = if stride != 1 || out != width {
                let spec = Conv2d {
                    stride,
                    padding: 0,
                    groups: 1,
                };
                Some((
                    b.conv(&format!("{name}.shortcut"), width, out, 1, spec, false)?,
                    b.batch_norm(&format!("{name}.shortcut.bn"), out)?,
                ))
            } else {
                None
            };
            blocks.push(BasicBlock {
                conv1: b.conv(&format!("{name}.conv1"), width, out, 3, conv3(stride), false)?,
                bn1: b.batch_norm(&format!("{name}.bn1"), out)?,
                conv2: b.conv(&format!("{name}.conv2"), out, out, 3, conv3(1), false)?,
                bn2: b.batch_norm(&format!("{name}.bn2"), out)?,
                shortcut,
            });
            spatial = spatial.div_ceil(stride);
            width = out;
        }
        Ok(Self {
            stem,
            stem_bn,
            blocks,
            head: b.linear("head", width, cfg.num_classes)?,
        })
    }

    pub fn features(&self, ctx: &mut ForwardCtx<'_>, x: Var) -> Result<Var> {
        let x = self.stem.forward(ctx, x)?;
        let x = self.stem_bn.forward(ctx, x)?;
        let mut x = ctx.graph.relu(x);
        for blk in &self.blocks {
            let y = blk.conv1.forward(ctx, x)?;
            let y = blk.bn1.forward(ctx, y)?;
            let y = ctx.graph.relu(y);
            let y = blk.conv2.forward(ctx, y)?;
            let y = blk.bn2.forward(ctx, y)?;
            let skip = match &blk.shortcut {
                Some((conv, bn)) => {
                    let s = conv.forward(ctx, x)?;
                    bn.forward(ctx, s)?
                }
                None => x,
            };
            let sum = ctx.graph.add(y, skip)?;
            x = ctx.graph.relu(sum);
        }
        ctx.graph.global_avg_pool(x)
    }
}
