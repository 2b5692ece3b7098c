//! Parameterized layers. Each layer stores indices into the model's
//! [`ParamSet`]; values are bound onto a graph for every forward pass.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::params::{ParamKind, ParamSet};
use crate::autodiff::{BatchStats, Conv2d, Graph, Var};
use crate::error::Result;
use crate::math;
use crate::rng::SimRng;
use crate::tensor::Tensor;

/// Momentum for batch-norm running statistics.
pub const BN_MOMENTUM: f64 = 0.1;

pub(crate) struct Builder {
    pub params: ParamSet,
    rng: SimRng,
}

impl Builder {
    pub fn new(rng: SimRng) -> Self {
        Self {
            params: ParamSet::new(),
            rng,
        }
    }

    /// He-style uniform init, `U(-√(6/fan_in), √(6/fan_in))`.
    fn he_uniform(&mut self, shape: &[usize], fan_in: usize) -> Tensor {
        let bound = math::sqrt(6.0 / fan_in as f64);
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-bound..bound)).collect();
        Tensor::new(shape.to_vec(), data).expect("init shape")
    }

    fn add(&mut self, name: &str, kind: ParamKind, t: Tensor) -> Result<usize> {
        self.params.push(name, kind, t)
    }

    pub fn linear(&mut self, name: &str, inputs: usize, outputs: usize) -> Result<Linear> {
        let w = self.he_uniform(&[inputs, outputs], inputs);
        Ok(Linear {
            weight: self.add(&format!("{name}.weight"), ParamKind::Trainable, w)?,
            bias: self.add(&format!("{name}.bias"), ParamKind::Trainable, Tensor::zeros(&[outputs]))?,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        &mut self,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        spec: Conv2d,
        bias: bool,
    ) -> Result<ConvLayer> {
        let per_group = in_channels / spec.groups;
        let w = self.he_uniform(&[out_channels, per_group, kernel, kernel], per_group * kernel * kernel);
        let weight = self.add(&format!("{name}.weight"), ParamKind::Trainable, w)?;
        let bias = if bias {
            Some(self.add(
                &format!("{name}.bias"),
                ParamKind::Trainable,
                Tensor::zeros(&[out_channels]),
            )?)
        } else {
            None
        };
        Ok(ConvLayer { weight, bias, spec })
    }

    pub fn layer_norm(&mut self, name: &str, dim: usize) -> Result<LayerNorm> {
        Ok(LayerNorm {
            gamma: self.add(&format!("{name}.weight"), ParamKind::Trainable, Tensor::full(&[dim], 1.0))?,
            beta: self.add(&format!("{name}.bias"), ParamKind::Trainable, Tensor::zeros(&[dim]))?,
        })
    }

    pub fn batch_norm(&mut self, name: &str, channels: usize) -> Result<BatchNorm> {
        Ok(BatchNorm {
            gamma: self.add(&format!("{name}.weight"), ParamKind::Trainable, Tensor::full(&[channels], 1.0))?,
            beta: self.add(&format!("{name}.bias"), ParamKind::Trainable, Tensor::zeros(&[channels]))?,
            running_mean: self.add(
                &format!("{name}.running_mean"),
                ParamKind::Buffer,
                Tensor::zeros(&[channels]),
            )?,
            running_var: self.add(
                &format!("{name}.running_var"),
                ParamKind::Buffer,
                Tensor::full(&[channels], 1.0),
            )?,
        })
    }
}

/// Running-statistic update produced by a training-mode batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct BnUpdate {
    pub running_mean: usize,
    pub running_var: usize,
    pub stats: BatchStats,
}

impl BnUpdate {
    /// `running ← (1 − momentum)·running + momentum·batch`.
    pub fn apply(&self, params: &mut ParamSet) {
        let blend = |dst: &mut Tensor, src: &[f64]| {
            for (r, &b) in dst.data_mut().iter_mut().zip(src) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
            }
        };
        blend(params.tensor_mut(self.running_mean), &self.stats.mean);
        blend(params.tensor_mut(self.running_var), &self.stats.var);
    }
}

/// State threaded through one forward pass.
pub struct ForwardCtx<'g> {
    pub graph: &'g mut Graph,
    params: &'g [Var],
    training: bool,
    pub(crate) bn_updates: Vec<BnUpdate>,
}

impl<'g> ForwardCtx<'g> {
    pub fn new(graph: &'g mut Graph, params: &'g [Var], training: bool) -> Self {
        Self {
            graph,
            params,
            training,
            bn_updates: Vec::new(),
        }
    }

    fn p(&self, index: usize) -> Var {
        self.params[index]
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Linear {
    weight: usize,
    bias: usize,
}

impl Linear {
    /// Applies the layer along the last axis of `x`.
    pub fn forward(&self, ctx: &mut ForwardCtx<'_>, x: Var) -> Result<Var> {
        let shape = ctx.graph.shape(x).to_vec();
        let inputs = *shape.last().unwrap_or(&0);
        let rows = shape.iter().product::<usize>() / inputs.max(1);
        let flat = ctx.graph.reshape(x, &[rows, inputs])?;
        let y = ctx.graph.matmul(flat, ctx.p(self.weight))?;
        let y = ctx.graph.add_bias(y, ctx.p(self.bias), 1)?;
        let outputs = ctx.graph.shape(y)[1];
        let mut out_shape = shape;
        *out_shape.last_mut().expect("rank ≥ 1") = outputs;
        ctx.graph.reshape(y, &out_shape)
    }
}

/// `Linear → GELU → Linear` along the last axis.
#[derive(Clone, Debug)]
pub(crate) struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new(b: &mut Builder, name: &str, dim: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            fc1: b.linear(&format!("{name}.fc1"), dim, hidden)?,
            fc2: b.linear(&format!("{name}.fc2"), hidden, dim)?,
        })
    }

    pub fn forward(&self, ctx: &mut ForwardCtx<'_>, x: Var) -> Result<Var> {
        let h = self.fc1.forward(ctx, x)?;
        let h = ctx.graph.gelu(h);
        self.fc2.forward(ctx, h)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct ConvLayer {
    weight: usize,
    bias: Option<usize>,
    spec: Conv2d,
}

impl ConvLayer {
    pub fn forward(&self, ctx: &mut ForwardCtx<'_>, x: Var) -> Result<Var> {
        let y = ctx.graph.conv2d(x, ctx.p(self.weight), self.spec)?;
        match self.bias {
            Some(b) => ctx.graph.add_bias(y, ctx.p(b), 1),
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct LayerNorm {
    gamma: usize,
    beta: usize,
}

impl LayerNorm {
    pub fn forward(&self, ctx: &mut ForwardCtx<'_>, x: Var) -> Result<Var> {
        ctx.graph.layer_norm(x, ctx.p(self.gamma), ctx.p(self.beta))
    }
}

#[derive(Clone, Debug)]
pub(crate) struct BatchNorm {
    gamma: usize,
    beta: usize,
    running_mean: usize,
    running_var: usize,
}

impl BatchNorm {
    pub fn forward(&self, ctx: &mut ForwardCtx<'_>, x: Var) -> Result<Var> {
        let mean = ctx.graph.value(ctx.p(self.running_mean)).data().to_vec();
        let var = ctx.graph.value(ctx.p(self.running_var)).data().to_vec();
        let (gamma, beta, training) = (ctx.p(self.gamma), ctx.p(self.beta), ctx.training);
        let (y, stats) = ctx.graph.batch_norm(x, gamma, beta, (&mean, &var), training)?;
        if let Some(stats) = stats {
            ctx.bn_updates.push(BnUpdate {
                running_mean: self.running_mean,
                running_var: self.running_var,
                stats,
            });
        }
        Ok(y)
    }
}
