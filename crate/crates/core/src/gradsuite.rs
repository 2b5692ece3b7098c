//! The full finite-difference gradient suite: every graph primitive, both
//! fused losses, and every architecture end to end with its training loss.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{check_gradients, check_gradients_with, Conv2d, Graph, Pool2d, Var};
use crate::error::Result;
use crate::model::{build_model, Arch, Mode, ModelConfig, ParamKind};
use crate::objectives::{bce_loss, moon_contrastive_loss, ContrastiveForm, MoonConfig};
use crate::rng::rng_for;
use crate::tensor::Tensor;

pub const PRIMITIVE_TOLERANCE: f64 = 1e-5;
pub const MODEL_TOLERANCE: f64 = 1e-4;
pub const SUITE_SEEDS: [u64; 3] = [1, 2, 3];

type Op = fn(&mut Graph, &[Var]) -> Result<Var>;

/// One primitive check: input shapes and the op under test.
pub struct Primitive {
    pub name: &'static str,
    pub shapes: Vec<Vec<usize>>,
    pub op: Op,
}

fn prim(name: &'static str, shapes: &[&[usize]], op: Op) -> Primitive {
    Primitive {
        name,
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
        op,
    }
}

fn fixed_targets() -> Tensor {
    Tensor::new(vec![2, 3], vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).expect("2×3")
}

fn fixed_refs() -> (Tensor, Tensor) {
    let prev = Tensor::new(vec![2, 3], vec![0.3, -0.8, 0.5, 1.1, 0.2, -0.4]).expect("2×3");
    let glob = Tensor::new(vec![2, 3], vec![-0.6, 0.4, 0.9, 0.7, -1.0, 0.3]).expect("2×3");
    (prev, glob)
}

pub fn primitives() -> Vec<Primitive> {
    vec![
        prim("add", &[&[2, 3], &[2, 3]], |g, v| g.add(v[0], v[1])),
        prim("sub", &[&[2, 3], &[2, 3]], |g, v| g.sub(v[0], v[1])),
        prim("mul", &[&[2, 3], &[2, 3]], |g, v| g.mul(v[0], v[1])),
        prim("scale", &[&[5]], |g, v| Ok(g.scale(v[0], -1.7))),
        prim("add_bias", &[&[2, 3, 4], &[3]], |g, v| g.add_bias(v[0], v[1], 1)),
        prim("matmul", &[&[3, 4], &[4, 2]], |g, v| g.matmul(v[0], v[1])),
        prim("conv2d", &[&[2, 3, 5, 5], &[4, 3, 3, 3]], |g, v| {
            g.conv2d(v[0], v[1], Conv2d { stride: 1, padding: 1, groups: 1 })
        }),
        prim("conv2d_depthwise", &[&[2, 2, 5, 5], &[2, 1, 3, 3]], |g, v| {
            g.conv2d(v[0], v[1], Conv2d { stride: 1, padding: 1, groups: 2 })
        }),
        prim("conv2d_grouped_strided", &[&[2, 4, 6, 6], &[6, 2, 3, 3]], |g, v| {
            g.conv2d(v[0], v[1], Conv2d { stride: 2, padding: 1, groups: 2 })
        }),
        prim("conv2d_pointwise", &[&[2, 3, 4, 4], &[5, 3, 1, 1]], |g, v| {
            g.conv2d(v[0], v[1], Conv2d::default())
        }),
        prim("avg_pool2d", &[&[2, 2, 5, 5]], |g, v| {
            g.avg_pool2d(v[0], Pool2d { kernel: 3, stride: 1, padding: 1 })
        }),
        prim("avg_pool2d_strided", &[&[1, 2, 6, 6]], |g, v| {
            g.avg_pool2d(v[0], Pool2d { kernel: 2, stride: 2, padding: 0 })
        }),
        prim("global_avg_pool", &[&[2, 3, 3, 3]], |g, v| g.global_avg_pool(v[0])),
        prim("layer_norm", &[&[2, 3, 5], &[5], &[5]], |g, v| g.layer_norm(v[0], v[1], v[2])),
        prim("batch_norm_train", &[&[3, 2, 2, 2], &[2], &[2]], |g, v| {
            Ok(g.batch_norm(v[0], v[1], v[2], (&[0.0; 2], &[1.0; 2]), true)?.0)
        }),
        prim("batch_norm_eval", &[&[3, 2, 2, 2], &[2], &[2]], |g, v| {
            Ok(g.batch_norm(v[0], v[1], v[2], (&[0.1, -0.2], &[0.5, 2.0]), false)?.0)
        }),
        prim("gelu", &[&[3, 4]], |g, v| Ok(g.gelu(v[0]))),
        prim("sigmoid", &[&[3, 4]], |g, v| Ok(g.sigmoid(v[0]))),
        prim("relu", &[&[3, 4]], |g, v| Ok(g.relu(v[0]))),
        prim("reshape", &[&[2, 6]], |g, v| g.reshape(v[0], &[3, 4])),
        prim("permute", &[&[2, 3, 4]], |g, v| g.permute(v[0], &[2, 0, 1])),
        prim("transpose", &[&[2, 3, 4]], |g, v| g.transpose(v[0])),
        prim("sum", &[&[2, 3]], |g, v| Ok(g.sum(v[0]))),
        prim("mean", &[&[2, 3]], |g, v| Ok(g.mean(v[0]))),
        prim("mean_axis", &[&[2, 3, 4]], |g, v| g.mean_axis(v[0], 1)),
        prim("bce_loss", &[&[2, 3]], |g, v| bce_loss(g, v[0], &fixed_targets())),
        prim("moon_contrastive_log", &[&[2, 3]], |g, v| {
            let (prev, glob) = fixed_refs();
            moon_contrastive_loss(g, v[0], &prev, &glob, &MoonConfig::default())
        }),
        prim("moon_contrastive_literal", &[&[2, 3]], |g, v| {
            let (prev, glob) = fixed_refs();
            let cfg = MoonConfig {
                form: ContrastiveForm::Literal,
                ..MoonConfig::default()
            };
            moon_contrastive_loss(g, v[0], &prev, &glob, &cfg)
        }),
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseKind {
    Primitive,
    Model,
}

/// Worst relative error of one case over all seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub name: String,
    pub kind: CaseKind,
    pub worst: f64,
    pub tolerance: f64,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.worst < self.tolerance
    }
}

/// Small configuration for end-to-end checks: every layer type is present
/// but finite differences over all parameters stay cheap.
pub fn gradcheck_model_config(arch: Arch) -> ModelConfig {
    ModelConfig {
        input_channels: 2,
        image_size: 8,
        patch_size: 2,
        embed_dim: 8,
        depth: 2,
        token_mlp_dim: 6,
        channel_mlp_dim: 12,
        kernel_size: 3,
        stage_widths: vec![4, 8],
        ..ModelConfig::toy(arch, 3)
    }
}

/// Relative error of the gradient of the training loss (BCE, plus the
/// contrastive term when `moon` is given) with respect to every trainable
/// parameter of `arch`.
pub fn check_model(arch: Arch, moon: Option<MoonConfig>, seed: u64) -> Result<f64> {
    let cfg = gradcheck_model_config(arch);
    let model = build_model(&cfg, seed)?;
    let mut rng = rng_for(seed, &[0xba7c4]);
    let n = 2;
    let pixels = n * cfg.input_channels * cfg.image_size * cfg.image_size;
    let images = Tensor::new(
        vec![n, cfg.input_channels, cfg.image_size, cfg.image_size],
        (0..pixels).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?;
    let targets = Tensor::new(vec![n, 3], vec![1.0, 0.0, 1.0, 0.0, 1.0, 1.0])?;
    let refs = match moon {
        Some(_) => {
            let reference = |offset: u64| -> Result<Tensor> {
                let m = build_model(&cfg, seed + offset)?;
                Ok(m.predict(m.initial_params(), &images)?.1)
            };
            let (z_glob, z_prev) = (reference(100)?, reference(200)?);
            Some((z_prev, z_glob))
        }
        None => None,
    };
    let params = model.initial_params().clone();
    let trainable: Vec<Tensor> = params
        .iter()
        .filter(|e| e.kind == ParamKind::Trainable)
        .map(|e| e.tensor.clone())
        .collect();
    check_gradients_with(
        |g, vars| {
            let mut it = vars.iter();
            let bound: Vec<Var> = params
                .iter()
                .map(|e| match e.kind {
                    ParamKind::Trainable => *it.next().expect("one var per trainable entry"),
                    ParamKind::Buffer => g.constant(e.tensor.clone()),
                })
                .collect();
            let x = g.constant(images.clone());
            let out = model.forward(g, &bound, x, Mode::Train)?;
            let bce = bce_loss(g, out.logits, &targets)?;
            match (&moon, &refs) {
                (Some(m), Some((z_prev, z_glob))) => {
                    let con = moon_contrastive_loss(g, out.z, z_prev, z_glob, m)?;
                    let con = g.scale(con, m.mu);
                    g.add(bce, con)
                }
                _ => Ok(bce),
            }
        },
        trainable,
        seed,
    )
}

/// Runs every case over `seeds`, keeping the worst error per case.
pub fn run_gradient_suite(seeds: &[u64]) -> Result<Vec<CaseResult>> {
    let mut out = Vec::new();
    for p in primitives() {
        let shapes: Vec<&[usize]> = p.shapes.iter().map(Vec::as_slice).collect();
        let mut worst: f64 = 0.0;
        for &seed in seeds {
            worst = worst.max(check_gradients(p.op, &shapes, seed)?);
        }
        out.push(CaseResult {
            name: p.name.to_string(),
            kind: CaseKind::Primitive,
            worst,
            tolerance: PRIMITIVE_TOLERANCE,
        });
    }
    for arch in Arch::ALL {
        for (suffix, moon) in [("bce", None), ("bce+moon", Some(MoonConfig::default()))] {
            let mut worst: f64 = 0.0;
            for &seed in seeds {
                worst = worst.max(check_model(arch, moon, seed)?);
            }
            out.push(CaseResult {
                name: alloc::format!("{}/{suffix}", arch.name()),
                kind: CaseKind::Model,
                worst,
                tolerance: MODEL_TOLERANCE,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_primitive_passes() {
        for p in primitives() {
            let shapes: Vec<&[usize]> = p.shapes.iter().map(Vec::as_slice).collect();
            for seed in SUITE_SEEDS {
                let err = check_gradients(p.op, &shapes, seed).unwrap();
                assert!(err < PRIMITIVE_TOLERANCE, "{} seed {seed}: {err:e}", p.name);
            }
        }
    }

    #[test]
    fn a_broken_gradient_is_caught() {
        // d/dx of x ⊙ stop(x) would be x, not 2x: feed the same input as a
        // constant on one side and the check must fail.
        let err = check_gradients(
            |g, v| {
                let c = g.constant(g.value(v[0]).clone());
                g.mul(v[0], c)
            },
            &[&[4]],
            1,
        )
        .unwrap();
        assert!(err > 0.1);
    }
}
