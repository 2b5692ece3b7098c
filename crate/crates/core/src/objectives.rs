//! Training objectives: multi-label BCE on logits, the model-contrastive
//! term, and their combination into a client's local objective.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{config_err, contract_err, dim_err, Result};
use crate::math;
use crate::model::{BnUpdate, Mode, Model, ParamSet};
use crate::tensor::Tensor;

/// Probabilities are clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]`, so a single
/// class term never exceeds `−ln(PROB_CLAMP)`.
pub const PROB_CLAMP: f64 = 1e-7;

/// Largest per-class BCE term, `−ln(1e-7)`.
pub fn max_class_loss() -> f64 {
    -math::log(PROB_CLAMP)
}

/// Checks that `targets` is binary, matches `logits_shape`, and that every
/// row has at least one positive label.
pub fn validate_targets(logits_shape: &[usize], targets: &Tensor) -> Result<()> {
    if logits_shape.len() != 2 || targets.shape() != logits_shape {
        return Err(dim_err!(
            "bce: logits {:?} and targets {:?} must both be N×P",
            logits_shape,
            targets.shape()
        ));
    }
    let p = logits_shape[1];
    for (i, row) in targets.data().chunks(p.max(1)).enumerate() {
        if let Some(v) = row.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(contract_err!("bce: target row {i} has non-binary value {v}"));
        }
        if !row.contains(&1.0) {
            return Err(contract_err!("bce: target row {i} has no positive label"));
        }
    }
    Ok(())
}

/// Per-element loss and its derivative with respect to the logit.
fn bce_term(logit: f64, y: f64) -> (f64, f64) {
    // −[y ln σ(x) + (1−y) ln(1−σ(x))] = softplus(x) − x·y
    let loss = math::softplus(logit) - logit * y;
    let cap = max_class_loss();
    if loss >= cap {
        (cap, 0.0)
    } else {
        (loss, math::sigmoid(logit) - y)
    }
}

/// Multi-label binary cross-entropy on logits: summed over classes,
/// averaged over the batch.
pub fn bce_loss(graph: &mut Graph, logits: Var, targets: &Tensor) -> Result<Var> {
    let (value, grad) = bce_with_grad(graph.value(logits), targets)?;
    Ok(graph.fused_scalar(logits, value, grad))
}

/// Value-only form of [`bce_loss`].
pub fn bce_value(logits: &Tensor, targets: &Tensor) -> Result<f64> {
    Ok(bce_with_grad(logits, targets)?.0)
}

fn bce_with_grad(logits: &Tensor, targets: &Tensor) -> Result<(f64, Vec<f64>)> {
    validate_targets(logits.shape(), targets)?;
    let n = logits.shape()[0] as f64;
    let mut total = 0.0;
    let mut grad = vec![0.0; logits.numel()];
    for ((g, &x), &y) in grad.iter_mut().zip(logits.data()).zip(targets.data()) {
        let (l, d) = bce_term(x, y);
        total += l;
        *g = d / n;
    }
    Ok((total / n, grad))
}

fn norm(v: &[f64]) -> f64 {
    math::sqrt(v.iter().map(|x| x * x).sum())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `a·b / (‖a‖‖b‖)`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(dim_err!("cosine_similarity: lengths {} and {}", a.len(), b.len()));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(contract_err!("cosine_similarity of a zero vector"));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// How the contrastive ratio is turned into a loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastiveForm {
    /// `−log(e^{s₁} / (e^{s₁} + e^{s₂}))`, the usual contrastive loss.
    #[default]
    Log,
    /// `−e^{s₁} / (e^{s₁} + e^{s₂})` without the logarithm.
    Literal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MoonConfig {
    /// Temperature dividing the cosine similarities.
    pub tau: f64,
    /// Weight of the contrastive term in the local objective.
    pub mu: f64,
    pub form: ContrastiveForm,
}

impl Default for MoonConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            mu: 1.0,
            form: ContrastiveForm::Log,
        }
    }
}

impl MoonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(config_err!("moon tau must be positive, got {}", self.tau));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(config_err!("moon mu must be non-negative, got {}", self.mu));
        }
        Ok(())
    }
}

/// Contrastive value for one representation triple and `∂/∂z_new`.
fn contrastive_row(z_new: &[f64], z_prev: &[f64], z_glob: &[f64], cfg: &MoonConfig) -> Result<(f64, Vec<f64>)> {
    let c1 = cosine_similarity(z_new, z_glob)?;
    let c2 = cosine_similarity(z_prev, z_glob)?;
    let (s1, s2) = (c1 / cfg.tau, c2 / cfg.tau);
    // Both forms go through σ(s₁ − s₂) = e^{s₁}/(e^{s₁}+e^{s₂}), evaluated
    // without forming either exponential.
    let (value, d_s1) = match cfg.form {
        ContrastiveForm::Log => (math::softplus(s2 - s1), -math::sigmoid(s2 - s1)),
        ContrastiveForm::Literal => {
            let p = math::sigmoid(s1 - s2);
            (-p, -p * (1.0 - p))
        }
    };
    // ∂c₁/∂a = g/(‖a‖‖g‖) − c₁·a/‖a‖²
    let (na, ng) = (norm(z_new), norm(z_glob));
    let scale = d_s1 / cfg.tau;
    let grad = z_new
        .iter()
        .zip(z_glob)
        .map(|(&a, &g)| scale * (g / (na * ng) - c1 * a / (na * na)))
        .collect();
    Ok((value, grad))
}

/// The model-contrastive term for one sample: pulls `z_new` towards the
/// global representation `z_glob` and away from the previous local one.
pub fn moon_contrastive(z_new: &[f64], z_prev: &[f64], z_glob: &[f64], cfg: &MoonConfig) -> Result<f64> {
    cfg.validate()?;
    Ok(contrastive_row(z_new, z_prev, z_glob, cfg)?.0)
}

/// Batch mean of [`moon_contrastive`] over the rows of `N×D`
/// representations, differentiable through `z_new`.
pub fn moon_contrastive_loss(
    graph: &mut Graph,
    z_new: Var,
    z_prev: &Tensor,
    z_glob: &Tensor,
    cfg: &MoonConfig,
) -> Result<Var> {
    cfg.validate()?;
    let zn = graph.value(z_new);
    if zn.rank() != 2 || zn.shape() != z_prev.shape() || zn.shape() != z_glob.shape() {
        return Err(dim_err!(
            "moon: representations {:?}, {:?}, {:?} must share one N×D shape",
            zn.shape(),
            z_prev.shape(),
            z_glob.shape()
        ));
    }
    let n = zn.shape()[0];
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(zn.numel());
    for i in 0..n {
        let (v, g) = contrastive_row(zn.row(i), z_prev.row(i), z_glob.row(i), cfg)?;
        total += v;
        grad.extend(g.into_iter().map(|x| x / n as f64));
    }
    Ok(graph.fused_scalar(z_new, total / n as f64, grad))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    FedAvg,
    Moon,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::FedAvg => "fedavg",
            Algo::Moon => "moon",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Algo::FedAvg => "FedAvg",
            Algo::Moon => "MOON",
        }
    }
}

/// Reference models for the contrastive term.
#[derive(Clone, Copy, Debug)]
pub struct MoonRefs<'a> {
    pub global: &'a ParamSet,
    pub prev_local: &'a ParamSet,
}

/// A recorded local objective.
pub struct Objective {
    /// Scalar to differentiate.
    pub loss: Var,
    pub bce: f64,
    /// Contrastive term (before weighting by `mu`), MOON only.
    pub contrastive: Option<f64>,
    pub bn_updates: Vec<BnUpdate>,
}

/// Client objective for one mini-batch.
///
/// FedAvg uses BCE alone. MOON adds `mu` times the batch-mean contrastive
/// term, with representations of the global and previous local models taken
/// in eval mode without gradient tracking. With `mu = 0` the contrastive
/// value is still reported but contributes nothing to the graph.
#[allow(clippy::too_many_arguments)]
pub fn local_objective(
    graph: &mut Graph,
    model: &Model,
    params: &[Var],
    images: &Tensor,
    targets: &Tensor,
    algo: Algo,
    moon: &MoonConfig,
    refs: Option<MoonRefs<'_>>,
) -> Result<Objective> {
    let x = graph.constant(images.clone());
    let out = model.forward(graph, params, x, Mode::Train)?;
    let bce = bce_loss(graph, out.logits, targets)?;
    let bce_v = graph.value(bce).data()[0];
    match algo {
        Algo::FedAvg => Ok(Objective {
            loss: bce,
            bce: bce_v,
            contrastive: None,
            bn_updates: out.bn_updates,
        }),
        Algo::Moon => {
            let refs = refs.ok_or_else(|| contract_err!("moon objective needs reference models"))?;
            let template = model.initial_params();
            template.ensure_same_structure(refs.global, "moon global model")?;
            template.ensure_same_structure(refs.prev_local, "moon previous local model")?;
            let (_, z_glob) = model.predict(refs.global, images)?;
            let (_, z_prev) = model.predict(refs.prev_local, images)?;
            let con = moon_contrastive_loss(graph, out.z, &z_prev, &z_glob, moon)?;
            let con_v = graph.value(con).data()[0];
            let loss = if moon.mu == 0.0 {
                bce
            } else {
                let weighted = graph.scale(con, moon.mu);
                graph.add(bce, weighted)?
            };
            Ok(Objective {
                loss,
                bce: bce_v,
                contrastive: Some(con_v),
                bn_updates: out.bn_updates,
            })
        }
    }
}
