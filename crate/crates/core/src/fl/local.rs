use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Clock, ExperimentConfig};
use crate::autodiff::Graph;
use crate::data::{ClientShard, MultiLabelDataset};
use crate::error::{data_err, Result};
use crate::model::{Model, ParamKind, ParamSet};
use crate::objectives::{local_objective, Algo, MoonRefs};
use crate::optim::{adam_step, AdamConfig, OptimizerState};
use crate::rng::rng_for;

const SHUFFLE_STREAM: u64 = 0x5_4a11;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientStats {
    pub train_loss: f64,
    pub contrastive_loss: Option<f64>,
    pub wall_seconds: f64,
    pub samples_seen: usize,
    pub steps: usize,
}

/// Visiting order of a shard's `len` positions in one local epoch.
pub fn epoch_order(seed: u64, round: usize, client: usize, epoch: usize, len: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng_for(seed, &[SHUFFLE_STREAM, round as u64, client as u64, epoch as u64]));
    order
}

/// `local_epochs` passes of shuffled mini-batch Adam over one shard,
/// starting from `global` with fresh optimizer state.
///
/// `prev_local` is the client's model from its previous round and is only
/// read by MOON; `None` means the client has not trained yet and the global
/// model stands in for it.
#[allow(clippy::too_many_arguments)]
pub fn local_train(
    model: &Model,
    dataset: &MultiLabelDataset,
    shard: &ClientShard,
    global: &ParamSet,
    prev_local: Option<&ParamSet>,
    config: &ExperimentConfig,
    round: usize,
    clock: &dyn Clock,
) -> Result<(ParamSet, ClientStats)> {
    let m = shard.size();
    if m == 0 {
        return Err(data_err!("client {} has no samples", shard.client_id));
    }
    let start = clock.now_seconds();
    let mut params = global.clone();
    let mut opt = OptimizerState::new(&params, AdamConfig::with_lr(config.lr));
    let batch = config.batch_size.min(m);
    let refs = match config.algo {
        Algo::FedAvg => None,
        Algo::Moon => Some(MoonRefs {
            global,
            prev_local: prev_local.unwrap_or(global),
        }),
    };

    let (mut loss_sum, mut con_sum, mut seen_last) = (0.0, 0.0, 0);
    let (mut samples_seen, mut steps) = (0, 0);
    for epoch in 0..config.local_epochs {
        let order = epoch_order(config.seed, round, shard.client_id, epoch, m);
        let last = epoch + 1 == config.local_epochs;
        for chunk in order.chunks(batch) {
            let idx: Vec<usize> = chunk.iter().map(|&k| shard.indices[k]).collect();
            let (x, y) = dataset.batch(&idx)?;
            let mut graph = Graph::new();
            let vars = model.bind(&mut graph, &params, true)?;
            let obj = local_objective(&mut graph, model, &vars, &x, &y, config.algo, &config.moon, refs)?;
            graph.backward(obj.loss)?;
            let grads: Vec<Option<&[f64]>> = params
                .iter()
                .zip(&vars)
                .map(|(e, &v)| match e.kind {
                    ParamKind::Trainable => graph.grad_data(v),
                    ParamKind::Buffer => None,
                })
                .collect();
            adam_step(&mut opt, &mut params, &grads)?;
            for u in &obj.bn_updates {
                u.apply(&mut params);
            }
            params.round_to(config.precision);

            samples_seen += idx.len();
            steps += 1;
            if last {
                loss_sum += graph.value(obj.loss).data()[0] * idx.len() as f64;
                con_sum += obj.contrastive.unwrap_or(0.0) * idx.len() as f64;
                seen_last += idx.len();
            }
        }
    }
    let seen_last = seen_last as f64;
    let stats = ClientStats {
        train_loss: loss_sum / seen_last,
        contrastive_loss: (config.algo == Algo::Moon).then_some(con_sum / seen_last),
        wall_seconds: clock.now_seconds() - start,
        samples_seen,
        steps,
    };
    Ok((params, stats))
}
