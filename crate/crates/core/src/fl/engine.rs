use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{
    aggregate, local_train, round_bytes, size_weights, ClientExecutor, ClientRecord, ClientUpdate, Clock,
    ExperimentConfig, Partition, RoundRecord,
};
use crate::data::{partition_ds1, partition_ds2, ClientShard, MultiLabelDataset};
use crate::error::{config_err, data_err, Result};
use crate::math;
use crate::metrics::{f1_scores, MetricsSummary};
use crate::model::{build_model, Model, ParamSet};
use crate::objectives::{bce_value, Algo};
use crate::tensor::Tensor;

/// Server-side state between rounds.
#[derive(Clone, Debug, PartialEq)]
pub struct ServerState {
    pub global: ParamSet,
    /// Number of completed rounds.
    pub round: usize,
    /// Each client's most recent local model (kept for MOON only).
    pub prev_local: Vec<Option<ParamSet>>,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub test_bce: f64,
    pub metrics: MetricsSummary,
}

/// Scores `params` on `test` with eval-mode batch norm, predicting class
/// `c` when `σ(logit_c) ≥ threshold`.
pub fn evaluate(model: &Model, params: &ParamSet, test: &MultiLabelDataset, threshold: f64, chunk: usize) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(data_err!("cannot evaluate on an empty test set"));
    }
    let p = test.num_classes();
    let (mut preds, mut targets) = (Vec::with_capacity(test.len() * p), Vec::with_capacity(test.len() * p));
    let mut bce_sum = 0.0;
    let all: Vec<usize> = (0..test.len()).collect();
    for idx in all.chunks(chunk.max(1)) {
        let (x, y) = test.batch(idx)?;
        let (logits, _) = model.predict(params, &x)?;
        bce_sum += bce_value(&logits, &y)? * idx.len() as f64;
        preds.extend(logits.data().iter().map(|&l| if math::sigmoid(l) >= threshold { 1.0 } else { 0.0 }));
        targets.extend_from_slice(y.data());
    }
    let n = test.len();
    let metrics = f1_scores(&Tensor::new(alloc::vec![n, p], preds)?, &Tensor::new(alloc::vec![n, p], targets)?)?;
    Ok(Evaluation {
        micro_f1: metrics.micro_f1,
        macro_f1: metrics.macro_f1,
        test_bce: bce_sum / n as f64,
        metrics,
    })
}

/// A run in progress. Call [`Experiment::step`] once per round.
pub struct Experiment<'a> {
    config: ExperimentConfig,
    model: Model,
    train: &'a MultiLabelDataset,
    test: &'a MultiLabelDataset,
    shards: Vec<ClientShard>,
    state: ServerState,
}

impl<'a> Experiment<'a> {
    /// Validates the config, partitions `train` and initializes the global
    /// model from the seed.
    pub fn new(config: ExperimentConfig, train: &'a MultiLabelDataset, test: &'a MultiLabelDataset) -> Result<Self> {
        config.validate()?;
        let [c, h, w] = train.image_shape();
        let mc = &config.model;
        if (c, h, w) != (mc.input_channels, mc.image_size, mc.image_size) || train.num_classes() != mc.num_classes {
            return Err(config_err!(
                "model expects {}×{}×{} images with {} classes, data has {c}×{h}×{w} with {}",
                mc.input_channels,
                mc.image_size,
                mc.image_size,
                mc.num_classes,
                train.num_classes()
            ));
        }
        if test.image_shape() != train.image_shape() || test.num_classes() != train.num_classes() {
            return Err(data_err!("train and test sets have different layouts"));
        }
        let shards = match &config.partition {
            Partition::Ds1 { clients } => partition_ds1(train, *clients, config.seed)?,
            Partition::Ds2 => partition_ds2(train)?,
            Partition::Precomputed { shards } => {
                check_shards(shards, train.len())?;
                shards.clone()
            }
        };
        let weights = match &config.weights {
            None => size_weights(&shards)?,
            Some(w) if w.len() == shards.len() => w.clone(),
            Some(w) => return Err(config_err!("{} weights given for {} clients", w.len(), shards.len())),
        };
        let model = build_model(&config.model, config.seed)?;
        let mut global = model.initial_params().clone();
        global.round_to(config.precision);
        let state = ServerState {
            global,
            round: 0,
            prev_local: alloc::vec![None; shards.len()],
            weights,
        };
        Ok(Self {
            config,
            model,
            train,
            test,
            shards,
            state,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn shards(&self) -> &[ClientShard] {
        &self.shards
    }

    pub fn state(&self) -> &ServerState {
        &self.state
    }

    pub fn finished(&self) -> bool {
        self.state.round >= self.config.rounds
    }

    /// One communication round: broadcast, local training on every client,
    /// aggregation, evaluation.
    pub fn step(&mut self, executor: &dyn ClientExecutor, clock: &dyn Clock) -> Result<RoundRecord> {
        let round = self.state.round + 1;
        let (model, train, config, shards, state) = (&self.model, self.train, &self.config, &self.shards, &self.state);
        let job = |i: usize| -> Result<ClientUpdate> {
            let (params, stats) = local_train(
                model,
                train,
                &shards[i],
                &state.global,
                state.prev_local[i].as_ref(),
                config,
                round,
                clock,
            )?;
            Ok(ClientUpdate { params, stats })
        };
        let updates = executor
            .run_clients(shards.len(), &job)
            .into_iter()
            .collect::<Result<Vec<_>>>()?;

        let local: Vec<ParamSet> = updates.iter().map(|u| u.params.clone()).collect();
        let mut global = aggregate(&local, &self.state.weights)?;
        global.round_to(self.config.precision);
        let eval = evaluate(&self.model, &global, self.test, self.config.threshold, self.config.eval_batch)?;

        let clients = updates
            .iter()
            .zip(&self.shards)
            .zip(&self.state.weights)
            .map(|((u, s), &weight)| ClientRecord {
                client_id: s.client_id,
                samples: s.size(),
                weight,
                train_loss: u.stats.train_loss,
                contrastive_loss: u.stats.contrastive_loss,
                wall_seconds: u.stats.wall_seconds,
                samples_seen: u.stats.samples_seen,
                steps: u.stats.steps,
            })
            .collect();
        let shared = global.count_params();
        if self.config.algo == Algo::Moon {
            self.state.prev_local = local.into_iter().map(Some).collect();
        }
        self.state.global = global;
        self.state.round = round;
        Ok(RoundRecord {
            round,
            algo: self.config.algo,
            arch: self.config.model.arch,
            scenario: String::from(self.config.partition.label()),
            seed: self.config.seed,
            clients,
            micro_f1: eval.micro_f1,
            macro_f1: eval.macro_f1,
            test_bce: eval.test_bce,
            shared_params: shared,
            bytes: round_bytes(self.shards.len(), shared, self.config.precision),
        })
    }
}

fn check_shards(shards: &[ClientShard], n: usize) -> Result<()> {
    if shards.is_empty() {
        return Err(config_err!("precomputed partition has no shards"));
    }
    let mut seen = alloc::vec![false; n];
    for s in shards {
        if s.indices.is_empty() {
            return Err(data_err!("client {} has an empty shard", s.client_id));
        }
        for &i in &s.indices {
            match seen.get_mut(i) {
                None => return Err(data_err!("client {} references sample {i} of {n}", s.client_id)),
                Some(true) => return Err(data_err!("sample {i} is assigned to more than one client")),
                Some(flag) => *flag = true,
            }
        }
    }
    Ok(())
}

/// Runs all rounds and returns the round records and the final global model.
pub fn run_experiment(
    config: &ExperimentConfig,
    train: &MultiLabelDataset,
    test: &MultiLabelDataset,
    executor: &dyn ClientExecutor,
    clock: &dyn Clock,
) -> Result<(Vec<RoundRecord>, ParamSet)> {
    let mut exp = Experiment::new(config.clone(), train, test)?;
    let mut records = Vec::with_capacity(config.rounds);
    while !exp.finished() {
        records.push(exp.step(executor, clock)?);
    }
    Ok((records, exp.state.global))
}
