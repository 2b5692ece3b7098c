use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;

use super::*;
use crate::data::{synth_generate, train_test_split, MultiLabelDataset, SynthSpec};
use crate::model::{Arch, ParamKind, ParamSet};
use crate::objectives::ContrastiveForm;
use crate::tensor::Tensor;
use crate::Error;

fn scalar_set(v: f64) -> ParamSet {
    let mut p = ParamSet::new();
    p.push("w", ParamKind::Trainable, Tensor::new(vec![1], vec![v]).unwrap()).unwrap();
    p
}

fn shard(id: usize, n: usize) -> ClientShard {
    ClientShard {
        client_id: id,
        group: None,
        indices: (0..n).collect(),
    }
}

fn small_model(arch: Arch) -> ModelConfig {
    ModelConfig {
        image_size: 8,
        patch_size: 2,
        embed_dim: 8,
        depth: 1,
        token_mlp_dim: 8,
        channel_mlp_dim: 16,
        kernel_size: 3,
        stage_widths: vec![8],
        ..ModelConfig::toy(arch, 4)
    }
}

fn data(seed: u64) -> (MultiLabelDataset, MultiLabelDataset) {
    let spec = SynthSpec {
        groups: 3,
        classes: 4,
        samples_per_group: 12,
        image_size: 8,
        label_alpha: Some(0.5),
        drift_strength: 0.5,
        ..SynthSpec::default()
    };
    let d = synth_generate(&spec, seed).unwrap();
    let (tr, te) = train_test_split(d.len(), 0.25, seed).unwrap();
    (d.subset(&tr).unwrap(), d.subset(&te).unwrap())
}

fn config(arch: Arch, algo: Algo, partition: Partition) -> ExperimentConfig {
    ExperimentConfig {
        rounds: 2,
        local_epochs: 1,
        batch_size: 8,
        lr: 0.01,
        ..ExperimentConfig::new(algo, small_model(arch), partition)
    }
}

#[test]
fn aggregate_reference_values() {
    let out = aggregate(&[scalar_set(0.0), scalar_set(1.0)], &[0.25, 0.75]).unwrap();
    assert_eq!(out.tensor(0).data(), &[0.75]);
    let w = size_weights(&[shard(0, 100), shard(1, 300)]).unwrap();
    assert_eq!(w, vec![0.25, 0.75]);
}

#[test]
fn aggregate_rejects_bad_input() {
    let a = scalar_set(1.0);
    assert!(matches!(aggregate(&[a.clone(), a.clone()], &[0.5, 0.6]), Err(Error::Contract(_))));
    assert!(matches!(aggregate(&[a.clone(), a.clone()], &[1.5, -0.5]), Err(Error::Contract(_))));
    assert!(matches!(aggregate(core::slice::from_ref(&a), &[0.5, 0.5]), Err(Error::Contract(_))));
    assert!(matches!(aggregate(&[], &[]), Err(Error::Contract(_))));
    let mut b = ParamSet::new();
    b.push("v", ParamKind::Trainable, Tensor::new(vec![1], vec![0.0]).unwrap()).unwrap();
    assert!(matches!(aggregate(&[a, b], &[0.5, 0.5]), Err(Error::Contract(_))));
}

#[test]
fn round_bytes_reference() {
    assert_eq!(round_bytes(7, 100_000, crate::Precision::F32), 5_600_000);
    assert_eq!(round_bytes(7, 100_000, crate::Precision::F64), 11_200_000);
}

#[test]
fn config_validation() {
    let base = config(Arch::MlpMixer, Algo::FedAvg, Partition::Ds2);
    assert!(base.validate().is_ok());
    for bad in [
        ExperimentConfig { rounds: 0, ..base.clone() },
        ExperimentConfig { local_epochs: 0, ..base.clone() },
        ExperimentConfig { lr: 0.0, ..base.clone() },
        ExperimentConfig { batch_size: 0, ..base.clone() },
        ExperimentConfig { partition: Partition::Ds1 { clients: 0 }, ..base.clone() },
    ] {
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
}

#[test]
fn local_step_count_and_fixed_point() {
    let (train, _) = data(1);
    let model = crate::model::build_model(&small_model(Arch::PoolFormer), 0).unwrap();
    let s = shard(0, 19);
    let mut cfg = config(Arch::PoolFormer, Algo::FedAvg, Partition::Ds2);
    cfg.local_epochs = 3;
    cfg.batch_size = 5;
    let g = model.initial_params();
    let (p, stats) = local_train(&model, &train, &s, g, None, &cfg, 1, &NullClock).unwrap();
    assert_eq!(stats.steps, 4 * 3);
    assert_eq!(stats.samples_seen, 19 * 3);
    assert_ne!(&p, g);

    cfg.lr = 0.0;
    let (p, _) = local_train(&model, &train, &s, g, None, &cfg, 1, &NullClock).unwrap();
    assert_eq!(&p, g);

    let empty = shard(0, 0);
    assert!(matches!(local_train(&model, &train, &empty, g, None, &cfg, 1, &NullClock), Err(Error::Data(_))));
}

#[test]
fn moon_first_round_contrastive_is_ln2() {
    let (train, _) = data(2);
    let model = crate::model::build_model(&small_model(Arch::MlpMixer), 0).unwrap();
    let mut cfg = config(Arch::MlpMixer, Algo::Moon, Partition::Ds2);
    cfg.lr = 0.0;
    let (_, stats) = local_train(&model, &train, &shard(0, 10), model.initial_params(), None, &cfg, 1, &NullClock).unwrap();
    assert!((stats.contrastive_loss.unwrap() - core::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn single_client_global_is_the_local_model() {
    let (train, test) = data(3);
    let cfg = ExperimentConfig {
        rounds: 1,
        ..config(Arch::ConvMixer, Algo::FedAvg, Partition::Ds1 { clients: 1 })
    };
    let mut exp = Experiment::new(cfg.clone(), &train, &test).unwrap();
    let shard = exp.shards()[0].clone();
    let start = exp.state().global.clone();
    exp.step(&Sequential, &NullClock).unwrap();
    let (local, _) = local_train(exp.model(), &train, &shard, &start, None, &cfg, 1, &NullClock).unwrap();
    assert_eq!(exp.state().global, local);
}

#[test]
fn records_are_consistent_and_deterministic() {
    let (train, test) = data(4);
    for arch in Arch::ALL {
        let cfg = config(arch, Algo::FedAvg, Partition::Ds2);
        let (a, wa) = run_experiment(&cfg, &train, &test, &Sequential, &NullClock).unwrap();
        let (b, wb) = run_experiment(&cfg, &train, &test, &Sequential, &NullClock).unwrap();
        assert_eq!(a, b);
        assert_eq!(wa, wb);
        assert_eq!(a.len(), 2);
        let count = wa.count_params();
        for r in &a {
            assert_eq!(r.shared_params, count);
            assert_eq!(r.bytes, 2 * 3 * count * 8);
            assert!((0.0..=1.0).contains(&r.micro_f1) && (0.0..=1.0).contains(&r.macro_f1));
            assert_eq!(r.clients.len(), 3);
            assert!(r.test_bce.is_finite());
        }
        assert_eq!(a.iter().map(|r| r.round).collect::<Vec<_>>(), vec![1, 2]);
    }
}

#[test]
fn moon_with_zero_weight_tracks_fedavg() {
    let (train, test) = data(5);
    let fed = config(Arch::ResnetS, Algo::FedAvg, Partition::Ds2);
    let mut moon = config(Arch::ResnetS, Algo::Moon, Partition::Ds2);
    moon.moon.mu = 0.0;
    let (_, wf) = run_experiment(&fed, &train, &test, &Sequential, &NullClock).unwrap();
    let (rm, wm) = run_experiment(&moon, &train, &test, &Sequential, &NullClock).unwrap();
    assert_eq!(wf, wm);
    assert!(rm[0].clients.iter().all(|c| c.contrastive_loss.is_some()));
}

#[test]
fn moon_cache_holds_last_local_models() {
    let (train, test) = data(6);
    let mut cfg = config(Arch::MlpMixer, Algo::Moon, Partition::Ds2);
    cfg.moon.form = ContrastiveForm::Literal;
    let mut exp = Experiment::new(cfg.clone(), &train, &test).unwrap();
    assert!(exp.state().prev_local.iter().all(Option::is_none));
    exp.step(&Sequential, &NullClock).unwrap();
    let before = exp.state().clone();
    exp.step(&Sequential, &NullClock).unwrap();
    for (i, s) in exp.shards().iter().enumerate() {
        let (expected, _) = local_train(
            exp.model(),
            &train,
            s,
            &before.global,
            before.prev_local[i].as_ref(),
            &cfg,
            2,
            &NullClock,
        )
        .unwrap();
        assert_eq!(exp.state().prev_local[i].as_ref(), Some(&expected));
    }
}

#[test]
fn evaluation_edge_cases() {
    let (_, test) = data(7);
    let model = crate::model::build_model(&small_model(Arch::MlpMixer), 0).unwrap();
    // zero weights and a head bias of ±40 make the logits constant
    let with_bias = |b: f64| {
        let mut p = model.initial_params().clone();
        for i in 0..p.len() {
            let name = p.entries()[i].name.clone();
            let fill = if name == "head.bias" { b } else if name.starts_with("head") { 0.0 } else { continue };
            p.tensor_mut(i).data_mut().fill(fill);
        }
        p
    };
    let none = evaluate(&model, &with_bias(-40.0), &test, 0.5, 4).unwrap();
    assert_eq!(none.micro_f1, 0.0);
    let all = evaluate(&model, &with_bias(0.0), &test, 0.5, 4).unwrap();
    // σ(0) = 0.5 exactly, which counts as positive: every class predicted
    assert_eq!(all.metrics.per_class.iter().map(|c| c.fn_).sum::<usize>(), 0);
    assert!(all.micro_f1 > 0.0);
    let empty = test.subset(&[]).unwrap();
    assert!(matches!(evaluate(&model, &with_bias(0.0), &empty, 0.5, 4), Err(Error::Data(_))));
}

#[test]
fn config_json_shape_is_serde_friendly() {
    let cfg = config(Arch::PoolFormer, Algo::Moon, Partition::Ds1 { clients: 3 });
    let p = Partition::Precomputed { shards: vec![shard(0, 2)] };
    assert_eq!(p.label(), "precomputed");
    assert_eq!(cfg.partition.label(), "ds1");
}

fn paramsets() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
    (1usize..6, 1usize..8).prop_flat_map(|(k, n)| {
        (
            proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, n), k),
            proptest::collection::vec(0.01f64..1.0, k),
        )
    })
}

fn to_set(v: &[f64]) -> ParamSet {
    let mut p = ParamSet::new();
    p.push("w", ParamKind::Trainable, Tensor::new(vec![v.len()], v.to_vec()).unwrap()).unwrap();
    p
}

proptest! {
    #[test]
    fn aggregate_stays_in_the_hull((values, raw) in paramsets()) {
        let total: f64 = raw.iter().sum();
        let mut w: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let drift: f64 = 1.0 - w.iter().sum::<f64>();
        w[0] += drift;
        let sets: Vec<ParamSet> = values.iter().map(|v| to_set(v)).collect();
        let out = aggregate(&sets, &w).unwrap();
        for (j, &o) in out.tensor(0).data().iter().enumerate() {
            let lo = values.iter().map(|v| v[j]).fold(f64::INFINITY, f64::min);
            let hi = values.iter().map(|v| v[j]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo <= o && o <= hi);
        }
        let same: Vec<ParamSet> = (0..sets.len()).map(|_| sets[0].clone()).collect();
        prop_assert_eq!(aggregate(&same, &w).unwrap(), sets[0].clone());
    }

    #[test]
    fn aggregate_permutation_restores_bits((values, raw) in paramsets(), rot in 0usize..6) {
        let total: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|x| x / total).collect();
        prop_assume!((w.iter().sum::<f64>() - 1.0).abs() <= WEIGHT_SUM_TOLERANCE);
        let k = values.len();
        let perm: Vec<usize> = (0..k).map(|i| (i + rot) % k).collect();
        let sets: Vec<ParamSet> = values.iter().map(|v| to_set(v)).collect();
        let shuffled: Vec<(ParamSet, f64)> = perm.iter().map(|&i| (sets[i].clone(), w[i])).collect();
        let mut restored = shuffled.clone();
        restored.sort_by_key(|(p, _)| sets.iter().position(|s| s == p).unwrap());
        let (ps, ws): (Vec<_>, Vec<_>) = restored.into_iter().unzip();
        prop_assert_eq!(aggregate(&ps, &ws).unwrap(), aggregate(&sets, &w).unwrap());
    }
}
