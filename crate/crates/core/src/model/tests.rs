use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};

use super::*;
use crate::autodiff::check_gradients_with;
use crate::Error;

fn small(arch: Arch, classes: usize) -> ModelConfig {
    ModelConfig {
        image_size: 8,
        patch_size: 2,
        embed_dim: 8,
        depth: 2,
        token_mlp_dim: 6,
        channel_mlp_dim: 12,
        kernel_size: 3,
        stage_widths: vec![4, 8],
        ..ModelConfig::toy(arch, classes)
    }
}

fn random_batch(n: usize, cfg: &ModelConfig, seed: u64) -> Tensor {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let shape = [n, cfg.input_channels, cfg.image_size, cfg.image_size];
    let len = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn toy_presets_are_desk_scale() {
    for arch in Arch::ALL {
        let m = build_model(&ModelConfig::toy(arch, 6), 0).unwrap();
        let n = m.initial_params().count_params();
        assert!((50_000..=200_000).contains(&n), "{arch}: {n} params");
    }
}

#[test]
fn pool_former_token_mixer_has_no_parameters() {
    for depth in [1, 3] {
        let mixer = ModelConfig {
            depth,
            ..small(Arch::MlpMixer, 5)
        };
        let pool = ModelConfig {
            arch: Arch::PoolFormer,
            ..mixer.clone()
        };
        let pm = build_model(&mixer, 1).unwrap().initial_params().count_params();
        let pp = build_model(&pool, 1).unwrap().initial_params().count_params();
        // token MLP: S→T→S with biases, once per block
        let (s, t) = (mixer.num_tokens(), mixer.token_mlp_dim);
        assert_eq!(pm - pp, depth * (s * t + t + t * s + s));
        let pool_model = build_model(&pool, 1).unwrap();
        assert!(pool_model.initial_params().iter().all(|e| !e.name.contains("token")));
    }
}

#[test]
fn same_seed_same_params() {
    for arch in Arch::ALL {
        let cfg = small(arch, 3);
        let a = build_model(&cfg, 42).unwrap();
        let b = build_model(&cfg, 42).unwrap();
        assert_eq!(a.initial_params(), b.initial_params());
        let c = build_model(&cfg, 43).unwrap();
        assert!(a.initial_params().same_structure(c.initial_params()));
        assert_ne!(a.initial_params().flatten(), c.initial_params().flatten());
        assert_eq!(a.initial_params().flatten().len(), c.initial_params().flatten().len());
    }
}

#[test]
fn config_errors() {
    let bad_patch = ModelConfig {
        image_size: 32,
        patch_size: 5,
        ..ModelConfig::toy(Arch::MlpMixer, 19)
    };
    assert!(matches!(build_model(&bad_patch, 0), Err(Error::Config(_))));
    let zero_depth = ModelConfig {
        depth: 0,
        ..ModelConfig::toy(Arch::PoolFormer, 19)
    };
    assert!(matches!(build_model(&zero_depth, 0), Err(Error::Config(_))));
    let no_classes = ModelConfig::toy(Arch::ConvMixer, 0);
    assert!(matches!(build_model(&no_classes, 0), Err(Error::Config(_))));
    let even_pool = ModelConfig {
        pool_size: 2,
        ..ModelConfig::toy(Arch::PoolFormer, 3)
    };
    assert!(build_model(&even_pool, 0).is_err());
}

#[test]
fn unknown_arch_name_is_rejected() {
    assert!(Arch::parse("vit").is_none());
    assert_eq!(Arch::parse("pool_former"), Some(Arch::PoolFormer));
}

#[test]
fn logits_shape_for_19_classes() {
    for arch in Arch::ALL {
        let cfg = small(arch, 19);
        let m = build_model(&cfg, 0).unwrap();
        for n in [1, 3] {
            let (logits, z) = m.predict(m.initial_params(), &random_batch(n, &cfg, 5)).unwrap();
            assert_eq!(logits.shape(), &[n, 19]);
            assert_eq!(z.shape(), &[n, cfg.repr_dim()]);
            assert!(logits.all_finite() && z.all_finite());
        }
    }
}

#[test]
fn wrong_input_shape_is_a_dimension_error() {
    let cfg = small(Arch::ConvMixer, 2);
    let m = build_model(&cfg, 0).unwrap();
    let bad = Tensor::zeros(&[1, 3, 6, 6]);
    assert!(matches!(m.predict(m.initial_params(), &bad), Err(Error::Dimension(_))));
}

#[test]
fn eval_mode_is_batch_independent_and_permutation_equivariant() {
    for arch in Arch::ALL {
        let cfg = small(arch, 4);
        let m = build_model(&cfg, 9).unwrap();
        let batch = random_batch(4, &cfg, 17);
        let sample = Tensor::new(
            vec![1, cfg.input_channels, cfg.image_size, cfg.image_size],
            batch.row(0).to_vec(),
        )
        .unwrap();
        let (full, _) = m.predict(m.initial_params(), &batch).unwrap();
        let (one, _) = m.predict(m.initial_params(), &sample).unwrap();
        assert_eq!(full.row(0), one.row(0), "{arch}");

        let perm = [2usize, 0, 3, 1];
        let data: Vec<f64> = perm.iter().flat_map(|&i| batch.row(i).iter().copied()).collect();
        let shuffled = Tensor::new(batch.shape().to_vec(), data).unwrap();
        let (out, _) = m.predict(m.initial_params(), &shuffled).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(out.row(k), full.row(i), "{arch}");
        }
    }
}

#[test]
fn name_order_is_stable_across_builds() {
    for arch in Arch::ALL {
        let cfg = small(arch, 3);
        let a: Vec<_> = build_model(&cfg, 1).unwrap().initial_params().iter().map(|e| e.name.clone()).collect();
        let b: Vec<_> = build_model(&cfg, 2).unwrap().initial_params().iter().map(|e| e.name.clone()).collect();
        assert_eq!(a, b);
    }
}

#[test]
fn train_mode_reports_running_stat_updates() {
    let cfg = small(Arch::ConvMixer, 3);
    let m = build_model(&cfg, 0).unwrap();
    let mut g = Graph::new();
    let vars = m.bind(&mut g, m.initial_params(), true).unwrap();
    let x = g.constant(random_batch(3, &cfg, 1));
    let out = m.forward(&mut g, &vars, x, Mode::Train).unwrap();
    // embed bn + two per block
    assert_eq!(out.bn_updates.len(), 1 + 2 * cfg.depth);
    let mut p = m.initial_params().clone();
    for u in &out.bn_updates {
        u.apply(&mut p);
    }
    assert_ne!(&p, m.initial_params());
}

#[test]
fn full_model_gradients_match_finite_differences() {
    for arch in Arch::ALL {
        let cfg = ModelConfig {
            input_channels: 2,
            ..small(arch, 3)
        };
        let m = build_model(&cfg, 3).unwrap();
        let batch = random_batch(2, &cfg, 4);
        let params = m.initial_params().clone();
        let trainable: Vec<Tensor> = params
            .iter()
            .filter(|e| e.kind == ParamKind::Trainable)
            .map(|e| e.tensor.clone())
            .collect();
        let err = check_gradients_with(
            |g, vars| {
                let mut it = vars.iter();
                let bound: Vec<Var> = params
                    .iter()
                    .map(|e| match e.kind {
                        ParamKind::Trainable => *it.next().unwrap(),
                        ParamKind::Buffer => g.constant(e.tensor.clone()),
                    })
                    .collect();
                let x = g.constant(batch.clone());
                Ok(m.forward(g, &bound, x, Mode::Train)?.logits)
            },
            trainable,
            7,
        )
        .unwrap();
        assert!(err < 1e-4, "{arch}: {err:e}");
    }
}

