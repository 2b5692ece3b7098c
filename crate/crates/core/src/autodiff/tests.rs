use alloc::vec;
use alloc::vec::Vec;

use super::*;
use super::graph::gelu;
use crate::tensor::Tensor;
use crate::Error;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

/// Direct grouped cross-correlation, written independently of im2col.
fn naive_conv(
    x: &Tensor,
    k: &Tensor,
    stride: usize,
    pad: usize,
    groups: usize,
) -> (Vec<usize>, Vec<f64>) {
    let [n, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let [o, cg, kh, kw] = [k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]];
    let og = o / groups;
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * o * oh * ow];
    for b in 0..n {
        for oc in 0..o {
            let g = oc / og;
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = 0.0;
                    for ic in 0..cg {
                        let cin = g * cg + ic;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xx * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = x.data()[((b * c + cin) * h + iy as usize) * w + ix as usize];
                                let kv = k.data()[((oc * cg + ic) * kh + ky) * kw + kx];
                                acc += xv * kv;
                            }
                        }
                    }
                    out[((b * o + oc) * oh + y) * ow + xx] = acc;
                }
            }
        }
    }
    (vec![n, o, oh, ow], out)
}

#[test]
fn matmul_identity_and_hand_value() {
    let mut g = Graph::new();
    let i2 = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let a = g.constant(t(&[2, 2], &[3.5, -1.0, 2.0, 7.0]));
    let ia = g.matmul(i2, a).unwrap();
    assert_eq!(g.value(ia), g.value(a));

    let l = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let r = g.constant(t(&[2, 1], &[5.0, 6.0]));
    let p = g.matmul(l, r).unwrap();
    assert_eq!(g.value(p).data(), &[17.0, 39.0]);
    assert_eq!(g.shape(p), &[2, 1]);
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    match g.matmul(a, b) {
        Err(Error::Dimension(msg)) => {
            assert!(msg.contains("[2, 3]"), "{msg}");
        }
        other => panic!("expected dimension error, got {other:?}"),
    }
}

#[test]
fn conv2d_examples() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
    let k = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
    let y = g
        .conv2d(x, k, Conv2d { stride: 1, padding: 0, groups: 1 })
        .unwrap();
    assert_eq!(g.value(y).data(), &[9.0]);

    let x = g.constant(Tensor::full(&[2, 3, 4, 4], 1.0));
    let k = g.constant(Tensor::full(&[3, 3, 1, 1], 2.0 / 3.0));
    let y = g.conv2d(x, k, Conv2d::default()).unwrap();
    for v in g.value(y).data() {
        assert!((v - 2.0).abs() < 1e-15);
    }
    // a literal 1x1 pointwise kernel of value 2 on a single channel
    let x1 = g.constant(Tensor::full(&[1, 1, 2, 2], 1.0));
    let k1 = g.constant(Tensor::full(&[1, 1, 1, 1], 2.0));
    let y1 = g.conv2d(x1, k1, Conv2d::default()).unwrap();
    assert_eq!(g.value(y1).data(), &[2.0; 4]);

    let x = g.constant(Tensor::zeros(&[1, 3, 4, 4]));
    let k = g.constant(Tensor::zeros(&[2, 1, 1, 1]));
    let err = g.conv2d(x, k, Conv2d { stride: 1, padding: 0, groups: 2 });
    assert!(matches!(err, Err(Error::Dimension(_))));

    let k = g.constant(Tensor::zeros(&[1, 3, 5, 5]));
    assert!(matches!(g.conv2d(x, k, Conv2d::default()), Err(Error::Dimension(_))));
}

#[test]
fn conv2d_matches_direct_loops() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let cases = [
        // (n, c, h, w, o, kh, stride, pad, groups)
        (2, 4, 5, 6, 6, 3, 1, 1, 2),
        (1, 3, 7, 7, 3, 5, 1, 2, 3),
        (2, 2, 8, 8, 4, 2, 2, 0, 1),
        (1, 4, 6, 6, 8, 3, 2, 1, 4),
    ];
    for (n, c, h, w, o, kk, stride, pad, groups) in cases {
        let mut rand_t = |shape: &[usize]| {
            let len = shape.iter().product();
            t(shape, &(0..len).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>())
        };
        let x = rand_t(&[n, c, h, w]);
        let k = rand_t(&[o, c / groups, kk, kk]);
        let (shape, want) = naive_conv(&x, &k, stride, pad, groups);
        let mut g = Graph::new();
        let xv = g.constant(x);
        let kv = g.constant(k);
        let y = g.conv2d(xv, kv, Conv2d { stride, padding: pad, groups }).unwrap();
        assert_eq!(g.shape(y), &shape[..]);
        for (a, b) in g.value(y).data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn avg_pool_examples() {
    let mut g = Graph::new();
    let x = g.constant(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let y = g.avg_pool2d(x, Pool2d { kernel: 2, stride: 2, padding: 0 }).unwrap();
    assert_eq!(g.value(y).data(), &[2.5]);

    let c = g.constant(Tensor::full(&[1, 2, 4, 4], 3.25));
    let y = g.avg_pool2d(c, Pool2d { kernel: 3, stride: 1, padding: 1 }).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 3.25));

    let src = t(&[1, 1, 2, 3], &[1.0, -2.0, 3.0, 4.0, 5.0, -6.0]);
    let x = g.constant(src.clone());
    let y = g.avg_pool2d(x, Pool2d { kernel: 1, stride: 1, padding: 0 }).unwrap();
    assert_eq!(g.value(y), &src);

    let x = g.constant(Tensor::zeros(&[1, 1, 2, 2]));
    assert!(matches!(
        g.avg_pool2d(x, Pool2d { kernel: 3, stride: 1, padding: 0 }),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn avg_pool_excludes_padding_from_divisor() {
    let mut g = Graph::new();
    let x = g.constant(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let y = g.avg_pool2d(x, Pool2d { kernel: 3, stride: 1, padding: 1 }).unwrap();
    // every 3x3 window around a 2x2 image covers all four real pixels
    assert_eq!(g.value(y).data(), &[2.5; 4]);
}

#[test]
fn full_window_pool_equals_global_pool() {
    let mut g = Graph::new();
    let data: Vec<f64> = (0..2 * 3 * 4 * 4).map(|i| (i as f64 * 0.37).sin()).collect();
    let x = g.constant(t(&[2, 3, 4, 4], &data));
    let p = g.avg_pool2d(x, Pool2d { kernel: 4, stride: 4, padding: 0 }).unwrap();
    let gp = g.global_avg_pool(x).unwrap();
    assert_eq!(g.shape(p), &[2, 3, 1, 1]);
    for (a, b) in g.value(p).data().iter().zip(g.value(gp).data()) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn sigmoid_examples() {
    let mut g = Graph::new();
    let x = g.constant(t(&[3], &[0.0, libm::log(3.0), -2.0]));
    let s = g.sigmoid(x);
    let v = g.value(s).data();
    assert_eq!(v[0], 0.5);
    assert!((v[1] - 0.75).abs() < 1e-15);
    let nx = g.scale(x, -1.0);
    let ns = g.sigmoid(nx);
    for (a, b) in g.value(s).data().iter().zip(g.value(ns).data()) {
        assert!((a + b - 1.0).abs() < 1e-15);
        assert!(*a > 0.0 && *a < 1.0);
    }
}

#[test]
fn backward_examples() {
    let mut g = Graph::new();
    let x = g.param(t(&[3], &[1.0, -4.0, 2.5]));
    let s = g.sum(x);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);

    let mut g = Graph::new();
    let x = g.param(t(&[2], &[1.0, 2.0]));
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0]);

    // reused tensor: y = x + x → grad 2
    let mut g = Graph::new();
    let x = g.param(t(&[2], &[0.3, -0.7]));
    let y = g.add(x, x).unwrap();
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[2.0, 2.0]);
}

#[test]
fn backward_rejects_non_scalar_root() {
    let mut g = Graph::new();
    let x = g.param(Tensor::zeros(&[2]));
    assert!(matches!(g.backward(x), Err(Error::Contract(_))));
}

#[test]
fn scaled_sum_gradient_is_exactly_the_scale() {
    for c in [3.0, -0.125, 1e-3] {
        let mut g = Graph::new();
        let x = g.param(t(&[4], &[1.0, 2.0, 3.0, 4.0]));
        let s = g.sum(x);
        let r = g.scale(s, c);
        g.backward(r).unwrap();
        assert!(g.grad(x).unwrap().data().iter().all(|&v| v == c));
    }
}

#[test]
fn constants_get_no_gradient() {
    let mut g = Graph::new();
    let x = g.param(t(&[2], &[1.0, 2.0]));
    let c = g.constant(t(&[2], &[3.0, 4.0]));
    let y = g.mul(x, c).unwrap();
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[3.0, 4.0]);
    assert!(g.grad(c).is_none());
}

#[test]
fn forward_is_deterministic() {
    let run = || {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 2, 4, 4], &(0..32).map(|i| i as f64 / 7.0).collect::<Vec<_>>()));
        let k = g.constant(t(&[2, 1, 3, 3], &(0..18).map(|i| (i as f64).cos()).collect::<Vec<_>>()));
        let y = g.conv2d(x, k, Conv2d { stride: 1, padding: 1, groups: 2 }).unwrap();
        let y = g.gelu(y);
        g.value(y).clone()
    };
    assert_eq!(run().data(), run().data());
}

#[test]
fn gelu_reference_values() {
    // x·Φ(x): Φ(1) = 0.841344746068543, Φ(-0.5) = 0.308537538725987
    assert!((gelu(1.0) - 0.841_344_746_068_543).abs() < 1e-14);
    assert!((gelu(-0.5) + 0.5 * 0.308_537_538_725_987).abs() < 1e-14);
    assert_eq!(gelu(0.0), 0.0);
}

#[test]
fn batch_norm_eval_uses_running_stats() {
    let mut g = Graph::new();
    let x = g.constant(t(&[2, 1, 1, 2], &[1.0, 3.0, 5.0, 7.0]));
    let gamma = g.constant(t(&[1], &[2.0]));
    let beta = g.constant(t(&[1], &[0.5]));
    let (y, stats) = g.batch_norm(x, gamma, beta, (&[1.0], &[4.0]), false).unwrap();
    assert!(stats.is_none());
    let s = 2.0 / libm::sqrt(4.0 + NORM_EPS);
    let want: Vec<f64> = [1.0, 3.0, 5.0, 7.0].iter().map(|v| (v - 1.0) * s + 0.5).collect();
    assert_eq!(g.value(y).data(), &want[..]);

    let (_, stats) = g.batch_norm(x, gamma, beta, (&[0.0], &[1.0]), true).unwrap();
    let stats = stats.unwrap();
    assert_eq!(stats.mean, vec![4.0]);
    assert!((stats.var[0] - 20.0 / 3.0).abs() < 1e-12);
}

#[test]
fn permute_round_trip() {
    let mut g = Graph::new();
    let data: Vec<f64> = (0..24).map(f64::from).collect();
    let x = g.constant(t(&[2, 3, 4], &data));
    let p = g.permute(x, &[2, 0, 1]).unwrap();
    assert_eq!(g.shape(p), &[4, 2, 3]);
    // element [i,j,k] of x lands at [k,i,j]
    assert_eq!(g.value(p).data()[(3 * 2 + 1) * 3 + 2], data[(3 + 2) * 4 + 3]);
    let back = g.permute(p, &[1, 2, 0]).unwrap();
    assert_eq!(g.value(back).data(), &data[..]);
    assert!(g.permute(x, &[0, 0, 1]).is_err());
}
