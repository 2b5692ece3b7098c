use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{ClientShard, MultiLabelDataset};
use crate::error::{data_err, Result};
use crate::math;

/// How far apart the clients' data are.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkewReport {
    pub shard_sizes: Vec<usize>,
    /// Per client, the share of its positive labels falling on each class.
    pub label_marginals: Vec<Vec<f64>>,
    pub global_marginal: Vec<f64>,
    /// Jensen-Shannon divergence (bits) of each client's marginal from the
    /// global one.
    pub js_to_global: Vec<f64>,
    pub mean_js: f64,
    /// `pairwise_js[i][j]` between clients `i` and `j`.
    pub pairwise_js: Vec<Vec<f64>>,
    pub size_gini: f64,
    /// L2 distance of each client's mean image from the global mean image.
    pub feature_shift: Vec<f64>,
}

fn kl_bits(p: &[f64], m: &[f64]) -> f64 {
    p.iter()
        .zip(m)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &mi)| pi * math::log(pi / mi))
        .sum::<f64>()
        / core::f64::consts::LN_2
}

/// Base-2 Jensen-Shannon divergence of two probability vectors, in `[0, 1]`.
pub fn js_divergence(p: &[f64], q: &[f64]) -> f64 {
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    (0.5 * kl_bits(p, &m) + 0.5 * kl_bits(q, &m)).clamp(0.0, 1.0)
}

/// Gini coefficient, `Σᵢ Σⱼ |xᵢ − xⱼ| / (2n²·mean)`.
pub fn gini(values: &[usize]) -> f64 {
    let n = values.len();
    let total: usize = values.iter().sum();
    if n == 0 || total == 0 {
        return 0.0;
    }
    let diff: usize = values.iter().flat_map(|&a| values.iter().map(move |&b| a.abs_diff(b))).sum();
    diff as f64 / (2.0 * n as f64 * total as f64)
}

fn normalized(counts: &[f64]) -> Vec<f64> {
    let total: f64 = counts.iter().sum();
    counts.iter().map(|c| c / total).collect()
}

pub fn skew_report(dataset: &MultiLabelDataset, shards: &[ClientShard]) -> Result<SkewReport> {
    if shards.is_empty() {
        return Err(data_err!("skew report needs at least one shard"));
    }
    let p = dataset.num_classes();
    let pixels = dataset.image_shape().iter().product::<usize>();
    let mut label_counts = Vec::with_capacity(shards.len());
    let mut pixel_sums = Vec::with_capacity(shards.len());
    for shard in shards {
        if shard.indices.is_empty() {
            return Err(data_err!("client {} has an empty shard", shard.client_id));
        }
        let mut labels = vec![0.0; p];
        let mut pixels_sum = vec![0.0; pixels];
        for &i in &shard.indices {
            let s = dataset
                .samples()
                .get(i)
                .ok_or_else(|| data_err!("client {} references sample {i} of {}", shard.client_id, dataset.len()))?;
            for c in s.positive_classes() {
                labels[c] += 1.0;
            }
            for (acc, &v) in pixels_sum.iter_mut().zip(&s.image) {
                *acc += f64::from(v);
            }
        }
        label_counts.push(labels);
        pixel_sums.push(pixels_sum);
    }

    let sum_rows = |rows: &[Vec<f64>], width: usize| {
        rows.iter().fold(vec![0.0; width], |mut acc, r| {
            acc.iter_mut().zip(r).for_each(|(a, b)| *a += b);
            acc
        })
    };
    let global_marginal = normalized(&sum_rows(&label_counts, p));
    let label_marginals: Vec<Vec<f64>> = label_counts.iter().map(|c| normalized(c)).collect();
    let js_to_global: Vec<f64> = label_marginals.iter().map(|m| js_divergence(m, &global_marginal)).collect();
    let pairwise_js = label_marginals
        .iter()
        .map(|a| label_marginals.iter().map(|b| js_divergence(a, b)).collect())
        .collect();

    let shard_sizes: Vec<usize> = shards.iter().map(ClientShard::size).collect();
    let total = shard_sizes.iter().sum::<usize>() as f64;
    let global_mean: Vec<f64> = sum_rows(&pixel_sums, pixels).iter().map(|v| v / total).collect();
    let feature_shift = pixel_sums
        .iter()
        .zip(&shard_sizes)
        .map(|(sum, &n)| {
            let sq: f64 = sum
                .iter()
                .zip(&global_mean)
                .map(|(s, g)| {
                    let d = s / n as f64 - g;
                    d * d
                })
                .sum();
            math::sqrt(sq)
        })
        .collect();

    Ok(SkewReport {
        mean_js: js_to_global.iter().sum::<f64>() / js_to_global.len() as f64,
        size_gini: gini(&shard_sizes),
        shard_sizes,
        label_marginals,
        global_marginal,
        js_to_global,
        pairwise_js,
        feature_shift,
    })
}
