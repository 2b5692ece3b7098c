use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::MultiLabelDataset;
use crate::error::{config_err, data_err, Result};
use crate::rng::rng_for;

const DS1_STREAM: u64 = 0xd5_0001;
const SPLIT_STREAM: u64 = 0x5b11_7001;

/// One client's local data: indices into the parent dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientShard {
    pub client_id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    pub indices: Vec<usize>,
}

impl ClientShard {
    pub fn size(&self) -> usize {
        self.indices.len()
    }
}

fn shuffled(n: usize, seed: u64, stream: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, &[stream]));
    order
}

/// Random assignment into `k` shards whose sizes differ by at most one.
pub fn partition_ds1(dataset: &MultiLabelDataset, k: usize, seed: u64) -> Result<Vec<ClientShard>> {
    let n = dataset.len();
    if k == 0 || k > n {
        return Err(config_err!("cannot split {n} samples across {k} clients"));
    }
    let order = shuffled(n, seed, DS1_STREAM);
    let (base, extra) = (n / k, n % k);
    let mut start = 0;
    Ok((0..k)
        .map(|client_id| {
            let len = base + usize::from(client_id < extra);
            let indices = order[start..start + len].to_vec();
            start += len;
            ClientShard {
                client_id,
                group: None,
                indices,
            }
        })
        .collect())
}

/// One shard per group tag, in order of first appearance.
pub fn partition_ds2(dataset: &MultiLabelDataset) -> Result<Vec<ClientShard>> {
    if let Some(s) = dataset.samples().iter().find(|s| s.group.is_empty()) {
        return Err(data_err!("sample {:?} has no group tag", s.id));
    }
    let groups = dataset.groups();
    let mut shards: Vec<ClientShard> = groups
        .iter()
        .enumerate()
        .map(|(client_id, g)| ClientShard {
            client_id,
            group: Some(String::from(*g)),
            indices: Vec::new(),
        })
        .collect();
    for (i, s) in dataset.samples().iter().enumerate() {
        let g = groups.iter().position(|g| *g == s.group).expect("group listed");
        shards[g].indices.push(i);
    }
    if shards.is_empty() {
        return Err(data_err!("cannot partition an empty dataset"));
    }
    Ok(shards)
}

/// Uniformly random train/test split of `n` indices. The test side gets
/// `round(n·test_fraction)` samples; both index lists are sorted.
pub fn train_test_split(n: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(config_err!("test fraction must lie in [0, 1), got {test_fraction}"));
    }
    let n_test = libm::round(n as f64 * test_fraction) as usize;
    if n_test == 0 || n_test >= n {
        return Err(config_err!("test fraction {test_fraction} of {n} samples leaves an empty side"));
    }
    let order = shuffled(n, seed, SPLIT_STREAM);
    let mut test = order[..n_test].to_vec();
    let mut train = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}
