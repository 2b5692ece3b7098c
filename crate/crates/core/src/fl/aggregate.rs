use alloc::vec::Vec;

use crate::data::ClientShard;
use crate::error::{contract_err, data_err, Result};
use crate::model::ParamSet;

/// Allowed deviation of the weight sum from 1.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;

/// `αᵢ = Mᵢ / Σ M`.
pub fn size_weights(shards: &[ClientShard]) -> Result<Vec<f64>> {
    let total: usize = shards.iter().map(ClientShard::size).sum();
    if shards.iter().any(|s| s.size() == 0) {
        return Err(data_err!("every client needs at least one sample"));
    }
    Ok(shards.iter().map(|s| s.size() as f64 / total as f64).collect())
}

/// Element-wise `Σᵢ αᵢ wᵢ`, summed in client order and clamped to the range
/// of the client values so rounding can never leave the convex hull.
pub fn aggregate(paramsets: &[ParamSet], weights: &[f64]) -> Result<ParamSet> {
    let first = paramsets
        .first()
        .ok_or_else(|| contract_err!("aggregate needs at least one parameter set"))?;
    if weights.len() != paramsets.len() {
        return Err(contract_err!("{} weights for {} parameter sets", weights.len(), paramsets.len()));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
        return Err(contract_err!("aggregation weights must be positive, got {w}"));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        return Err(contract_err!("aggregation weights sum to {sum}, not 1"));
    }
    for (i, p) in paramsets.iter().enumerate().skip(1) {
        first.ensure_same_structure(p, &alloc::format!("aggregate input {i}"))?;
    }

    let mut out = first.clone();
    for e in 0..first.len() {
        for j in 0..first.tensor(e).numel() {
            let (mut acc, mut lo, mut hi) = (0.0, f64::INFINITY, f64::NEG_INFINITY);
            for (i, (p, &w)) in paramsets.iter().zip(weights).enumerate() {
                let x = p.tensor(e).data()[j];
                if !x.is_finite() {
                    return Err(contract_err!("client {i} sent a non-finite value in {:?}", p.entries()[e].name));
                }
                acc += w * x;
                lo = lo.min(x);
                hi = hi.max(x);
            }
            out.tensor_mut(e).data_mut()[j] = acc.clamp(lo, hi);
        }
    }
    Ok(out)
}
