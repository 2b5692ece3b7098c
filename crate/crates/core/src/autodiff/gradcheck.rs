use alloc::vec::Vec;

use rand::Rng;

use super::graph::{Graph, Var};
use crate::error::Result;
use crate::math;
use crate::rng::rng_for;
use crate::tensor::Tensor;

/// Central-difference step.
pub const GRADCHECK_EPS: f64 = 1e-6;

/// Gradients with a norm below this are compared in absolute terms; finite
/// differences cannot resolve them relative to their own size.
pub const GRADCHECK_FLOOR: f64 = 1e-3;

/// `‖a − b‖ / max(‖a‖, ‖b‖, GRADCHECK_FLOOR)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = math::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum());
    let na = math::sqrt(a.iter().map(|x| x * x).sum());
    let nb = math::sqrt(b.iter().map(|x| x * x).sum());
    diff / na.max(nb).max(GRADCHECK_FLOOR)
}

/// Gradient check with inputs drawn uniformly from `[-1, 1)` for the given
/// shapes. See [`check_gradients_with`].
pub fn check_gradients<F>(op: F, input_shapes: &[&[usize]], seed: u64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut rng = rng_for(seed, &[0x67c]);
    let inputs: Vec<Tensor> = input_shapes
        .iter()
        .map(|shape| {
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            Tensor::new(shape.to_vec(), data)
        })
        .collect::<Result<_>>()?;
    check_gradients_with(op, inputs, seed)
}

/// Compares reverse-mode gradients of `op` against central finite
/// differences and returns the worst per-input [`relative_error`].
///
/// Non-scalar outputs are reduced to a scalar by a seeded random projection,
/// so every output element contributes to the check.
pub fn check_gradients_with<F>(op: F, inputs: Vec<Tensor>, seed: u64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let projection = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = op(&mut g, &vars)?;
        let n = g.value(out).numel();
        let mut rng = rng_for(seed, &[0x9a0]);
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(g.shape(out).to_vec(), w)?
    };
    let scalar = |inputs: &[Tensor], track: bool| -> Result<(Graph, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), track)).collect();
        let out = op(&mut g, &vars)?;
        let p = g.constant(projection.clone());
        let prod = g.mul(out, p)?;
        let loss = g.sum(prod);
        Ok((g, vars, loss))
    };

    let (mut g, vars, loss) = scalar(&inputs, true)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(&inputs)
        .map(|(&v, t)| {
            g.grad_data(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| alloc::vec![0.0; t.numel()])
        })
        .collect();

    let mut worst = 0.0f64;
    let mut probe = inputs.clone();
    for (idx, input) in inputs.iter().enumerate() {
        let mut numeric = Vec::with_capacity(input.numel());
        for j in 0..input.numel() {
            let orig = input.data()[j];
            probe[idx].data_mut()[j] = orig + GRADCHECK_EPS;
            let (gp, _, lp) = scalar(&probe, false)?;
            probe[idx].data_mut()[j] = orig - GRADCHECK_EPS;
            let (gm, _, lm) = scalar(&probe, false)?;
            probe[idx].data_mut()[j] = orig;
            let fp = gp.value(lp).data()[0];
            let fm = gm.value(lm).data()[0];
            numeric.push((fp - fm) / (2.0 * GRADCHECK_EPS));
        }
        worst = worst.max(relative_error(&analytic[idx], &numeric));
    }
    Ok(worst)
}
