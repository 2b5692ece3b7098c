//! Scalar math through `libm` so the crate stays `no_std`.

pub(crate) use libm::{erf, exp, log, log1p, sqrt};

pub(crate) const SQRT_2: f64 = core::f64::consts::SQRT_2;
pub(crate) const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// `ln(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + log1p(exp(-x))
    } else {
        log1p(exp(x))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}
