//! Multi-label F1 scores.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{contract_err, dim_err, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of samples where the class is present.
    pub support: usize,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub total_positives: usize,
    /// Classes that were never predicted and never present. Their F1 is
    /// taken as 0 and they still count in the macro mean.
    pub undefined_classes: Vec<usize>,
}

/// `2TP / (2TP + FP + FN)`, or 0 when nothing was predicted or present.
pub fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    ratio(2 * tp, 2 * tp + fp + fn_)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Micro and macro F1 of binary `N×P` predictions against binary targets.
pub fn f1_scores(pred: &Tensor, target: &Tensor) -> Result<MetricsSummary> {
    if pred.rank() != 2 || pred.shape() != target.shape() {
        return Err(dim_err!(
            "f1_scores: predictions {:?} and targets {:?} must share one N×P shape",
            pred.shape(),
            target.shape()
        ));
    }
    let binary = |t: &Tensor, what: &str| match t.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
        Some(v) => Err(contract_err!("f1_scores: {what} contain non-binary value {v}")),
        None => Ok(()),
    };
    binary(pred, "predictions")?;
    binary(target, "targets")?;

    let p = pred.shape()[1];
    let mut counts = alloc::vec![(0usize, 0usize, 0usize); p];
    for (row_p, row_t) in pred.data().chunks(p.max(1)).zip(target.data().chunks(p.max(1))) {
        for ((c, &yp), &yt) in counts.iter_mut().zip(row_p).zip(row_t) {
            match (yp == 1.0, yt == 1.0) {
                (true, true) => c.0 += 1,
                (true, false) => c.1 += 1,
                (false, true) => c.2 += 1,
                (false, false) => {}
            }
        }
    }

    let mut per_class = Vec::with_capacity(p);
    let mut undefined_classes = Vec::new();
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (class, &(ctp, cfp, cfn)) in counts.iter().enumerate() {
        if ctp + cfp + cfn == 0 {
            undefined_classes.push(class);
        }
        tp += ctp;
        fp += cfp;
        fn_ += cfn;
        per_class.push(ClassMetrics {
            precision: ratio(ctp, ctp + cfp),
            recall: ratio(ctp, ctp + cfn),
            f1: f1_from_counts(ctp, cfp, cfn),
            support: ctp + cfn,
            tp: ctp,
            fp: cfp,
            fn_: cfn,
        });
    }
    let macro_f1 = if p == 0 {
        0.0
    } else {
        per_class.iter().map(|c| c.f1).sum::<f64>() / p as f64
    };
    Ok(MetricsSummary {
        micro_f1: f1_from_counts(tp, fp, fn_),
        macro_f1,
        per_class,
        total_positives: tp + fn_,
        undefined_classes,
    })
}
