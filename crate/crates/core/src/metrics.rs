//! Precision, recall and F1 over multilabel prediction sets.
//!
//! Zero denominators give 0 for precision and recall, except that a sample
//! (or class) with empty prediction and truth sets scores F1 = 1.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::{Matrix, Scalar};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        f1_sample(*self)
    }
}

impl core::ops::AddAssign for ConfusionCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.tp += rhs.tp;
        self.fp += rhs.fp;
        self.fn_ += rhs.fn_;
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Averaging {
    #[default]
    Samples,
    Macro,
    Micro,
}

fn membership(set: &[usize], k: usize) -> Result<Vec<bool>> {
    let mut mask = vec![false; k];
    for &c in set {
        if c >= k {
            return Err(Error::ClassIndex {
                index: c,
                classes: k,
            });
        }
        mask[c] = true;
    }
    Ok(mask)
}

/// Counts for one sample; duplicate indices count once.
pub fn confusion_counts(pred: &[usize], truth: &[usize], k: usize) -> Result<ConfusionCounts> {
    let p = membership(pred, k)?;
    let t = membership(truth, k)?;
    let mut c = ConfusionCounts::default();
    for (pi, ti) in p.into_iter().zip(t) {
        match (pi, ti) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(c)
}

pub fn f1_sample(c: ConfusionCounts) -> f64 {
    if c.tp == 0 && c.fp == 0 && c.fn_ == 0 {
        return 1.0;
    }
    let (p, r) = (c.precision(), c.recall());
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn mean_f1(
    preds: &[Vec<usize>],
    truths: &[Vec<usize>],
    k: usize,
    averaging: Averaging,
) -> Result<f64> {
    if preds.len() != truths.len() {
        return Err(Error::Validation(format!(
            "{} prediction rows vs {} truth rows",
            preds.len(),
            truths.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Validation("no samples to score".into()));
    }
    match averaging {
        Averaging::Samples => {
            let mut total = 0.0;
            for (p, t) in preds.iter().zip(truths) {
                total += f1_sample(confusion_counts(p, t, k)?);
            }
            Ok(total / preds.len() as f64)
        }
        Averaging::Micro => {
            let mut pooled = ConfusionCounts::default();
            for (p, t) in preds.iter().zip(truths) {
                pooled += confusion_counts(p, t, k)?;
            }
            Ok(f1_sample(pooled))
        }
        Averaging::Macro => {
            let mut per_class = vec![ConfusionCounts::default(); k];
            for (p, t) in preds.iter().zip(truths) {
                let pm = membership(p, k)?;
                let tm = membership(t, k)?;
                for (c, counts) in per_class.iter_mut().enumerate() {
                    match (pm[c], tm[c]) {
                        (true, true) => counts.tp += 1,
                        (true, false) => counts.fp += 1,
                        (false, true) => counts.fn_ += 1,
                        (false, false) => {}
                    }
                }
            }
            if k == 0 {
                return Ok(1.0);
            }
            Ok(per_class.iter().map(|c| f1_sample(*c)).sum::<f64>() / k as f64)
        }
    }
}

/// Row-wise sets of columns holding a one.
pub fn label_sets<T: Scalar>(targets: &Matrix<T>) -> Vec<Vec<usize>> {
    (0..targets.rows())
        .map(|i| {
            targets
                .row(i)
                .iter()
                .enumerate()
                .filter(|(_, v)| **v == T::ONE)
                .map(|(c, _)| c)
                .collect()
        })
        .collect()
}
