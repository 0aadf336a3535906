//! Per-feature z-score normalization fit on the training split only.

use super::{DataError, Dataset};
use serde::{Deserialize, Serialize};

const CONSTANT_EPS: f64 = 1e-12;

/// Training-split feature statistics. `std` is the population standard
/// deviation; features whose spread is indistinguishable from zero are
/// flagged constant and transform to zero instead of dividing by noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub constant: Vec<bool>,
}

impl NormStats {
    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn transform_value(&self, feature: usize, v: f64) -> f64 {
        if self.constant[feature] {
            0.0
        } else {
            (v - self.mean[feature]) / self.std[feature]
        }
    }
}

/// Fits statistics on `train`; every feature of every row must already be
/// finite (run the NaN exclusion first).
pub fn fit_normalize(train: &Dataset) -> Result<NormStats, DataError> {
    if train.is_empty() {
        return Err(DataError::EmptyTrainSplit);
    }
    let d = train.samples[0].features.len();
    let n = train.len() as f64;
    for (row, s) in train.samples.iter().enumerate() {
        if let Some(col) = s.features.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFiniteFeature {
                row,
                feature: format!("column {col}"),
            });
        }
    }

    let mut mean = vec![0.0; d];
    for s in &train.samples {
        for (m, v) in mean.iter_mut().zip(&s.features) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);

    let mut var = vec![0.0; d];
    for s in &train.samples {
        for ((acc, v), m) in var.iter_mut().zip(&s.features).zip(&mean) {
            let c = v - m;
            *acc += c * c;
        }
    }
    let std: Vec<f64> = var.iter().map(|v| (v / n).sqrt()).collect();
    let constant = std.iter().map(|&s| s < CONSTANT_EPS).collect();
    Ok(NormStats {
        mean,
        std,
        constant,
    })
}

/// Applies train statistics to any split; NaN features stay NaN.
pub fn apply_normalize(dataset: &Dataset, stats: &NormStats) -> Dataset {
    let mut out = dataset.clone();
    for s in &mut out.samples {
        for (j, v) in s.features.iter_mut().enumerate() {
            *v = stats.transform_value(j, *v);
        }
    }
    out
}
