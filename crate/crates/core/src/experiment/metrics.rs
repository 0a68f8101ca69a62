use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::datamodel::{BinningScheme, SECONDS_PER_DAY};

/// Fraction of positions where prediction and truth agree.
pub fn precision_at_k(predicted: &[usize], truth: &[usize]) -> Result<f64, ExperimentError> {
    if predicted.len() != truth.len() {
        return Err(ExperimentError::LengthMismatch { predicted: predicted.len(), truth: truth.len() });
    }
    if predicted.is_empty() {
        return Err(ExperimentError::Empty("precision of zero predictions".into()));
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / predicted.len() as f64)
}

/// Precision after mapping both sides from `from` bins down to `to` bins.
pub fn coarse_precision(predicted: &[usize], truth: &[usize], from: &BinningScheme, to: &BinningScheme) -> Result<f64, ExperimentError> {
    let map = |bins: &[usize]| bins.iter().map(|&b| from.coarsen(b, to)).collect::<Result<Vec<_>, _>>();
    precision_at_k(&map(predicted)?, &map(truth)?)
}

/// Distance between two times of day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeDistance {
    #[default]
    Linear,
    /// Shortest way around the clock.
    Circular,
}

impl TimeDistance {
    pub fn between(self, a: f64, b: f64) -> f64 {
        let d = (a - b).abs();
        match self {
            TimeDistance::Linear => d,
            TimeDistance::Circular => d.min(SECONDS_PER_DAY as f64 - d),
        }
    }
}

/// Root mean squared error in seconds.
pub fn rmse(predicted: &[f64], truth: &[f64], distance: TimeDistance) -> Result<f64, ExperimentError> {
    if predicted.len() != truth.len() {
        return Err(ExperimentError::LengthMismatch { predicted: predicted.len(), truth: truth.len() });
    }
    if predicted.is_empty() {
        return Err(ExperimentError::Empty("rmse of zero predictions".into()));
    }
    let sum: f64 = predicted.iter().zip(truth).map(|(&p, &t)| distance.between(p, t).powi(2)).sum();
    Ok((sum / predicted.len() as f64).sqrt())
}

/// Index of the largest value in each row; ties go to the lowest index.
pub fn argmax_rows(values: &[f64], width: usize) -> Vec<usize> {
    values
        .chunks(width)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Regression output (fraction of a day) as seconds inside `[0, 86400)`.
pub fn regression_seconds(output: f64) -> f64 {
    let s = output * SECONDS_PER_DAY as f64;
    if s.is_nan() {
        return 0.0;
    }
    s.clamp(0.0, (SECONDS_PER_DAY as f64).next_down())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model: String,
    pub dataset: String,
    pub num_examples: usize,
    /// Precision keyed by bin count.
    pub precision: BTreeMap<usize, f64>,
    /// Seconds.
    pub rmse: f64,
}

impl MetricReport {
    pub fn precision_at(&self, k: usize) -> Option<f64> {
        self.precision.get(&k).copied()
    }
}
