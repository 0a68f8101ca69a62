use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::MetricReport;
use super::train::{train, TrainOutcome};
use super::{ExperimentError, TrainConfig};
use crate::datamodel::{reconstruct_streams, split, window_streams, Dataset, Schema, Session, SplitRatios};
use crate::nets::{Ablation, HeadKind, Model, ModelConfig, ModelKind};
use crate::table::Table;

pub const CONTEXT_WINDOWS: [usize; 6] = [5, 10, 20, 50, 100, 200];
pub const CONTEXT_LAYERS: [usize; 2] = [2, 4];

/// Shared settings for every trial of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split: SplitRatios,
    pub split_seed: u64,
    pub model_seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { model: ModelConfig::default(), train: TrainConfig::default(), split: SplitRatios::default(), split_seed: 0, model_seed: 0 }
    }
}

/// Result table plus the test report behind each row.
#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub table: Table,
    pub reports: Vec<MetricReport>,
}

fn run_trial(sessions: &[Session], model: ModelConfig, sweep: &SweepConfig, dataset_id: &str) -> Result<TrainOutcome, ExperimentError> {
    let parts = split(sessions, sweep.split, sweep.split_seed)?;
    let model = Model::new(model, sweep.model_seed)?;
    train(model, &parts, &sweep.train, dataset_id)
}

fn fmt_precision(report: &MetricReport, k: usize) -> String {
    report.precision_at(k).map_or_else(|| "-".into(), |p| format!("{p:.4}"))
}

fn require_an(ds: &Dataset, what: &str) -> Result<(), ExperimentError> {
    if ds.header.schema != Schema::An {
        return Err(ExperimentError::Unsupported(format!(
            "{what} needs second-resolution timestamps; SmartSense data contains time information only up to a precision of 3-hour intervals"
        )));
    }
    Ok(())
}

/// Precision at 96 and 8 bins for every (window, layer count) pair, with
/// sessions rebuilt from the reconstructed per-user streams.
pub fn sweep_context(ds: &Dataset, sweep: &SweepConfig, windows: &[usize], layers: &[usize]) -> Result<SweepOutput, ExperimentError> {
    let dataset_id = ds.content_hash();
    let streams = reconstruct_streams(&ds.sessions);
    let mut sessions = Vec::with_capacity(windows.len());
    for &w in windows {
        let windowed = window_streams(&streams, w + 1, ds.header.schema).map_err(|e| {
            ExperimentError::Unsupported(format!("context window {w}: {e}"))
        })?;
        sessions.push(windowed);
    }
    let trials: Vec<(usize, usize, usize)> =
        windows.iter().enumerate().flat_map(|(i, &w)| layers.iter().map(move |&l| (i, w, l))).collect();
    let outcomes = trials
        .par_iter()
        .map(|&(i, w, l)| {
            let model = ModelConfig { seq_len: w, layers: l, ..sweep.model.clone() };
            run_trial(&sessions[i], model, sweep, &dataset_id)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut table = Table::new(["window", "layers", "precision_96", "precision_08"]);
    for (&(_, w, l), o) in trials.iter().zip(&outcomes) {
        table.push(vec![w.to_string(), l.to_string(), fmt_precision(&o.test, 96), fmt_precision(&o.test, 8)]);
    }
    Ok(SweepOutput { table, reports: outcomes.into_iter().map(|o| o.test).collect() })
}

/// Retrains a classifier per bin count; reports its own precision and RMSE.
pub fn sweep_bins(ds: &Dataset, sweep: &SweepConfig, bins: &[usize]) -> Result<SweepOutput, ExperimentError> {
    require_an(ds, "the bin-size sweep")?;
    let dataset_id = ds.content_hash();
    let outcomes = bins
        .par_iter()
        .map(|&k| {
            let model = ModelConfig { num_bins: k, head: HeadKind::Classification, ..sweep.model.clone() };
            crate::nets::validate(&model)?;
            run_trial(&ds.sessions, model, sweep, &dataset_id)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut table = Table::new(["bins", "precision", "rmse"]);
    for (&k, o) in bins.iter().zip(&outcomes) {
        table.push(vec![k.to_string(), fmt_precision(&o.test, k), format!("{:.3}", o.test.rmse)]);
    }
    Ok(SweepOutput { table, reports: outcomes.into_iter().map(|o| o.test).collect() })
}

/// Regression (R) and classification (C) heads under the same budget.
pub fn compare_heads(ds: &Dataset, sweep: &SweepConfig) -> Result<SweepOutput, ExperimentError> {
    require_an(ds, "the regression/classification comparison")?;
    let dataset_id = ds.content_hash();
    let heads = [(HeadKind::Regression, "R"), (HeadKind::Classification, "C")];
    let outcomes = heads
        .par_iter()
        .map(|&(head, _)| run_trial(&ds.sessions, ModelConfig { head, ..sweep.model.clone() }, sweep, &dataset_id))
        .collect::<Result<Vec<_>, _>>()?;
    let mut table = Table::new(["method", "precision_96", "precision_08", "rmse"]);
    for (&(_, label), o) in heads.iter().zip(&outcomes) {
        table.push(vec![label.into(), fmt_precision(&o.test, 96), fmt_precision(&o.test, 8), format!("{:.3}", o.test.rmse)]);
    }
    Ok(SweepOutput { table, reports: outcomes.into_iter().map(|o| o.test).collect() })
}

/// The full model and its three ablations.
pub fn run_ablations(ds: &Dataset, sweep: &SweepConfig) -> Result<SweepOutput, ExperimentError> {
    if sweep.model.kind != ModelKind::TimingMatters {
        return Err(ExperimentError::Unsupported(format!("ablations apply to timing-matters, not {}", sweep.model.kind)));
    }
    let dataset_id = ds.content_hash();
    let outcomes = Ablation::ALL
        .par_iter()
        .map(|&ablation| run_trial(&ds.sessions, ModelConfig { ablation, ..sweep.model.clone() }, sweep, &dataset_id))
        .collect::<Result<Vec<_>, _>>()?;
    let mut table = Table::new(["variant", "precision_96", "precision_08"]);
    for (a, o) in Ablation::ALL.iter().zip(&outcomes) {
        table.push(vec![a.to_string(), fmt_precision(&o.test, 96), fmt_precision(&o.test, 8)]);
    }
    Ok(SweepOutput { table, reports: outcomes.into_iter().map(|o| o.test).collect() })
}

