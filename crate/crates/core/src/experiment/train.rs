use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{argmax_rows, precision_at_k, regression_seconds, rmse, MetricReport, TimeDistance};
use super::{ExperimentError, TrainConfig};
use crate::datamodel::{examples, BinningScheme, DatasetSplit, Example, Schema, Session, SMARTSENSE_TIME_RANGES};
use crate::diffcore::{Adam, AdamConfig, ParamStore, Tape};
use crate::nets::{Batch, HeadKind, Model, ModelConfig};

const EVAL_BATCH: usize = 256;
const FINE_BINS: usize = 96;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch.
    pub train_loss: f64,
    pub val_precision: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
    TimeLimit,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Holds the best-validation parameters.
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_precision: f64,
    /// Bin count the validation precision is measured at.
    pub val_bins: usize,
    pub stop: StopReason,
    pub test: MetricReport,
}

/// Per-example outputs of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    /// Classification only: argmax bin in the model's own scheme.
    pub bins: Option<Vec<usize>>,
    /// Predicted seconds after midnight; bin centres for classification.
    pub seconds: Vec<f64>,
}

pub fn model_id(cfg: &ModelConfig) -> String {
    format!("{}/{}/{}", cfg.kind, cfg.ablation, cfg.head)
}

fn schema_of(sessions: &[Session]) -> Result<Schema, ExperimentError> {
    let first = sessions.first().ok_or_else(|| ExperimentError::Empty("no sessions".into()))?;
    if sessions.iter().any(|s| s.schema != first.schema) {
        return Err(ExperimentError::Unsupported("sessions mix AN and SmartSense schemas".into()));
    }
    Ok(first.schema)
}

/// Scheme the training labels are built with.
fn label_scheme(cfg: &ModelConfig, schema: Schema) -> Result<BinningScheme, ExperimentError> {
    match cfg.head {
        HeadKind::Classification => {
            let scheme = BinningScheme::new(cfg.num_bins)?;
            if schema == Schema::SmartSense && SMARTSENSE_TIME_RANGES as usize % cfg.num_bins != 0 {
                return Err(ExperimentError::Unsupported(format!(
                    "SmartSense data only carries 3-hour ranges, so a {}-bin model cannot be trained on it",
                    cfg.num_bins
                )));
            }
            Ok(scheme)
        }
        HeadKind::Regression => Ok(BinningScheme::coarse()),
    }
}

/// Bin count used for model selection.
pub fn validation_bins(cfg: &ModelConfig, schema: Schema) -> usize {
    match (cfg.head, schema) {
        (HeadKind::Classification, _) => cfg.num_bins,
        (HeadKind::Regression, Schema::An) => FINE_BINS,
        (HeadKind::Regression, Schema::SmartSense) => SMARTSENSE_TIME_RANGES as usize,
    }
}

/// Bin counts reported by default: 96 and 8 where reachable, plus the model's own.
pub fn default_report_bins(cfg: &ModelConfig, schema: Schema) -> Vec<usize> {
    let mut ks = vec![validation_bins(cfg, schema), SMARTSENSE_TIME_RANGES as usize];
    if schema == Schema::An {
        ks.push(FINE_BINS);
    }
    ks.sort_unstable();
    ks.dedup();
    ks.retain(|&k| reachable(cfg, schema, k));
    ks
}

fn reachable(cfg: &ModelConfig, schema: Schema, k: usize) -> bool {
    let data_ok = schema == Schema::An || SMARTSENSE_TIME_RANGES as usize % k == 0;
    let model_ok = cfg.head == HeadKind::Regression || cfg.num_bins % k == 0;
    data_ok && model_ok && BinningScheme::new(k).is_ok()
}

pub fn predict(model: &Model, examples: &[Example]) -> Result<Predictions, ExperimentError> {
    let cfg = &model.config;
    let mut bins = Vec::with_capacity(examples.len());
    let mut seconds = Vec::with_capacity(examples.len());
    let scheme = match cfg.head {
        HeadKind::Classification => Some(BinningScheme::new(cfg.num_bins)?),
        HeadKind::Regression => None,
    };
    for chunk in examples.chunks(EVAL_BATCH) {
        let refs: Vec<&Example> = chunk.iter().collect();
        let batch = Batch::from_examples(&refs)?;
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, &batch, false)?;
        let values = tape.value(out);
        match &scheme {
            Some(s) => {
                for b in argmax_rows(values, cfg.num_bins) {
                    seconds.push(s.representative_time(b)?);
                    bins.push(b);
                }
            }
            None => seconds.extend(values.iter().map(|&v| regression_seconds(v))),
        }
    }
    Ok(Predictions { bins: scheme.map(|_| bins), seconds })
}

fn predicted_bins(model: &Model, preds: &Predictions, k: usize) -> Result<Vec<usize>, ExperimentError> {
    let to = BinningScheme::new(k)?;
    match &preds.bins {
        Some(bins) => {
            let from = BinningScheme::new(model.config.num_bins)?;
            Ok(bins.iter().map(|&b| from.coarsen(b, &to)).collect::<Result<_, _>>()?)
        }
        None => Ok(preds.seconds.iter().map(|&s| to.time_to_bin(s)).collect::<Result<_, _>>()?),
    }
}

/// Metrics of `model` on `sessions` at each bin count in `bins`.
pub fn evaluate_at(
    model: &Model,
    sessions: &[Session],
    bins: &[usize],
    dataset_id: &str,
    distance: TimeDistance,
) -> Result<MetricReport, ExperimentError> {
    let schema = schema_of(sessions)?;
    if let Some(&k) = bins.iter().find(|&&k| !reachable(&model.config, schema, k)) {
        return Err(ExperimentError::Unsupported(format!(
            "precision at {k} bins is not available for a {}-bin {} model on {} data",
            model.config.num_bins,
            model.config.head,
            schema.name()
        )));
    }
    let examples = examples(sessions, &label_scheme(&model.config, schema)?)?;
    let preds = predict(model, &examples)?;
    let truth_seconds: Vec<f64> = examples.iter().map(|e| e.target_seconds).collect();
    let mut precision = BTreeMap::new();
    for &k in bins {
        let scheme = BinningScheme::new(k)?;
        let truth = truth_seconds.iter().map(|&s| scheme.time_to_bin(s)).collect::<Result<Vec<_>, _>>()?;
        precision.insert(k, precision_at_k(&predicted_bins(model, &preds, k)?, &truth)?);
    }
    Ok(MetricReport {
        model: model_id(&model.config),
        dataset: dataset_id.to_string(),
        num_examples: examples.len(),
        precision,
        rmse: rmse(&preds.seconds, &truth_seconds, distance)?,
    })
}

/// Metrics at the default bin counts with linear time distance.
pub fn evaluate(model: &Model, sessions: &[Session], dataset_id: &str) -> Result<MetricReport, ExperimentError> {
    let schema = schema_of(sessions)?;
    evaluate_at(model, sessions, &default_report_bins(&model.config, schema), dataset_id, TimeDistance::Linear)
}

fn precision_on(model: &Model, examples: &[Example], k: usize) -> Result<f64, ExperimentError> {
    let preds = predict(model, examples)?;
    let scheme = BinningScheme::new(k)?;
    let truth = examples.iter().map(|e| scheme.time_to_bin(e.target_seconds)).collect::<Result<Vec<_>, _>>()?;
    precision_at_k(&predicted_bins(model, &preds, k)?, &truth)
}

/// One pass over `examples` in `order`, returning the mean loss.
fn run_epoch(model: &mut Model, opt: &mut Adam, examples: &[Example], order: &[usize], batch_size: usize) -> Result<f64, ExperimentError> {
    let mut total = 0.0;
    for chunk in order.chunks(batch_size) {
        let refs: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
        let batch = Batch::from_examples(&refs)?;
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, &batch, true)?;
        let loss = model.loss(&mut tape, &batch, out)?;
        total += tape.value(loss)[0] * chunk.len() as f64;
        tape.backward(loss, &mut model.params)?;
        model.params.apply_buffer_updates(tape.take_buffer_updates());
        opt.step(&mut model.params)?;
    }
    Ok(total / order.len() as f64)
}

pub fn train(model: Model, split: &DatasetSplit, cfg: &TrainConfig, dataset_id: &str) -> Result<TrainOutcome, ExperimentError> {
    train_with(model, split, cfg, dataset_id, |_| {})
}

/// Trains on the train partition, selects by validation precision and
/// reads the test partition once at the end. `on_epoch` sees each record
/// as it is produced.
pub fn train_with(
    mut model: Model,
    split: &DatasetSplit,
    cfg: &TrainConfig,
    dataset_id: &str,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, ExperimentError> {
    cfg.validate()?;
    let started = Instant::now();
    let train_sessions = split.train();
    if train_sessions.is_empty() {
        return Err(ExperimentError::Empty("training partition".into()));
    }
    let schema = schema_of(train_sessions)?;
    let scheme = label_scheme(&model.config, schema)?;
    let train_examples = examples(train_sessions, &scheme)?;
    let val_sessions = split.val();
    if val_sessions.is_empty() {
        return Err(ExperimentError::Empty("validation partition".into()));
    }
    let val_examples = examples(val_sessions, &scheme)?;
    let val_bins = validation_bins(&model.config, schema);

    let adam = AdamConfig { learning_rate: cfg.learning_rate, weight_decay: cfg.weight_decay, ..AdamConfig::default() };
    let mut opt = Adam::new(adam, &model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_examples.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, ParamStore)> = None;
    let mut stop = StopReason::MaxEpochs;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let train_loss = run_epoch(&mut model, &mut opt, &train_examples, &order, cfg.batch_size)?;
        let val_precision = precision_on(&model, &val_examples, val_bins)?;
        let record = EpochRecord { epoch, train_loss, val_precision };
        on_epoch(&record);
        history.push(record);
        match &best {
            Some((_, score, _)) if val_precision <= *score => {}
            _ => best = Some((epoch, val_precision, model.params.clone())),
        }
        let best_epoch = best.as_ref().map_or(epoch, |b| b.0);
        if epoch - best_epoch >= cfg.patience {
            stop = StopReason::Patience;
            break;
        }
        if cfg.time_limit_secs.is_some_and(|t| started.elapsed().as_secs_f64() >= t) && epoch < cfg.max_epochs {
            stop = StopReason::TimeLimit;
            break;
        }
    }

    let (best_epoch, best_val_precision, params) = best.expect("at least one epoch ran");
    model.params = params;
    let test = evaluate(&model, split.test(), dataset_id)?;
    Ok(TrainOutcome { model, history, best_epoch, best_val_precision, val_bins, stop, test })
}
