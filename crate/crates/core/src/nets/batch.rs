use crate::datamodel::{Example, SECONDS_PER_DAY};
use crate::diffcore::DiffError;
use crate::embed::ActionInputs;

/// Column-major view of a group of examples, flattened over (session, position).
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub seq_len: usize,
    pub actions: ActionInputs,
    /// Seconds since the previous input action, 0 at each sequence start.
    pub diffs: Vec<f64>,
    pub labels: Vec<usize>,
    pub target_seconds: Vec<f64>,
}

impl Batch {
    pub fn from_examples(examples: &[&Example]) -> Result<Self, DiffError> {
        let first = examples.first().ok_or_else(|| DiffError::Invalid("empty batch".into()))?;
        let seq_len = first.len();
        if examples.iter().any(|e| e.len() != seq_len || e.diffs.len() != seq_len) {
            return Err(DiffError::Invalid("examples in a batch must share one length".into()));
        }
        let n = examples.len() * seq_len;
        let mut actions = ActionInputs {
            devices: Vec::with_capacity(n),
            controls: Vec::with_capacity(n),
            time_of_day: Vec::with_capacity(n),
            day: Vec::with_capacity(n),
        };
        let mut diffs = Vec::with_capacity(n);
        for e in examples {
            actions.devices.extend_from_slice(&e.devices);
            actions.controls.extend_from_slice(&e.controls);
            actions.time_of_day.extend_from_slice(&e.time_of_day);
            actions.day.extend_from_slice(&e.day);
            diffs.extend_from_slice(&e.diffs);
        }
        Ok(Self {
            size: examples.len(),
            seq_len,
            actions,
            diffs,
            labels: examples.iter().map(|e| e.label).collect(),
            target_seconds: examples.iter().map(|e| e.target_seconds).collect(),
        })
    }

    /// Regression targets as a fraction of the day.
    pub fn normalized_targets(&self) -> Vec<f64> {
        self.target_seconds.iter().map(|t| t / SECONDS_PER_DAY as f64).collect()
    }
}
