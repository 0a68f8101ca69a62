//! Simple sequence models over concatenated per-action embeddings.

use rand::Rng;

use super::batch::Batch;
use super::config::{ModelConfig, ModelKind};
use super::layers::{normal, Linear, Lstm, TransformerEncoder};
use crate::diffcore::{DiffError, ParamId, ParamStore, Tape, Var};
use crate::embed::{DiffEmbedding, Lookup, Time2Vec};

/// Fields per action: device, control, time of day, date, time difference.
pub const BASELINE_FIELDS: usize = 5;

/// Device and control lookups plus Time2Vec of time, date and difference.
#[derive(Debug, Clone)]
pub struct BaselineEmbedder {
    pub dim: usize,
    pub day_period: f64,
    pub device: Lookup,
    pub control: Lookup,
    pub time: Time2Vec,
    pub date: Time2Vec,
    pub diff: DiffEmbedding,
}

impl BaselineEmbedder {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self, DiffError> {
        let d = cfg.dim;
        Ok(Self {
            dim: d,
            day_period: cfg.day_period,
            device: Lookup::new(store, "embed/device", cfg.num_devices, d, rng)?,
            control: Lookup::new(store, "embed/control", cfg.num_controls, d, rng)?,
            time: Time2Vec::new(store, "embed/time/t2v", d, rng)?,
            date: Time2Vec::new(store, "embed/date/t2v", d, rng)?,
            diff: DiffEmbedding::new(store, "embed/diff", d, rng)?,
        })
    }

    /// Each field as `[b, l, d]`, in field order.
    pub fn fields(&self, tape: &mut Tape, store: &ParamStore, batch: &Batch) -> Result<[Var; BASELINE_FIELDS], DiffError> {
        let n = batch.actions.len();
        let a = &batch.actions;
        let tod = a.time_of_day.iter().map(|t| t / crate::datamodel::SECONDS_PER_DAY as f64).collect();
        let date = a.day.iter().map(|d| d / self.day_period).collect();
        let tod = tape.constant(vec![n, 1], tod)?;
        let date = tape.constant(vec![n, 1], date)?;
        let parts = [
            self.device.forward(tape, store, &a.devices)?,
            self.control.forward(tape, store, &a.controls)?,
            self.time.forward(tape, store, tod)?,
            self.date.forward(tape, store, date)?,
            self.diff.forward(tape, store, &batch.diffs)?,
        ];
        let mut out = parts;
        for v in &mut out {
            *v = tape.reshape(*v, vec![batch.size, batch.seq_len, self.dim])?;
        }
        Ok(out)
    }

    /// Fields concatenated per position, `[b, l, 5d]`.
    pub fn joined(&self, tape: &mut Tape, store: &ParamStore, batch: &Batch) -> Result<Var, DiffError> {
        let f = self.fields(tape, store, batch)?;
        tape.concat(&f, 2)
    }
}

#[derive(Debug, Clone)]
pub enum BaselineBody {
    Mlp { layers: Vec<Linear> },
    Mlp2Step { per_action: Vec<Linear>, joint: Vec<Linear> },
    Lstm { lstm: Lstm, out: Linear },
    MlpLstm { per_action: Vec<Linear>, lstm: Lstm, out: Linear },
    Lstm2Step { per_field: Vec<Lstm>, joint: Lstm, out: Linear },
    Transformer { positional: ParamId, encoder: TransformerEncoder, out: Linear },
}

#[derive(Debug, Clone)]
pub struct Baseline {
    pub kind: ModelKind,
    pub embed: BaselineEmbedder,
    pub body: BaselineBody,
}

fn mlp(store: &mut ParamStore, name: &str, widths: &[usize], rng: &mut impl Rng) -> Result<Vec<Linear>, DiffError> {
    widths
        .windows(2)
        .enumerate()
        .map(|(i, w)| Linear::new(store, &format!("{name}/fc{i}"), w[0], w[1], true, rng))
        .collect()
}

/// Relu between layers, none after the last.
fn run_mlp(tape: &mut Tape, store: &ParamStore, layers: &[Linear], mut x: Var) -> Result<Var, DiffError> {
    for (i, l) in layers.iter().enumerate() {
        if i > 0 {
            x = tape.relu(x);
        }
        x = l.forward(tape, store, x)?;
    }
    Ok(x)
}

impl Baseline {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self, DiffError> {
        let embed = BaselineEmbedder::new(store, cfg, rng)?;
        let (d, l, h, out) = (cfg.dim, cfg.seq_len, cfg.baseline_hidden, cfg.outputs());
        let wide = BASELINE_FIELDS * d;
        let body = match cfg.kind {
            ModelKind::Mlp => BaselineBody::Mlp { layers: mlp(store, "mlp", &[l * wide, h, h, h, out], rng)? },
            ModelKind::Mlp2Step => BaselineBody::Mlp2Step {
                per_action: mlp(store, "mlp/action", &[wide, h, d], rng)?,
                joint: mlp(store, "mlp/joint", &[l * d, h, out], rng)?,
            },
            ModelKind::Lstm => BaselineBody::Lstm {
                lstm: Lstm::new(store, "lstm", wide, h, 2, rng)?,
                out: Linear::new(store, "lstm/out", h, out, true, rng)?,
            },
            ModelKind::MlpLstm => BaselineBody::MlpLstm {
                per_action: mlp(store, "mlp/action", &[wide, h, d], rng)?,
                lstm: Lstm::new(store, "lstm", d, h, 2, rng)?,
                out: Linear::new(store, "lstm/out", h, out, true, rng)?,
            },
            ModelKind::Lstm2Step => BaselineBody::Lstm2Step {
                per_field: (0..BASELINE_FIELDS)
                    .map(|i| Lstm::new(store, &format!("lstm/field{i}"), d, d, 1, rng))
                    .collect::<Result<_, _>>()?,
                joint: Lstm::new(store, "lstm/joint", wide, h, 1, rng)?,
                out: Linear::new(store, "lstm/out", h, out, true, rng)?,
            },
            ModelKind::Transformer => BaselineBody::Transformer {
                positional: store.add("transformer/positional", vec![l, wide], normal(rng, l * wide, 0.02), true)?,
                encoder: TransformerEncoder::new(store, "transformer/encoder", wide, cfg.heads, cfg.layers, cfg.ff_width, rng)?,
                out: Linear::new(store, "transformer/out", wide, out, true, rng)?,
            },
            ModelKind::TimingMatters => return Err(DiffError::Invalid("timing-matters is not a baseline".into())),
        };
        Ok(Self { kind: cfg.kind, embed, body })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, batch: &Batch) -> Result<Var, DiffError> {
        let (b, l) = (batch.size, batch.seq_len);
        match &self.body {
            BaselineBody::Mlp { layers } => {
                let x = self.embed.joined(tape, store, batch)?;
                let x = tape.flatten(x)?;
                run_mlp(tape, store, layers, x)
            }
            BaselineBody::Mlp2Step { per_action, joint } => {
                let x = self.embed.joined(tape, store, batch)?;
                let a = run_mlp(tape, store, per_action, x)?;
                let a = tape.relu(a);
                let a = tape.flatten(a)?;
                run_mlp(tape, store, joint, a)
            }
            BaselineBody::Lstm { lstm, out } => {
                let x = self.embed.joined(tape, store, batch)?;
                let h = lstm.last(tape, store, x)?;
                out.forward(tape, store, h)
            }
            BaselineBody::MlpLstm { per_action, lstm, out } => {
                let x = self.embed.joined(tape, store, batch)?;
                let a = run_mlp(tape, store, per_action, x)?;
                let a = tape.relu(a);
                let h = lstm.last(tape, store, a)?;
                out.forward(tape, store, h)
            }
            BaselineBody::Lstm2Step { per_field, joint, out } => {
                let fields = self.embed.fields(tape, store, batch)?;
                let mut seqs = Vec::with_capacity(BASELINE_FIELDS);
                for (lstm, f) in per_field.iter().zip(fields) {
                    seqs.push(lstm.forward(tape, store, f)?);
                }
                let x = tape.concat(&seqs, 2)?;
                let h = joint.last(tape, store, x)?;
                out.forward(tape, store, h)
            }
            BaselineBody::Transformer { positional, encoder, out } => {
                let x = self.embed.joined(tape, store, batch)?;
                let p = tape.param(store, *positional);
                let x = tape.add_bcast(x, p)?;
                let y = encoder.forward(tape, store, x)?;
                let pooled = tape.avg_pool1d(y, l, l)?;
                let w = tape.shape(pooled)[2];
                let pooled = tape.reshape(pooled, vec![b, w])?;
                out.forward(tape, store, pooled)
            }
        }
    }
}
