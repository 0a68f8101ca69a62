//! The full model: action encoder, time encoder and sequence encoder.

use rand::Rng;

use super::batch::Batch;
use super::config::{Ablation, ModelConfig};
use super::layers::{normal, uniform, BatchNorm, Linear, Tcn, TransformerEncoder, LEAKY_SLOPE};
use crate::diffcore::{DiffError, ParamId, ParamStore, Tape, Var};
use crate::embed::{ActionEmbedder, ActionFields, DiffEmbedding, ScalarKind};

/// Turns the four contextual fields of each action into one vector.
#[derive(Debug, Clone)]
pub struct ActionEncoder {
    pub dim: usize,
    pub transformer: Option<TransformerEncoder>,
    /// `[4 * dim, dim]`, no bias.
    pub projection: ParamId,
}

pub const ACTION_TOKENS: usize = 4;

impl ActionEncoder {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self, DiffError> {
        let d = cfg.dim;
        let transformer = TransformerEncoder::new(store, "action_encoder/transformer", d, cfg.heads, cfg.layers, cfg.ff_width, rng)?;
        let bound = 1.0 / ((ACTION_TOKENS * d) as f64).sqrt();
        let projection =
            store.add("action_encoder/projection", vec![ACTION_TOKENS * d, d], uniform(rng, ACTION_TOKENS * d * d, bound), true)?;
        Ok(Self { dim: d, transformer: Some(transformer), projection })
    }

    /// `tokens` are `[n, d]` each, in field order; the result is `[n, d]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, tokens: [Var; ACTION_TOKENS]) -> Result<Var, DiffError> {
        let n = tape.shape(tokens[0])[0];
        let d = self.dim;
        let mut stacked = Vec::with_capacity(ACTION_TOKENS);
        for t in tokens {
            if tape.shape(t) != [n, d] {
                return Err(DiffError::ShapeMismatch { op: "action_encoder", left: tape.shape(t).to_vec(), right: vec![n, d] });
            }
            stacked.push(tape.reshape(t, vec![n, 1, d])?);
        }
        let x = tape.concat(&stacked, 1)?;
        let z = match &self.transformer {
            Some(tr) => tr.forward(tape, store, x)?,
            None => x,
        };
        let flat = tape.reshape(z, vec![n, ACTION_TOKENS * d])?;
        let w = tape.param(store, self.projection);
        tape.matmul(flat, w)
    }
}

/// Time-difference path plus time-of-day embeddings, batch-normalised.
#[derive(Debug, Clone)]
pub struct TimeEncoder {
    pub dim: usize,
    pub tcn: Option<Tcn>,
    pub norm: BatchNorm,
}

impl TimeEncoder {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self, DiffError> {
        let tcn = match cfg.ablation {
            Ablation::MinusTimeEncoder => None,
            _ => Some(Tcn::new(store, "time_encoder/tcn", cfg.dim, cfg.tcn_kernel, rng)?),
        };
        Ok(Self { dim: cfg.dim, tcn, norm: BatchNorm::new(store, "time_encoder/norm", 3 * cfg.dim)? })
    }

    /// `diff_seq` is `[b, l, d]`; `periodic` and `radial` are `[b * l, d]`.
    /// Returns the convolved differences `[b, l, d]` and the encoding `[b * l, 3d]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        diff_seq: Var,
        periodic: Var,
        radial: Var,
        train: bool,
    ) -> Result<(Var, Var), DiffError> {
        let s = tape.shape(diff_seq).to_vec();
        let rows = s[0] * s[1];
        for v in [periodic, radial] {
            if tape.shape(v) != [rows, self.dim] {
                return Err(DiffError::ShapeMismatch { op: "time_encoder", left: tape.shape(v).to_vec(), right: vec![rows, self.dim] });
            }
        }
        let conv = match &self.tcn {
            Some(tcn) => tcn.forward(tape, store, diff_seq)?,
            None => diff_seq,
        };
        let flat = tape.reshape(conv, vec![rows, self.dim])?;
        let joined = tape.concat(&[periodic, radial, flat], 1)?;
        let out = self.norm.forward(tape, store, joined, train)?;
        Ok((conv, out))
    }
}

/// Contextualises the per-position encodings and maps them to outputs.
#[derive(Debug, Clone)]
pub struct SequenceEncoder {
    pub width: usize,
    pub seq_len: usize,
    pub transformer: Option<TransformerEncoder>,
    /// Trainable `[seq_len, width]` positional matrix.
    pub positional: ParamId,
    pub positional_before: bool,
    pub tcn: Tcn,
    pub hidden: Linear,
    pub out: Linear,
}

impl SequenceEncoder {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self, DiffError> {
        let width = 4 * cfg.dim;
        let transformer = match cfg.ablation {
            Ablation::MinusSequenceEncoder => None,
            _ => Some(TransformerEncoder::new(store, "sequence_encoder/transformer", width, cfg.heads, cfg.layers, cfg.ff_width, rng)?),
        };
        let positional =
            store.add("sequence_encoder/positional", vec![cfg.seq_len, width], normal(rng, cfg.seq_len * width, 0.02), true)?;
        Ok(Self {
            width,
            seq_len: cfg.seq_len,
            transformer,
            positional,
            positional_before: cfg.positional_before,
            tcn: Tcn::new(store, "sequence_encoder/tcn", width, cfg.tcn_kernel, rng)?,
            hidden: Linear::new(store, "sequence_encoder/hidden", width, 2 * cfg.dim, true, rng)?,
            out: Linear::new(store, "sequence_encoder/out", 2 * cfg.dim, cfg.outputs(), true, rng)?,
        })
    }

    /// `s` is `[b, l, width]`. Returns the contextualised sequence (after the
    /// positional matrix) and the outputs `[b, outputs]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, s: Var) -> Result<(Var, Var), DiffError> {
        let shape = tape.shape(s).to_vec();
        if shape.len() != 3 || shape[1] != self.seq_len || shape[2] != self.width {
            return Err(DiffError::ShapeMismatch { op: "sequence_encoder", left: shape, right: vec![0, self.seq_len, self.width] });
        }
        let p = tape.param(store, self.positional);
        let mut x = s;
        if self.positional_before {
            x = tape.add_bcast(x, p)?;
        }
        if let Some(tr) = &self.transformer {
            x = tr.forward(tape, store, x)?;
        }
        if !self.positional_before {
            x = tape.add_bcast(x, p)?;
        }
        let conv = self.tcn.forward(tape, store, x)?;
        let pooled = tape.avg_pool1d(conv, self.seq_len, self.seq_len)?;
        let pooled = tape.reshape(pooled, vec![shape[0], self.width])?;
        let h = self.hidden.forward(tape, store, pooled)?;
        let h = tape.leaky_relu(h, LEAKY_SLOPE);
        let out = self.out.forward(tape, store, h)?;
        Ok((x, out))
    }
}

#[derive(Debug, Clone)]
pub struct TimingMatters {
    pub embed: ActionEmbedder,
    pub diff_embed: DiffEmbedding,
    pub action_encoder: ActionEncoder,
    pub time_encoder: TimeEncoder,
    pub sequence_encoder: SequenceEncoder,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct TimingTrace {
    pub fields: ActionFields,
    /// Embedded time differences, `[b, l, d]`.
    pub diff_seq: Var,
    /// Time-difference path after the TCN, `[b, l, d]`.
    pub diff_conv: Var,
    /// Action encoder output, `[b * l, d]`.
    pub action: Var,
    /// Time encoder output, `[b * l, 3d]`.
    pub time: Var,
    /// Concatenated encodings, `[b, l, 4d]`.
    pub sequence: Var,
    /// Sequence after transformer and positional matrix, `[b, l, 4d]`.
    pub context: Var,
    pub output: Var,
}

impl TimingMatters {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self, DiffError> {
        let radial = match cfg.ablation {
            Ablation::MinusRbf => ScalarKind::Time2Vec,
            _ => ScalarKind::Rbf,
        };
        Ok(Self {
            embed: ActionEmbedder::new(store, "embed", cfg.num_devices, cfg.num_controls, cfg.dim, cfg.day_period, radial, rng)?,
            diff_embed: DiffEmbedding::new(store, "embed/diff", cfg.dim, rng)?,
            action_encoder: ActionEncoder::new(store, cfg, rng)?,
            time_encoder: TimeEncoder::new(store, cfg, rng)?,
            sequence_encoder: SequenceEncoder::new(store, cfg, rng)?,
        })
    }

    pub fn trace(&self, tape: &mut Tape, store: &ParamStore, batch: &Batch, train: bool) -> Result<TimingTrace, DiffError> {
        let (b, l) = (batch.size, batch.seq_len);
        let d = self.action_encoder.dim;
        let fields = self.embed.forward(tape, store, &batch.actions)?;
        let action = self.action_encoder.forward(
            tape,
            store,
            [fields.device, fields.control, fields.date_periodic, fields.date_radial],
        )?;
        let diffs = self.diff_embed.forward(tape, store, &batch.diffs)?;
        let diff_seq = tape.reshape(diffs, vec![b, l, d])?;
        let (diff_conv, time) =
            self.time_encoder.forward(tape, store, diff_seq, fields.time_periodic, fields.time_radial, train)?;
        let joined = tape.concat(&[action, time], 1)?;
        let sequence = tape.reshape(joined, vec![b, l, 4 * d])?;
        let (context, output) = self.sequence_encoder.forward(tape, store, sequence)?;
        Ok(TimingTrace { fields, diff_seq, diff_conv, action, time, sequence, context, output })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, batch: &Batch, train: bool) -> Result<Var, DiffError> {
        Ok(self.trace(tape, store, batch, train)?.output)
    }
}
