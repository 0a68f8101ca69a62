//! Scalar-time and categorical embeddings.
//!
//! Time of day enters as `seconds / 86400`, dates as `day / day_period`, and
//! time differences in days multiplied by a trainable factor.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datamodel::SECONDS_PER_DAY;
use crate::diffcore::tape::softplus;
use crate::diffcore::{DiffError, ParamId, ParamStore, Tape, Var};

/// Number of day-of-year values the AN date is normalised by.
pub const DAY_OF_YEAR_PERIOD: f64 = 366.0;
pub const DAY_OF_WEEK_PERIOD: f64 = 7.0;
/// Starting value of the trainable time-difference factor.
pub const DIFF_SCALE_INIT: f64 = 1.0;

fn uniform(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn check_column(tape: &Tape, tau: Var, op: &'static str) -> Result<usize, DiffError> {
    let s = tape.shape(tau);
    if s.len() != 2 || s[1] != 1 {
        return Err(DiffError::ShapeMismatch { op, left: s.to_vec(), right: vec![0, 1] });
    }
    Ok(s[0])
}

/// `[linear, sin, sin, ...]` projection of a scalar.
#[derive(Debug, Clone)]
pub struct Time2Vec {
    pub k: usize,
    pub omega: ParamId,
    pub phase: ParamId,
}

impl Time2Vec {
    pub fn new(store: &mut ParamStore, prefix: &str, k: usize, rng: &mut impl Rng) -> Result<Self, DiffError> {
        if k < 2 {
            return Err(DiffError::Invalid(format!("time2vec needs k >= 2, got {k}")));
        }
        let omega = store.add(format!("{prefix}/omega"), vec![1, k], uniform(rng, k, -1.0, 1.0), true)?;
        let phase = store.add(format!("{prefix}/phase"), vec![k], uniform(rng, k, -1.0, 1.0), true)?;
        Ok(Self { k, omega, phase })
    }

    /// `tau` is `[n, 1]`; the result is `[n, k]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, tau: Var) -> Result<Var, DiffError> {
        check_column(tape, tau, "time2vec")?;
        let omega = tape.param(store, self.omega);
        let phase = tape.param(store, self.phase);
        let lin = tape.matmul(tau, omega)?;
        let pre = tape.add_bcast(lin, phase)?;
        let linear = tape.narrow(pre, 1, 0, 1)?;
        let rest = tape.narrow(pre, 1, 1, self.k - 1)?;
        let periodic = tape.sin(rest);
        tape.concat(&[linear, periodic], 1)
    }
}

/// `exp(-|tau - centre| / width)` against `k` learnable centres.
#[derive(Debug, Clone)]
pub struct Rbf {
    pub k: usize,
    pub centres: ParamId,
    /// Pre-softplus widths.
    pub raw_widths: ParamId,
}

impl Rbf {
    /// Centres evenly spaced over `[0, 1)`, widths about two spacings.
    pub fn new(store: &mut ParamStore, prefix: &str, k: usize) -> Result<Self, DiffError> {
        if k == 0 {
            return Err(DiffError::Invalid("rbf needs k >= 1".into()));
        }
        let centres = (0..k).map(|i| i as f64 / k as f64).collect();
        let width = 2.0 / k as f64;
        let raw = width.exp_m1().ln();
        let centres = store.add(format!("{prefix}/centres"), vec![k], centres, true)?;
        let raw_widths = store.add(format!("{prefix}/raw_widths"), vec![k], vec![raw; k], true)?;
        Ok(Self { k, centres, raw_widths })
    }

    pub fn widths(&self, store: &ParamStore) -> Vec<f64> {
        store.values(self.raw_widths).iter().map(|&r| softplus(r)).collect()
    }

    /// `tau` is `[n, 1]`; the result is `[n, k]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, tau: Var) -> Result<Var, DiffError> {
        check_column(tape, tau, "rbf")?;
        let ones = tape.constant(vec![1, self.k], vec![1.0; self.k])?;
        let spread = tape.matmul(tau, ones)?;
        let centres = tape.param(store, self.centres);
        let neg_centres = tape.neg(centres);
        let offset = tape.add_bcast(spread, neg_centres)?;
        let dist = tape.neg_abs(offset);
        let raw = tape.param(store, self.raw_widths);
        let width = tape.softplus(raw);
        let inv = tape.recip(width);
        let scaled = tape.mul_bcast(dist, inv)?;
        Ok(tape.exp(scaled))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarKind {
    Time2Vec,
    Rbf,
}

/// Either scalar embedding behind one interface.
#[derive(Debug, Clone)]
pub enum ScalarEmbedding {
    Time2Vec(Time2Vec),
    Rbf(Rbf),
}

impl ScalarEmbedding {
    pub fn new(kind: ScalarKind, store: &mut ParamStore, prefix: &str, k: usize, rng: &mut impl Rng) -> Result<Self, DiffError> {
        Ok(match kind {
            ScalarKind::Time2Vec => Self::Time2Vec(Time2Vec::new(store, &format!("{prefix}/t2v"), k, rng)?),
            ScalarKind::Rbf => Self::Rbf(Rbf::new(store, &format!("{prefix}/rbf"), k)?),
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, tau: Var) -> Result<Var, DiffError> {
        match self {
            Self::Time2Vec(l) => l.forward(tape, store, tau),
            Self::Rbf(l) => l.forward(tape, store, tau),
        }
    }
}

/// Trainable `[vocab, dim]` table.
#[derive(Debug, Clone)]
pub struct Lookup {
    pub vocab: usize,
    pub dim: usize,
    pub table: ParamId,
}

impl Lookup {
    pub fn new(store: &mut ParamStore, name: &str, vocab: usize, dim: usize, rng: &mut impl Rng) -> Result<Self, DiffError> {
        let values = (0..vocab * dim).map(|_| StandardNormal.sample(rng)).collect();
        let table = store.add(name, vec![vocab, dim], values, true)?;
        Ok(Self { vocab, dim, table })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, indices: &[usize]) -> Result<Var, DiffError> {
        let table = tape.param(store, self.table);
        tape.embedding(table, indices)
    }
}

/// Time differences converted to days, times a trainable factor, through Time2Vec.
#[derive(Debug, Clone)]
pub struct DiffEmbedding {
    pub scale: ParamId,
    pub t2v: Time2Vec,
}

impl DiffEmbedding {
    pub fn new(store: &mut ParamStore, prefix: &str, k: usize, rng: &mut impl Rng) -> Result<Self, DiffError> {
        let scale = store.add(format!("{prefix}/scale"), vec![1], vec![DIFF_SCALE_INIT], true)?;
        let t2v = Time2Vec::new(store, &format!("{prefix}/t2v"), k, rng)?;
        Ok(Self { scale, t2v })
    }

    /// `diffs` in seconds; one output row per entry.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, diffs: &[f64]) -> Result<Var, DiffError> {
        let days = diffs.iter().map(|d| d / SECONDS_PER_DAY as f64).collect();
        let raw = tape.constant(vec![diffs.len(), 1], days)?;
        let scale = tape.param(store, self.scale);
        let scaled = tape.mul_bcast(raw, scale)?;
        self.t2v.forward(tape, store, scaled)
    }
}

/// Flat per-action inputs: one entry per action across all sequences.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActionInputs {
    pub devices: Vec<usize>,
    pub controls: Vec<usize>,
    /// Seconds after midnight.
    pub time_of_day: Vec<f64>,
    pub day: Vec<f64>,
}

impl ActionInputs {
    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }
}

/// The six per-action vectors, each `[n, d]`.
#[derive(Debug, Clone, Copy)]
pub struct ActionFields {
    pub device: Var,
    pub control: Var,
    pub time_periodic: Var,
    pub time_radial: Var,
    pub date_periodic: Var,
    pub date_radial: Var,
}

#[derive(Debug, Clone)]
pub struct ActionEmbedder {
    pub dim: usize,
    pub day_period: f64,
    pub device: Lookup,
    pub control: Lookup,
    pub time_periodic: Time2Vec,
    pub time_radial: ScalarEmbedding,
    pub date_periodic: Time2Vec,
    pub date_radial: ScalarEmbedding,
}

impl ActionEmbedder {
    /// `radial` picks the second temporal embedding; `Time2Vec` swaps out the
    /// RBF layers.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        num_devices: usize,
        num_controls: usize,
        dim: usize,
        day_period: f64,
        radial: ScalarKind,
        rng: &mut impl Rng,
    ) -> Result<Self, DiffError> {
        Ok(Self {
            dim,
            day_period,
            device: Lookup::new(store, &format!("{prefix}/device"), num_devices, dim, rng)?,
            control: Lookup::new(store, &format!("{prefix}/control"), num_controls, dim, rng)?,
            time_periodic: Time2Vec::new(store, &format!("{prefix}/time/t2v"), dim, rng)?,
            time_radial: ScalarEmbedding::new(radial, store, &format!("{prefix}/time/radial"), dim, rng)?,
            date_periodic: Time2Vec::new(store, &format!("{prefix}/date/t2v"), dim, rng)?,
            date_radial: ScalarEmbedding::new(radial, store, &format!("{prefix}/date/radial"), dim, rng)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, inputs: &ActionInputs) -> Result<ActionFields, DiffError> {
        let n = inputs.len();
        if inputs.controls.len() != n || inputs.time_of_day.len() != n || inputs.day.len() != n {
            return Err(DiffError::Invalid("action input columns differ in length".into()));
        }
        let tod = inputs.time_of_day.iter().map(|t| t / SECONDS_PER_DAY as f64).collect();
        let date = inputs.day.iter().map(|d| d / self.day_period).collect();
        let tod = tape.constant(vec![n, 1], tod)?;
        let date = tape.constant(vec![n, 1], date)?;
        Ok(ActionFields {
            device: self.device.forward(tape, store, &inputs.devices)?,
            control: self.control.forward(tape, store, &inputs.controls)?,
            time_periodic: self.time_periodic.forward(tape, store, tod)?,
            time_radial: self.time_radial.forward(tape, store, tod)?,
            date_periodic: self.date_periodic.forward(tape, store, date)?,
            date_radial: self.date_radial.forward(tape, store, date)?,
        })
    }
}
