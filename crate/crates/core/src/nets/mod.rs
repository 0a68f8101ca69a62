//! The Timing-Matters network, its ablations, baselines and output heads.

pub mod baselines;
pub mod batch;
pub mod config;
pub mod layers;
pub mod timing;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datamodel::BinningScheme;
use crate::diffcore::{DiffError, ParamStore, Tape, Var};

pub use baselines::Baseline;
pub use batch::Batch;
pub use config::{Ablation, HeadKind, ModelConfig, ModelKind, UnknownName};
pub use timing::{TimingMatters, TimingTrace};

#[derive(Debug, Clone)]
pub enum Network {
    TimingMatters(TimingMatters),
    Baseline(Baseline),
}

/// A network together with its parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub network: Network,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, DiffError> {
        validate(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let network = match config.kind {
            ModelKind::TimingMatters => Network::TimingMatters(TimingMatters::new(&mut params, &config, &mut rng)?),
            _ => Network::Baseline(Baseline::new(&mut params, &config, &mut rng)?),
        };
        Ok(Self { config, params, network })
    }

    /// Logits `[b, num_bins]`, or `[b, 1]` fractions of the day for the
    /// regression head.
    pub fn forward(&self, tape: &mut Tape, batch: &Batch, train: bool) -> Result<Var, DiffError> {
        if batch.seq_len != self.config.seq_len {
            return Err(DiffError::Invalid(format!(
                "batch sequences have {} actions, model expects {}",
                batch.seq_len, self.config.seq_len
            )));
        }
        match &self.network {
            Network::TimingMatters(m) => m.forward(tape, &self.params, batch, train),
            Network::Baseline(m) => m.forward(tape, &self.params, batch),
        }
    }

    /// Cross-entropy against bin labels, or squared error against the
    /// target time as a fraction of the day.
    pub fn loss(&self, tape: &mut Tape, batch: &Batch, output: Var) -> Result<Var, DiffError> {
        match self.config.head {
            HeadKind::Classification => tape.cross_entropy(output, &batch.labels),
            HeadKind::Regression => {
                let target = tape.constant(vec![batch.size, 1], batch.normalized_targets())?;
                let diff = tape.sub(output, target)?;
                let sq = tape.square(diff);
                Ok(tape.mean_all(sq))
            }
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().filter(|(_, p)| p.trainable).map(|(_, p)| p.array.len()).sum()
    }
}

pub fn validate(cfg: &ModelConfig) -> Result<(), DiffError> {
    let bad = |m: String| Err(DiffError::Invalid(m));
    if cfg.dim < 2 {
        return bad(format!("embedding width must be at least 2, got {}", cfg.dim));
    }
    if cfg.seq_len == 0 || cfg.num_devices == 0 || cfg.num_controls == 0 {
        return bad("sequence length and vocabularies must be non-empty".into());
    }
    if cfg.head == HeadKind::Classification {
        BinningScheme::new(cfg.num_bins).map_err(|e| DiffError::Invalid(e.to_string()))?;
    }
    if cfg.heads == 0 || cfg.tcn_kernel == 0 || cfg.baseline_hidden == 0 || cfg.ff_width == 0 {
        return bad("heads, kernel and hidden widths must be positive".into());
    }
    let attn_width = match cfg.kind {
        ModelKind::TimingMatters => [cfg.dim, 4 * cfg.dim],
        _ => [baselines::BASELINE_FIELDS * cfg.dim; 2],
    };
    if attn_width.iter().any(|w| w % cfg.heads != 0) {
        return bad(format!("attention widths {attn_width:?} are not divisible into {} heads", cfg.heads));
    }
    if cfg.kind != ModelKind::TimingMatters && cfg.ablation != Ablation::Full {
        return bad(format!("ablation {} only applies to timing-matters", cfg.ablation));
    }
    if !(cfg.day_period > 0.0) {
        return bad("day period must be positive".into());
    }
    Ok(())
}
