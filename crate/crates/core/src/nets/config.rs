use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::DAY_OF_YEAR_PERIOD;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown {kind} {name:?}; expected one of {expected}")]
pub struct UnknownName {
    pub kind: &'static str,
    pub name: String,
    pub expected: String,
}

macro_rules! named_enum {
    ($(#[$meta:meta])* $ty:ident, $kind:literal, { $($variant:ident => $name:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
        pub enum $ty {
            $(#[serde(rename = $name)] $variant),+
        }

        impl $ty {
            pub const ALL: &'static [$ty] = &[$($ty::$variant),+];

            pub fn name(self) -> &'static str {
                match self {
                    $($ty::$variant => $name),+
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $ty {
            type Err = UnknownName;

            fn from_str(s: &str) -> Result<Self, UnknownName> {
                match s {
                    $($name => Ok($ty::$variant),)+
                    _ => Err(UnknownName {
                        kind: $kind,
                        name: s.to_string(),
                        expected: [$($name),+].join(", "),
                    }),
                }
            }
        }
    };
}

named_enum!(
    /// Network family.
    ModelKind, "model", {
        TimingMatters => "timing-matters",
        Mlp => "mlp",
        Mlp2Step => "mlp-2step",
        Lstm => "lstm",
        MlpLstm => "mlp-lstm",
        Lstm2Step => "lstm-2step",
        Transformer => "transformer",
    }
);

named_enum!(
    /// Component removed from the full model.
    Ablation, "ablation", {
        Full => "full",
        MinusRbf => "minus-rbf",
        MinusTimeEncoder => "minus-time-encoder",
        MinusSequenceEncoder => "minus-sequence-encoder",
    }
);

named_enum!(
    /// Bin logits, or a single time-of-day value.
    HeadKind, "head", {
        Classification => "classification",
        Regression => "regression",
    }
);

impl ModelKind {
    pub const BASELINES: &'static [ModelKind] =
        &[ModelKind::Mlp, ModelKind::Mlp2Step, ModelKind::Lstm, ModelKind::MlpLstm, ModelKind::Lstm2Step, ModelKind::Transformer];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub ablation: Ablation,
    pub head: HeadKind,
    /// Width of every per-field embedding.
    pub dim: usize,
    /// Input actions per session (the final action is the target).
    pub seq_len: usize,
    pub num_bins: usize,
    pub num_devices: usize,
    pub num_controls: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_width: usize,
    pub tcn_kernel: usize,
    /// Hidden width of the baseline networks.
    pub baseline_hidden: usize,
    /// Add the positional matrix before the sequence transformer instead of after.
    pub positional_before: bool,
    /// Dates are fed as `day / day_period`.
    pub day_period: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::TimingMatters,
            ablation: Ablation::Full,
            head: HeadKind::Classification,
            dim: 50,
            seq_len: 9,
            num_bins: 96,
            num_devices: 16,
            num_controls: 121,
            heads: 2,
            layers: 2,
            ff_width: 200,
            tcn_kernel: 2,
            baseline_hidden: 100,
            positional_before: false,
            day_period: DAY_OF_YEAR_PERIOD,
        }
    }
}

impl ModelConfig {
    /// Width of the network output: one logit per bin, or one value.
    pub fn outputs(&self) -> usize {
        match self.head {
            HeadKind::Classification => self.num_bins,
            HeadKind::Regression => 1,
        }
    }
}
