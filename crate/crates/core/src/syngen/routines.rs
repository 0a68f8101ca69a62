//! Per-user routine banks: the editable description of who does what, when.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GeneratorConfig, SynError};
use crate::datamodel::SECONDS_PER_DAY;

pub const ALL_DAYS: u8 = 0b111_1111;
pub const WEEKDAYS: u8 = 0b001_1111;
pub const WEEKEND: u8 = 0b110_0000;

/// One habitual action: a device control issued around an anchor time of day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutineTemplate {
    pub device: u32,
    pub control: u32,
    /// Anchor, seconds after midnight.
    pub mean_time: f64,
    /// Gaussian jitter standard deviation in seconds; 0 fires exactly on time.
    pub jitter_sd: f64,
    /// Bit `d` set means the routine can fire on weekday `d` (Monday = 0).
    pub weekdays: u8,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutineSpec {
    pub user: u32,
    pub routines: Vec<RoutineTemplate>,
    /// Expected non-routine actions per day.
    pub noise_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutineBank {
    pub users: Vec<RoutineSpec>,
}

const DEFAULT_BANK: &str = include_str!("../../assets/routines_default.json");

impl RoutineBank {
    /// The shipped 39-user bank.
    pub fn default_bank() -> Self {
        serde_json::from_str(DEFAULT_BANK).expect("bundled routine bank parses")
    }

    pub fn from_json(text: &str) -> Result<Self, SynError> {
        serde_json::from_str(text).map_err(|e| SynError::InvalidBank(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bank serializes") + "\n"
    }

    pub fn validate(&self, cfg: &GeneratorConfig) -> Result<(), SynError> {
        for spec in &self.users {
            if spec.user >= cfg.num_users {
                return Err(SynError::InvalidBank(format!("user {} >= {}", spec.user, cfg.num_users)));
            }
            if !(spec.noise_rate >= 0.0 && spec.noise_rate.is_finite()) {
                return Err(SynError::InvalidBank(format!("user {}: noise rate {}", spec.user, spec.noise_rate)));
            }
            for r in &spec.routines {
                let ok = (0.0..SECONDS_PER_DAY as f64).contains(&r.mean_time)
                    && r.jitter_sd >= 0.0
                    && r.jitter_sd.is_finite()
                    && (0.0..=1.0).contains(&r.probability)
                    && r.device < cfg.num_devices
                    && r.control < cfg.num_controls
                    && cfg.control_device(r.control) == r.device
                    && r.weekdays & ALL_DAYS != 0;
                if !ok {
                    return Err(SynError::InvalidBank(format!("user {}: bad routine {r:?}", spec.user)));
                }
            }
        }
        Ok(())
    }

    pub fn spec_for(&self, user: u32) -> Option<&RoutineSpec> {
        self.users.iter().find(|s| s.user == user)
    }

    /// Draws a fresh bank: each user favours a handful of devices and follows
    /// a few daily anchors spread between early morning and late evening.
    pub fn synthesize(cfg: &GeneratorConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let users = (0..cfg.num_users)
            .map(|user| {
                let n_fav = rng.random_range(3..=5);
                let favourites: Vec<u32> = (0..n_fav).map(|_| rng.random_range(0..cfg.num_devices)).collect();
                let n_routines = rng.random_range(4..=7);
                let mut anchors: Vec<f64> = Vec::new();
                while anchors.len() < n_routines {
                    let t = rng.random_range(5.5 * 3600.0..23.5 * 3600.0_f64).round();
                    if anchors.iter().all(|a| (a - t).abs() >= 2400.0) {
                        anchors.push(t);
                    }
                }
                anchors.sort_by(f64::total_cmp);
                let routines = anchors
                    .into_iter()
                    .map(|mean_time| {
                        let device = if rng.random_bool(0.75) {
                            favourites[rng.random_range(0..favourites.len())]
                        } else {
                            rng.random_range(0..cfg.num_devices)
                        };
                        let owned = cfg.device_controls(device);
                        let control = rng.random_range(owned);
                        let weekdays = match rng.random_range(0..20) {
                            0..=13 => ALL_DAYS,
                            14..=16 => WEEKDAYS,
                            _ => WEEKEND,
                        };
                        RoutineTemplate {
                            device,
                            control,
                            mean_time,
                            jitter_sd: rng.random_range(180.0..720.0_f64).round(),
                            weekdays,
                            probability: (rng.random_range(0.65..0.95_f64) * 100.0).round() / 100.0,
                        }
                    })
                    .collect();
                RoutineSpec { user, routines, noise_rate: (rng.random_range(0.3..0.8_f64) * 100.0).round() / 100.0 }
            })
            .collect();
        Self { users }
    }
}
