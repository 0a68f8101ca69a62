//! Routine-driven synthetic smart-home logs and the statistics reported on them.

pub mod analysis;
pub mod generator;
pub mod routines;

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{DataError, Vocabulary, DEFAULT_SESSION_LEN, MAX_DAY_OF_YEAR};

pub use analysis::{analyze_device_frequency, analyze_time_diffs, DeviceFrequency, DiffHistogram, DEFAULT_DIFF_EDGES};
pub use generator::{generate, generate_dataset, generate_streams};
pub use routines::{RoutineBank, RoutineSpec, RoutineTemplate};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("invalid routine bank: {0}")]
    InvalidBank(String),
    #[error("infeasible target: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub num_users: u32,
    pub num_devices: u32,
    pub num_controls: u32,
    pub target_instances: usize,
    /// Inclusive day-of-year range.
    pub first_day: u32,
    pub last_day: u32,
    pub session_len: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            num_users: 39,
            num_devices: 16,
            num_controls: 121,
            target_instances: 11_665,
            // 2023-04-01 ..= 2023-12-31
            first_day: 90,
            last_day: 364,
            session_len: DEFAULT_SESSION_LEN,
            seed: 7,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), SynError> {
        let bad = |m: &str| Err(SynError::InvalidConfig(m.to_string()));
        if self.num_users == 0 || self.num_devices == 0 {
            return bad("need at least one user and one device");
        }
        if self.num_controls < self.num_devices {
            return bad("every device needs at least one control");
        }
        if self.first_day > self.last_day || self.last_day > MAX_DAY_OF_YEAR {
            return bad("day range must be ordered and within the year");
        }
        if self.session_len < 2 {
            return bad("sessions need at least two actions");
        }
        if self.target_instances == 0 {
            return bad("target instance count must be positive");
        }
        Ok(())
    }

    fn controls_per_device(&self) -> (u32, u32) {
        (self.num_controls / self.num_devices, self.num_controls % self.num_devices)
    }

    /// Controls are laid out contiguously; the first `num_controls % num_devices`
    /// devices own one extra control.
    pub fn device_controls(&self, device: u32) -> Range<u32> {
        let (base, extra) = self.controls_per_device();
        let start = device * base + device.min(extra);
        start..start + base + u32::from(device < extra)
    }

    pub fn control_device(&self, control: u32) -> u32 {
        let (base, extra) = self.controls_per_device();
        let wide = extra * (base + 1);
        if control < wide {
            control / (base + 1)
        } else {
            extra + (control - wide) / base
        }
    }

    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary {
            devices: (0..self.num_devices).map(|d| format!("device_{d:02}")).collect(),
            controls: (0..self.num_controls)
                .map(|c| format!("device_{:02}.control_{c:03}", self.control_device(c)))
                .collect(),
            control_device: (0..self.num_controls).map(|c| self.control_device(c)).collect(),
        }
    }
}
