use serde::{Deserialize, Serialize};

use super::DataError;

pub const SECONDS_PER_DAY: u32 = 86_400;
/// SmartSense logs only carry one of eight 3-hour ranges.
pub const SMARTSENSE_TIME_RANGES: u32 = 8;
/// Day-of-year is 0-based and covers leap years.
pub const MAX_DAY_OF_YEAR: u32 = 365;
pub const DEFAULT_SESSION_LEN: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Schema {
    /// Second-resolution timestamps, day-of-year, per-sequence user ids.
    #[serde(rename = "AN")]
    An,
    /// 3-hour time range index and day-of-week.
    #[serde(rename = "SmartSense")]
    SmartSense,
}

impl Schema {
    pub fn time_limit(self) -> u32 {
        match self {
            Schema::An => SECONDS_PER_DAY,
            Schema::SmartSense => SMARTSENSE_TIME_RANGES,
        }
    }

    pub fn day_limit(self) -> u32 {
        match self {
            Schema::An => MAX_DAY_OF_YEAR + 1,
            Schema::SmartSense => 7,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Schema::An => "AN",
            Schema::SmartSense => "SmartSense",
        }
    }
}

/// One timestamped device interaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionRecord {
    pub device: u32,
    pub control: u32,
    /// Day-of-year (AN) or day-of-week (SmartSense).
    pub day: u32,
    /// Seconds after midnight (AN) or 3-hour range index (SmartSense).
    pub time: u32,
    /// AN only.
    pub user: Option<u32>,
    /// SmartSense only: the combined device-control id column.
    pub device_control: Option<u32>,
}

impl ActionRecord {
    pub fn an(day: u32, time: u32, device: u32, control: u32, user: u32) -> Self {
        Self { device, control, day, time, user: Some(user), device_control: None }
    }

    pub fn smartsense(day: u32, time_range: u32, device: u32, control: u32, device_control: u32) -> Self {
        Self { device, control, day, time: time_range, user: None, device_control: Some(device_control) }
    }

    /// Absolute AN timestamp in seconds from the start of day-of-year 0.
    pub fn absolute_seconds(&self) -> u64 {
        self.day as u64 * SECONDS_PER_DAY as u64 + self.time as u64
    }
}

/// Vocabulary sizes a record must respect.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vocab {
    pub devices: u32,
    pub controls: u32,
    pub users: Option<u32>,
    pub device_controls: Option<u32>,
}

pub(crate) fn check_record(rec: &ActionRecord, schema: Schema, vocab: &Vocab, row: usize) -> Result<(), DataError> {
    let range = |field: &'static str, value: u32, limit: u32| -> Result<(), DataError> {
        if value >= limit {
            Err(DataError::OutOfRange { row, field, value: value as u64, limit: limit as u64 })
        } else {
            Ok(())
        }
    };
    range("day", rec.day, schema.day_limit())?;
    range("time", rec.time, schema.time_limit())?;
    range("device", rec.device, vocab.devices)?;
    range("control", rec.control, vocab.controls)?;
    match schema {
        Schema::An => {
            let user = rec.user.ok_or(DataError::Malformed { row, reason: "AN record without user".into() })?;
            if let Some(limit) = vocab.users {
                range("user", user, limit)?;
            }
        }
        Schema::SmartSense => {
            let dc = rec
                .device_control
                .ok_or(DataError::Malformed { row, reason: "SmartSense record without device control".into() })?;
            if let Some(limit) = vocab.device_controls {
                range("device_control", dc, limit)?;
            }
        }
    }
    Ok(())
}

/// A window of consecutive actions. All but the last are model input; the
/// last supplies the target time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    /// User id for AN data; instance index for SmartSense data.
    pub user: u32,
    pub actions: Vec<ActionRecord>,
    pub schema: Schema,
}

impl Session {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn inputs(&self) -> &[ActionRecord] {
        &self.actions[..self.actions.len().saturating_sub(1)]
    }

    pub fn target(&self) -> &ActionRecord {
        self.actions.last().expect("sessions are never empty")
    }

    /// Checks length, field ranges, per-session user consistency and, for AN
    /// data, non-decreasing (day, time). `first_row` is used in error reports.
    pub fn validate(&self, expected_len: usize, vocab: &Vocab, first_row: usize) -> Result<(), DataError> {
        if self.actions.len() != expected_len {
            return Err(DataError::Malformed {
                row: first_row,
                reason: format!("session has {} actions, expected {expected_len}", self.actions.len()),
            });
        }
        for (i, rec) in self.actions.iter().enumerate() {
            check_record(rec, self.schema, vocab, first_row + i)?;
        }
        if self.schema == Schema::An {
            for (i, pair) in self.actions.windows(2).enumerate() {
                if pair[1].user != pair[0].user {
                    return Err(DataError::Malformed { row: first_row + i + 1, reason: "user changes inside a session".into() });
                }
                if (pair[1].day, pair[1].time) < (pair[0].day, pair[0].time) {
                    return Err(DataError::NonMonotone { row: first_row + i + 1 });
                }
            }
        }
        Ok(())
    }
}
