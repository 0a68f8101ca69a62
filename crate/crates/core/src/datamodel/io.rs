//! Line-delimited session files.
//!
//! The first line is a JSON header; every following line is one action with
//! five comma-separated integers. Consecutive groups of `session_len` lines
//! form one session.
//!
//! AN columns: `day_of_year,time_of_day_seconds,device,user,control`.
//! SmartSense columns: `day_of_week,time_range,device,control,device_control`.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::record::{ActionRecord, Schema, Session, Vocab, DEFAULT_SESSION_LEN};
use super::DataError;

pub const FORMAT_NAME: &str = "timing-sessions";
pub const FORMAT_VERSION: u32 = 1;
const COLUMNS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub schema: Schema,
    pub session_len: usize,
    pub num_devices: u32,
    pub num_controls: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_users: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_device_controls: Option<u32>,
}

impl DatasetHeader {
    pub fn an(num_devices: u32, num_controls: u32, num_users: u32) -> Self {
        Self {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            schema: Schema::An,
            session_len: DEFAULT_SESSION_LEN,
            num_devices,
            num_controls,
            num_users: Some(num_users),
            num_device_controls: None,
        }
    }

    pub fn smartsense(num_devices: u32, num_controls: u32, num_device_controls: u32) -> Self {
        Self {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            schema: Schema::SmartSense,
            session_len: DEFAULT_SESSION_LEN,
            num_devices,
            num_controls,
            num_users: None,
            num_device_controls: Some(num_device_controls),
        }
    }

    pub fn vocab(&self) -> Vocab {
        Vocab {
            devices: self.num_devices,
            controls: self.num_controls,
            users: self.num_users,
            device_controls: self.num_device_controls,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub sessions: Vec<Session>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DatasetSummary {
    pub schema: Schema,
    pub sessions: usize,
    pub actions: usize,
    pub devices_observed: usize,
    pub controls_observed: usize,
    pub users_observed: usize,
}

impl Dataset {
    pub fn new(header: DatasetHeader, sessions: Vec<Session>) -> Result<Self, DataError> {
        let ds = Self { header, sessions };
        ds.validate()?;
        Ok(ds)
    }

    pub fn schema(&self) -> Schema {
        self.header.schema
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let vocab = self.header.vocab();
        for (i, s) in self.sessions.iter().enumerate() {
            if s.schema != self.header.schema {
                return Err(DataError::SchemaMismatch { expected: self.header.schema, found: s.schema });
            }
            s.validate(self.header.session_len, &vocab, i * self.header.session_len)?;
        }
        if self.header.schema == Schema::SmartSense {
            check_device_control_consistency(&self.sessions)?;
        }
        Ok(())
    }

    pub fn summary(&self) -> DatasetSummary {
        let mut devices = BTreeSet::new();
        let mut controls = BTreeSet::new();
        let mut users = BTreeSet::new();
        let mut actions = 0;
        for s in &self.sessions {
            users.insert(s.user);
            for a in &s.actions {
                devices.insert(a.device);
                controls.insert(a.control);
                actions += 1;
            }
        }
        DatasetSummary {
            schema: self.header.schema,
            sessions: self.sessions.len(),
            actions,
            devices_observed: devices.len(),
            controls_observed: controls.len(),
            users_observed: if self.header.schema == Schema::An { users.len() } else { 0 },
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for s in &self.sessions {
            for a in &s.actions {
                let _ = match self.header.schema {
                    Schema::An => writeln!(out, "{},{},{},{},{}", a.day, a.time, a.device, a.user.unwrap_or(s.user), a.control),
                    Schema::SmartSense => writeln!(
                        out,
                        "{},{},{},{},{}",
                        a.day,
                        a.time,
                        a.device,
                        a.control,
                        a.device_control.unwrap_or(0)
                    ),
                };
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, DataError> {
        let mut lines = text.lines();
        let header_line = lines.next().ok_or(DataError::Malformed { row: 0, reason: "empty file".into() })?;
        let header: DatasetHeader = serde_json::from_str(header_line)
            .map_err(|e| DataError::Malformed { row: 0, reason: format!("bad header: {e}") })?;
        if header.format != FORMAT_NAME || header.version != FORMAT_VERSION {
            return Err(DataError::Malformed {
                row: 0,
                reason: format!("unsupported format {} v{}", header.format, header.version),
            });
        }
        if header.session_len < 2 {
            return Err(DataError::Malformed { row: 0, reason: "session_len must be at least 2".into() });
        }
        let vocab = header.vocab();
        let mut sessions = Vec::new();
        let mut current: Vec<ActionRecord> = Vec::with_capacity(header.session_len);
        let mut row = 0usize;
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != COLUMNS {
                return Err(DataError::Malformed {
                    row,
                    reason: format!("expected {COLUMNS} columns, found {}", fields.len()),
                });
            }
            let mut nums = [0u32; COLUMNS];
            for (slot, f) in nums.iter_mut().zip(&fields) {
                *slot = f
                    .parse()
                    .map_err(|_| DataError::Malformed { row, reason: format!("not a non-negative integer: {f:?}") })?;
            }
            let rec = match header.schema {
                Schema::An => ActionRecord::an(nums[0], nums[1], nums[2], nums[4], nums[3]),
                Schema::SmartSense => ActionRecord::smartsense(nums[0], nums[1], nums[2], nums[3], nums[4]),
            };
            super::record::check_record(&rec, header.schema, &vocab, row)?;
            current.push(rec);
            row += 1;
            if current.len() == header.session_len {
                let actions = std::mem::replace(&mut current, Vec::with_capacity(header.session_len));
                let user = match header.schema {
                    Schema::An => actions[0].user.unwrap_or(0),
                    Schema::SmartSense => sessions.len() as u32,
                };
                let session = Session { user, actions, schema: header.schema };
                session.validate(header.session_len, &vocab, row - header.session_len)?;
                sessions.push(session);
            }
        }
        if !current.is_empty() {
            return Err(DataError::Malformed {
                row,
                reason: format!("trailing partial session of {} actions", current.len()),
            });
        }
        let ds = Dataset { header, sessions };
        if ds.header.schema == Schema::SmartSense {
            check_device_control_consistency(&ds.sessions)?;
        }
        Ok(ds)
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        std::fs::write(path, self.to_text()).map_err(|e| DataError::Io(format!("{}: {e}", path.display())))
    }

    /// Hex SHA-256 of the serialized dataset.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

/// Each device-control id must always denote the same (device, control) pair.
fn check_device_control_consistency(sessions: &[Session]) -> Result<(), DataError> {
    let mut seen: HashMap<u32, (u32, u32)> = HashMap::new();
    for (si, s) in sessions.iter().enumerate() {
        for (ai, a) in s.actions.iter().enumerate() {
            let Some(dc) = a.device_control else { continue };
            let pair = (a.device, a.control);
            if let Some(prev) = seen.insert(dc, pair) {
                if prev != pair {
                    return Err(DataError::Malformed {
                        row: si * s.actions.len() + ai,
                        reason: format!("device control {dc} maps to both {prev:?} and {pair:?}"),
                    });
                }
            }
        }
    }
    Ok(())
}

fn expect_schema(ds: Dataset, schema: Schema) -> Result<Dataset, DataError> {
    if ds.header.schema != schema {
        return Err(DataError::SchemaMismatch { expected: schema, found: ds.header.schema });
    }
    Ok(ds)
}

pub fn load_an(path: &Path) -> Result<Dataset, DataError> {
    expect_schema(Dataset::load(path)?, Schema::An)
}

pub fn load_smartsense(path: &Path) -> Result<Dataset, DataError> {
    expect_schema(Dataset::load(path)?, Schema::SmartSense)
}

/// Name dictionaries stored next to a dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub devices: Vec<String>,
    pub controls: Vec<String>,
    /// Owning device of each control.
    pub control_device: Vec<u32>,
}

impl Vocabulary {
    pub fn sidecar_path(dataset: &Path) -> PathBuf {
        let mut name = dataset.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".vocab.json");
        dataset.with_file_name(name)
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let text = serde_json::to_string_pretty(self).expect("vocabulary serializes");
        std::fs::write(path, text + "\n").map_err(|e| DataError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| DataError::Malformed { row: 0, reason: format!("bad vocabulary: {e}") })
    }
}
