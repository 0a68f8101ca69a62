use super::binning::BinningScheme;
use super::io::{Dataset, DatasetHeader};
use super::record::{ActionRecord, Schema, Session, SMARTSENSE_TIME_RANGES};
use super::stream::time_diffs;
use super::DataError;

/// Weekday of day-of-year 0 (Monday = 0). 2023-01-01 was a Sunday.
pub const YEAR_START_WEEKDAY: u32 = 6;
const RANGE_SECONDS: f64 = 10_800.0;

/// Model-facing view of one session: features of the input actions only,
/// plus the target derived from the final action.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub devices: Vec<usize>,
    pub controls: Vec<usize>,
    /// Seconds after midnight of each input action.
    pub time_of_day: Vec<f64>,
    /// Day index (day-of-year or day-of-week).
    pub day: Vec<f64>,
    /// Seconds since the previous input action, 0 for the first.
    pub diffs: Vec<f64>,
    pub target_seconds: f64,
    pub label: usize,
}

impl Example {
    pub fn from_session(session: &Session, scheme: &BinningScheme) -> Result<Self, DataError> {
        let inputs = session.inputs();
        let time_of_day = |a: &ActionRecord| match session.schema {
            Schema::An => a.time as f64,
            Schema::SmartSense => (a.time as f64 + 0.5) * RANGE_SECONDS,
        };
        let target = session.target();
        let target_seconds = time_of_day(target);
        let label = match session.schema {
            Schema::An => scheme.time_to_bin(target_seconds)?,
            Schema::SmartSense => {
                let k = scheme.num_bins() as u32;
                if k > SMARTSENSE_TIME_RANGES || SMARTSENSE_TIME_RANGES % k != 0 {
                    return Err(DataError::CoarseTimeOnly(scheme.num_bins()));
                }
                (target.time / (SMARTSENSE_TIME_RANGES / k)) as usize
            }
        };
        Ok(Self {
            devices: inputs.iter().map(|a| a.device as usize).collect(),
            controls: inputs.iter().map(|a| a.control as usize).collect(),
            time_of_day: inputs.iter().map(time_of_day).collect(),
            day: inputs.iter().map(|a| a.day as f64).collect(),
            diffs: time_diffs(inputs, session.schema),
            target_seconds,
            label,
        })
    }

    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }
}

pub fn examples(sessions: &[Session], scheme: &BinningScheme) -> Result<Vec<Example>, DataError> {
    sessions.iter().map(|s| Example::from_session(s, scheme)).collect()
}

pub fn weekday_of(day_of_year: u32) -> u32 {
    (day_of_year + YEAR_START_WEEKDAY) % 7
}

/// Re-expresses AN data in the SmartSense schema: weekday, 3-hour range and
/// a combined `device * num_controls + control` id.
pub fn an_to_smartsense(ds: &Dataset) -> Result<Dataset, DataError> {
    if ds.header.schema != Schema::An {
        return Err(DataError::SchemaMismatch { expected: Schema::An, found: ds.header.schema });
    }
    let coarse = BinningScheme::coarse();
    let nc = ds.header.num_controls;
    let mut sessions = Vec::with_capacity(ds.sessions.len());
    for (i, s) in ds.sessions.iter().enumerate() {
        let actions = s
            .actions
            .iter()
            .map(|a| {
                let range = coarse.time_to_bin(a.time as f64)? as u32;
                Ok(ActionRecord::smartsense(weekday_of(a.day), range, a.device, a.control, a.device * nc + a.control))
            })
            .collect::<Result<Vec<_>, DataError>>()?;
        sessions.push(Session { user: i as u32, actions, schema: Schema::SmartSense });
    }
    let mut header = DatasetHeader::smartsense(ds.header.num_devices, nc, ds.header.num_devices * nc);
    header.session_len = ds.header.session_len;
    Dataset::new(header, sessions)
}
