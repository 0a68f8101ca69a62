//! Dataset schemas, session files, time binning and splitting.

pub mod binning;
pub mod features;
pub mod io;
pub mod record;
pub mod split;
pub mod stream;

use thiserror::Error;

pub use binning::{bin_to_representative_time, coarsen_bin, time_to_bin, BinningScheme, SWEEP_BIN_COUNTS};
pub use features::{an_to_smartsense, examples, Example};
pub use io::{load_an, load_smartsense, Dataset, DatasetHeader, DatasetSummary, Vocabulary};
pub use record::{
    ActionRecord, Schema, Session, Vocab, DEFAULT_SESSION_LEN, MAX_DAY_OF_YEAR, SECONDS_PER_DAY, SMARTSENSE_TIME_RANGES,
};
pub use split::{split, DatasetSplit, Partition, SplitRatios};
pub use stream::{reconstruct_streams, time_diffs, window_stream, window_streams, ActionStream};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("row {row}: {reason}")]
    Malformed { row: usize, reason: String },
    #[error("row {row}: {field} = {value} out of range (limit {limit})")]
    OutOfRange { row: usize, field: &'static str, value: u64, limit: u64 },
    #[error("row {row}: timestamps decrease inside a session")]
    NonMonotone { row: usize },
    #[error("expected {expected:?} data, found {found:?}")]
    SchemaMismatch { expected: Schema, found: Schema },
    #[error("time {0} s is outside [0, 86400)")]
    TimeOutOfRange(f64),
    #[error("bin {bin} out of range for {num_bins} bins")]
    BinOutOfRange { bin: usize, num_bins: usize },
    #[error("cannot coarsen {from} bins into {to}")]
    IncompatibleBins { from: usize, to: usize },
    #[error("unsupported bin count {0}: 86400 is not divisible by it")]
    UnsupportedBins(usize),
    #[error("SmartSense-style data only carries 3-hour time ranges; {0} bins need precise timestamps")]
    CoarseTimeOnly(usize),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("io: {0}")]
    Io(String),
}
