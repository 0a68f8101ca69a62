use serde::{Deserialize, Serialize};

use super::record::SECONDS_PER_DAY;
use super::DataError;

/// Bin counts swept in the granularity study.
pub const SWEEP_BIN_COUNTS: [usize; 6] = [8, 12, 24, 48, 96, 288];

/// Partition of a day into `num_bins` equal intervals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinningScheme {
    num_bins: usize,
}

impl BinningScheme {
    pub fn new(num_bins: usize) -> Result<Self, DataError> {
        if num_bins == 0 || SECONDS_PER_DAY as usize % num_bins != 0 {
            return Err(DataError::UnsupportedBins(num_bins));
        }
        Ok(Self { num_bins })
    }

    /// 15-minute bins.
    pub fn fine() -> Self {
        Self { num_bins: 96 }
    }

    /// 3-hour bins.
    pub fn coarse() -> Self {
        Self { num_bins: 8 }
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn bin_width(&self) -> f64 {
        (SECONDS_PER_DAY as usize / self.num_bins) as f64
    }

    pub fn time_to_bin(&self, seconds: f64) -> Result<usize, DataError> {
        if !(0.0..SECONDS_PER_DAY as f64).contains(&seconds) {
            return Err(DataError::TimeOutOfRange(seconds));
        }
        Ok(((seconds / self.bin_width()).floor() as usize).min(self.num_bins - 1))
    }

    /// Midpoint of `bin` in seconds.
    pub fn representative_time(&self, bin: usize) -> Result<f64, DataError> {
        if bin >= self.num_bins {
            return Err(DataError::BinOutOfRange { bin, num_bins: self.num_bins });
        }
        Ok((bin as f64 + 0.5) * self.bin_width())
    }

    /// Maps a bin of this scheme onto a coarser scheme whose bin count divides ours.
    pub fn coarsen(&self, bin: usize, to: &BinningScheme) -> Result<usize, DataError> {
        if to.num_bins > self.num_bins || self.num_bins % to.num_bins != 0 {
            return Err(DataError::IncompatibleBins { from: self.num_bins, to: to.num_bins });
        }
        if bin >= self.num_bins {
            return Err(DataError::BinOutOfRange { bin, num_bins: self.num_bins });
        }
        Ok(bin / (self.num_bins / to.num_bins))
    }
}

pub fn time_to_bin(seconds: f64, scheme: &BinningScheme) -> Result<usize, DataError> {
    scheme.time_to_bin(seconds)
}

pub fn bin_to_representative_time(bin: usize, scheme: &BinningScheme) -> Result<f64, DataError> {
    scheme.representative_time(bin)
}

pub fn coarsen_bin(bin: usize, from: &BinningScheme, to: &BinningScheme) -> Result<usize, DataError> {
    from.coarsen(bin, to)
}
