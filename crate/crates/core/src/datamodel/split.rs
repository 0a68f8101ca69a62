use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::record::Session;
use super::DataError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: u32,
    pub val: u32,
    pub test: u32,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 7, val: 1, test: 2 }
    }
}

impl SplitRatios {
    fn total(&self) -> u64 {
        self.train as u64 + self.val as u64 + self.test as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    Train,
    Val,
    Test,
}

/// Disjoint train/val/test partitions. Every read goes through an accessor
/// that is recorded, so callers can verify that test data was untouched
/// until final evaluation.
#[derive(Debug)]
pub struct DatasetSplit {
    train: Vec<Session>,
    val: Vec<Session>,
    test: Vec<Session>,
    pub ratios: SplitRatios,
    pub seed: u64,
    access_log: Mutex<Vec<Partition>>,
}

impl Clone for DatasetSplit {
    fn clone(&self) -> Self {
        Self {
            train: self.train.clone(),
            val: self.val.clone(),
            test: self.test.clone(),
            ratios: self.ratios,
            seed: self.seed,
            access_log: Mutex::new(Vec::new()),
        }
    }
}

impl DatasetSplit {
    pub fn from_parts(train: Vec<Session>, val: Vec<Session>, test: Vec<Session>) -> Self {
        Self { train, val, test, ratios: SplitRatios::default(), seed: 0, access_log: Mutex::new(Vec::new()) }
    }

    fn log(&self, p: Partition) {
        let mut log = self.access_log.lock().expect("access log poisoned");
        if log.last() != Some(&p) {
            log.push(p);
        }
    }

    pub fn train(&self) -> &[Session] {
        self.log(Partition::Train);
        &self.train
    }

    pub fn val(&self) -> &[Session] {
        self.log(Partition::Val);
        &self.val
    }

    pub fn test(&self) -> &[Session] {
        self.log(Partition::Test);
        &self.test
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }

    /// Partitions in the order they were first and subsequently read
    /// (consecutive repeats collapsed).
    pub fn access_log(&self) -> Vec<Partition> {
        self.access_log.lock().expect("access log poisoned").clone()
    }

    pub fn clear_access_log(&self) {
        self.access_log.lock().expect("access log poisoned").clear();
    }
}

/// Seeded shuffle, then floor the train and validation sizes and give the
/// remainder to test.
pub fn split(sessions: &[Session], ratios: SplitRatios, seed: u64) -> Result<DatasetSplit, DataError> {
    if ratios.train == 0 || ratios.val == 0 || ratios.test == 0 {
        return Err(DataError::InvalidSplit("ratios must be positive".into()));
    }
    let n = sessions.len();
    if n < 3 {
        return Err(DataError::InvalidSplit(format!("{n} sessions cannot fill three partitions")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let total = ratios.total();
    let n_train = (n as u64 * ratios.train as u64 / total) as usize;
    let n_val = (n as u64 * ratios.val as u64 / total) as usize;
    let pick = |idx: &[usize]| idx.iter().map(|&i| sessions[i].clone()).collect::<Vec<_>>();
    Ok(DatasetSplit {
        train: pick(&order[..n_train]),
        val: pick(&order[n_train..n_train + n_val]),
        test: pick(&order[n_train + n_val..]),
        ratios,
        seed,
        access_log: Mutex::new(Vec::new()),
    })
}
