//! Dataset statistics: inter-action time differences and top-device counts.

use std::collections::HashMap;

use crate::datamodel::{time_diffs, Session};
use crate::table::Table;

/// Lower bucket edges in seconds; the last bucket is open-ended.
pub const DEFAULT_DIFF_EDGES: [f64; 10] = [0.0, 60.0, 300.0, 900.0, 1800.0, 3600.0, 7200.0, 14400.0, 28800.0, 86400.0];

#[derive(Debug, Clone, PartialEq)]
pub struct DiffHistogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl DiffHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bucket_of(&self, diff: f64) -> Option<usize> {
        if self.edges.is_empty() || diff < self.edges[0] {
            return None;
        }
        Some(self.edges.partition_point(|&e| e <= diff) - 1)
    }

    /// Largest fraction of mass held by any single bucket.
    pub fn max_share(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        *self.counts.iter().max().unwrap_or(&0) as f64 / total as f64
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(["lower_s", "upper_s", "count", "share"]);
        let total = self.total().max(1) as f64;
        for (i, &c) in self.counts.iter().enumerate() {
            let upper = self.edges.get(i + 1).map_or("inf".to_string(), |u| format!("{u}"));
            t.push(vec![format!("{}", self.edges[i]), upper, c.to_string(), format!("{:.4}", c as f64 / total)]);
        }
        t
    }
}

/// Histogram of the differences between consecutive actions of every session.
pub fn analyze_time_diffs(sessions: &[Session], edges: &[f64]) -> DiffHistogram {
    let mut hist = DiffHistogram { edges: edges.to_vec(), counts: vec![0; edges.len()] };
    for s in sessions {
        for &d in time_diffs(&s.actions, s.schema).iter().skip(1) {
            if let Some(b) = hist.bucket_of(d) {
                hist.counts[b] += 1;
            }
        }
    }
    hist
}

/// Joint counts of the most and second most frequent device per session.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceFrequency {
    /// `matrix[top][second]` = number of sessions.
    pub matrix: Vec<Vec<u64>>,
    /// Occurrences of each device across all sessions.
    pub device_totals: Vec<u64>,
    pub sessions: usize,
    pub actions: usize,
}

impl DeviceFrequency {
    /// Mean share of a session's actions taken by its two most frequent devices.
    pub fn top2_share(&self) -> f64 {
        if self.actions == 0 {
            return 0.0;
        }
        let mut covered = 0u64;
        for (top, row) in self.matrix.iter().enumerate() {
            for (second, &n) in row.iter().enumerate() {
                covered += n * (top + second) as u64;
            }
        }
        covered as f64 / self.actions as f64
    }

    pub fn to_table(&self) -> Table {
        let width = self.matrix.len();
        let mut t = Table::new(std::iter::once("top_count".to_string()).chain((0..width).map(|c| format!("second_{c}"))));
        for (top, row) in self.matrix.iter().enumerate() {
            let mut cells = vec![top.to_string()];
            cells.extend(row.iter().map(u64::to_string));
            t.push(cells);
        }
        t
    }
}

pub fn analyze_device_frequency(sessions: &[Session], num_devices: usize) -> DeviceFrequency {
    let max_len = sessions.iter().map(Session::len).max().unwrap_or(0);
    let mut matrix = vec![vec![0u64; max_len + 1]; max_len + 1];
    let mut device_totals = vec![0u64; num_devices];
    let mut actions = 0;
    for s in sessions {
        let mut counts: HashMap<u32, usize> = HashMap::new();
        for a in &s.actions {
            *counts.entry(a.device).or_default() += 1;
            if let Some(t) = device_totals.get_mut(a.device as usize) {
                *t += 1;
            }
        }
        actions += s.len();
        let mut c: Vec<usize> = counts.into_values().collect();
        c.sort_unstable_by(|a, b| b.cmp(a));
        let top = c.first().copied().unwrap_or(0);
        let second = c.get(1).copied().unwrap_or(0);
        matrix[top][second] += 1;
    }
    DeviceFrequency { matrix, device_totals, sessions: sessions.len(), actions }
}
