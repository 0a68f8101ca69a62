//! Per-user action streams and sliding-window session extraction.

use super::record::{ActionRecord, Schema, Session, SECONDS_PER_DAY};
use super::DataError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionStream {
    pub user: u32,
    pub actions: Vec<ActionRecord>,
}

/// Sliding windows of `len` consecutive actions with stride 1.
pub fn window_stream(stream: &ActionStream, len: usize, schema: Schema) -> Vec<Session> {
    if len == 0 || stream.actions.len() < len {
        return Vec::new();
    }
    stream
        .actions
        .windows(len)
        .map(|w| Session { user: stream.user, actions: w.to_vec(), schema })
        .collect()
}

/// Windows every stream; fails when not a single window fits.
pub fn window_streams(streams: &[ActionStream], len: usize, schema: Schema) -> Result<Vec<Session>, DataError> {
    if len < 2 {
        return Err(DataError::InsufficientData(format!("window length {len} leaves no input actions")));
    }
    let sessions: Vec<Session> = streams.iter().flat_map(|s| window_stream(s, len, schema)).collect();
    if sessions.is_empty() {
        let longest = streams.iter().map(|s| s.actions.len()).max().unwrap_or(0);
        return Err(DataError::InsufficientData(format!(
            "no stream holds {len} actions (longest has {longest})"
        )));
    }
    Ok(sessions)
}

/// Recovers per-user streams from stride-1 windows stored in order: a
/// session continues the current stream when it belongs to the same user and
/// its prefix equals the stream's tail.
pub fn reconstruct_streams(sessions: &[Session]) -> Vec<ActionStream> {
    let mut streams: Vec<ActionStream> = Vec::new();
    for s in sessions {
        let n = s.actions.len();
        let continues = streams.last().is_some_and(|cur| {
            cur.user == s.user && cur.actions.len() >= n - 1 && cur.actions[cur.actions.len() - (n - 1)..] == s.actions[..n - 1]
        });
        if continues {
            streams.last_mut().expect("checked").actions.push(s.actions[n - 1]);
        } else {
            streams.push(ActionStream { user: s.user, actions: s.actions.clone() });
        }
    }
    streams
}

/// Seconds between consecutive actions; the first entry is the prepended 0.
///
/// AN: absolute timestamps. SmartSense: day-of-week and 3-hour-range
/// midpoints, wrapping forward over the week so every entry is non-negative.
pub fn time_diffs(actions: &[ActionRecord], schema: Schema) -> Vec<f64> {
    let mut out = Vec::with_capacity(actions.len());
    if actions.is_empty() {
        return out;
    }
    out.push(0.0);
    for pair in actions.windows(2) {
        let d = match schema {
            Schema::An => pair[1].absolute_seconds() as f64 - pair[0].absolute_seconds() as f64,
            Schema::SmartSense => {
                let week = 7.0 * SECONDS_PER_DAY as f64;
                let abs = |a: &ActionRecord| a.day as f64 * SECONDS_PER_DAY as f64 + a.time as f64 * 10_800.0;
                let raw = abs(&pair[1]) - abs(&pair[0]);
                if raw < 0.0 {
                    raw + week
                } else {
                    raw
                }
            }
        };
        out.push(d);
    }
    out
}
