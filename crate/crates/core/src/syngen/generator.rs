use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use super::routines::{RoutineBank, RoutineSpec};
use super::{GeneratorConfig, SynError};
use crate::datamodel::features::weekday_of;
use crate::datamodel::{window_stream, ActionRecord, ActionStream, Dataset, DatasetHeader, Schema, Session, SECONDS_PER_DAY};

const MAX_RESAMPLES: usize = 64;

fn user_rng(seed: u64, user: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(user as u64 + 1);
    rng
}

/// Gaussian around `mean`, resampled until it lands inside the day.
fn sample_time(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> u32 {
    let normal = Normal::new(mean, sd).expect("validated jitter");
    for _ in 0..MAX_RESAMPLES {
        let t = normal.sample(rng);
        if (0.0..SECONDS_PER_DAY as f64).contains(&t) {
            return t as u32;
        }
    }
    mean.clamp(0.0, SECONDS_PER_DAY as f64 - 1.0) as u32
}

/// Full event stream of one user over the configured date range.
pub fn user_stream(cfg: &GeneratorConfig, spec: &RoutineSpec) -> ActionStream {
    let mut rng = user_rng(cfg.seed, spec.user);
    let noise = (spec.noise_rate > 0.0).then(|| Poisson::new(spec.noise_rate).expect("positive rate"));
    // (day, time, counter, record)
    let mut events: Vec<(u32, u32, usize, ActionRecord)> = Vec::new();
    for day in cfg.first_day..=cfg.last_day {
        let weekday = weekday_of(day);
        for r in &spec.routines {
            let active = r.weekdays & (1 << weekday) != 0;
            if active && rng.random_bool(r.probability) {
                let time = sample_time(&mut rng, r.mean_time, r.jitter_sd);
                let n = events.len();
                events.push((day, time, n, ActionRecord::an(day, time, r.device, r.control, spec.user)));
            }
        }
        if let Some(noise) = &noise {
            let count = noise.sample(&mut rng) as usize;
            for _ in 0..count {
                let time = rng.random_range(0..SECONDS_PER_DAY);
                let control = rng.random_range(0..cfg.num_controls);
                let device = cfg.control_device(control);
                let n = events.len();
                events.push((day, time, n, ActionRecord::an(day, time, device, control, spec.user)));
            }
        }
    }
    events.sort_by_key(|e| (e.0, e.1, e.2));
    ActionStream { user: spec.user, actions: events.into_iter().map(|e| e.3).collect() }
}

/// Streams for every user in the config; users missing from the bank get
/// empty streams.
pub fn generate_streams(cfg: &GeneratorConfig, bank: &RoutineBank) -> Result<Vec<ActionStream>, SynError> {
    cfg.validate()?;
    bank.validate(cfg)?;
    Ok((0..cfg.num_users)
        .map(|u| match bank.spec_for(u) {
            Some(spec) => user_stream(cfg, spec),
            None => ActionStream { user: u, actions: Vec::new() },
        })
        .collect())
}

/// Per-user session quotas summing to the target.
pub fn quotas(cfg: &GeneratorConfig) -> Vec<usize> {
    let users = cfg.num_users as usize;
    let base = cfg.target_instances / users;
    let extra = cfg.target_instances % users;
    (0..users).map(|u| base + usize::from(u < extra)).collect()
}

/// Cuts each user's quota of stride-1 windows from a seeded contiguous block
/// of their stream.
pub fn window_quota(cfg: &GeneratorConfig, streams: &[ActionStream]) -> Result<Vec<Session>, SynError> {
    let quotas = quotas(cfg);
    let len = cfg.session_len;
    let mut sessions = Vec::with_capacity(cfg.target_instances);
    for (stream, &quota) in streams.iter().zip(&quotas) {
        if quota == 0 {
            continue;
        }
        let need = quota + len - 1;
        let have = stream.actions.len();
        if have < need {
            return Err(SynError::Infeasible(format!(
                "user {} produced {have} actions but {need} are needed for {quota} sessions",
                stream.user
            )));
        }
        let mut rng = user_rng(cfg.seed ^ 0x5eed_0f_b10c, stream.user);
        let start = rng.random_range(0..=have - need);
        let block = ActionStream { user: stream.user, actions: stream.actions[start..start + need].to_vec() };
        sessions.extend(window_stream(&block, len, Schema::An));
    }
    if sessions.is_empty() {
        return Err(SynError::Infeasible("no sessions could be windowed".into()));
    }
    Ok(sessions)
}

/// Routine-driven sessions matching the configured counts.
pub fn generate(cfg: &GeneratorConfig, bank: &RoutineBank) -> Result<Vec<Session>, SynError> {
    let streams = generate_streams(cfg, bank)?;
    window_quota(cfg, &streams)
}

pub fn generate_dataset(cfg: &GeneratorConfig, bank: &RoutineBank) -> Result<Dataset, SynError> {
    let sessions = generate(cfg, bank)?;
    let mut header = DatasetHeader::an(cfg.num_devices, cfg.num_controls, cfg.num_users);
    header.session_len = cfg.session_len;
    Ok(Dataset::new(header, sessions)?)
}
