//! Central finite-difference gradient checks.
//!
//! Relative error of one coordinate is `|analytic - numeric| / max(|analytic|,
//! |numeric|, floor)`; the floor keeps coordinates whose true gradient is
//! essentially zero from dividing round-off by round-off.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::ParamStore;
use super::tape::{Tape, Var};
use super::DiffError;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Coordinates sampled per tensor; tensors at most this large are checked exhaustively.
    pub coords_per_tensor: usize,
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { eps: 1e-5, coords_per_tensor: 12, floor: 1e-6, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordCheck {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checks: Vec<CoordCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.checks.iter().map(|c| c.rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&CoordCheck> {
        self.checks.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn passes(&self, tol: f64) -> bool {
        !self.checks.is_empty() && self.max_rel_error() < tol
    }
}

fn rel_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

fn pick(len: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= count {
        (0..len).collect()
    } else {
        let mut v = sample(rng, len, count).into_vec();
        v.sort_unstable();
        v
    }
}

fn scalar(tape: &Tape, v: Var) -> Result<f64, DiffError> {
    let vals = tape.value(v);
    if vals.len() != 1 {
        return Err(DiffError::NonScalarLoss(tape.shape(v).to_vec()));
    }
    Ok(vals[0])
}

/// Checks gradients of every trainable parameter in `store` for the scalar
/// function `f`. The store's gradients are left cleared.
pub fn check_params<F>(store: &mut ParamStore, f: F, opts: GradCheckOptions) -> Result<GradCheckReport, DiffError>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var, DiffError>,
{
    store.zero_grads();
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    tape.backward(loss, store)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport::default();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        if !store.get(id).trainable {
            continue;
        }
        let analytic = store
            .get(id)
            .array
            .grad()
            .map(<[f64]>::to_vec)
            .ok_or_else(|| DiffError::MissingGrad(store.get(id).name.clone()))?;
        let name = store.get(id).name.clone();
        for k in pick(analytic.len(), opts.coords_per_tensor, &mut rng) {
            let orig = store.get(id).array.values()[k];
            store.get_mut(id).array.values_mut()[k] = orig + opts.eps;
            let mut t = Tape::new();
            let out = f(&mut t, store)?;
            let plus = scalar(&t, out)?;
            store.get_mut(id).array.values_mut()[k] = orig - opts.eps;
            let mut t = Tape::new();
            let out = f(&mut t, store)?;
            let minus = scalar(&t, out)?;
            store.get_mut(id).array.values_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            report.checks.push(CoordCheck {
                tensor: name.clone(),
                index: k,
                analytic: analytic[k],
                numeric,
                rel_error: rel_error(analytic[k], numeric, opts.floor),
            });
        }
    }
    store.zero_grads();
    Ok(report)
}

/// Checks gradients with respect to free inputs. `f` receives one tracked
/// leaf per entry of `inputs` (shape, values).
pub fn check_inputs<F>(inputs: &[(Vec<usize>, Vec<f64>)], f: F, opts: GradCheckOptions) -> Result<GradCheckReport, DiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, DiffError>,
{
    let run = |values: &[Vec<f64>]| -> Result<(Tape, Vec<Var>, Var), DiffError> {
        let mut tape = Tape::new();
        let vars = inputs
            .iter()
            .zip(values)
            .map(|((shape, _), v)| tape.leaf(shape.clone(), v.clone(), true))
            .collect::<Result<Vec<_>, _>>()?;
        let out = f(&mut tape, &vars)?;
        Ok((tape, vars, out))
    };
    let mut values: Vec<Vec<f64>> = inputs.iter().map(|(_, v)| v.clone()).collect();
    let (mut tape, vars, out) = run(&values)?;
    let mut scratch = ParamStore::new();
    tape.backward(out, &mut scratch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport::default();
    for (i, var) in vars.iter().enumerate() {
        let analytic = tape.grad(*var).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; values[i].len()]);
        for k in pick(values[i].len(), opts.coords_per_tensor, &mut rng) {
            let orig = values[i][k];
            values[i][k] = orig + opts.eps;
            let (t, _, o) = run(&values)?;
            let plus = scalar(&t, o)?;
            values[i][k] = orig - opts.eps;
            let (t, _, o) = run(&values)?;
            let minus = scalar(&t, o)?;
            values[i][k] = orig;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            report.checks.push(CoordCheck {
                tensor: format!("input{i}"),
                index: k,
                analytic: analytic[k],
                numeric,
                rel_error: rel_error(analytic[k], numeric, opts.floor),
            });
        }
    }
    Ok(report)
}
