//! Acceptance suite: prints one PASS/FAIL line per criterion, then exits
//! non-zero if any criterion failed. Runs without the test harness so the lines
//! are never captured. Criteria run one after another because several of
//! them are wall-clock bounded.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use timing_core::datamodel::*;
use timing_core::diffcore::gradcheck::{check_inputs, check_params, GradCheckOptions, GradCheckReport};
use timing_core::diffcore::{DiffError, ParamStore, Tape, Var};
use timing_core::embed::{Lookup, Rbf, Time2Vec};
use timing_core::experiment::*;
use timing_core::nets::layers::{BatchNorm, CausalConv, Lstm, Tcn, TransformerEncoder};
use timing_core::nets::timing::ACTION_TOKENS;
use timing_core::nets::*;
use timing_core::syngen::routines::ALL_DAYS;
use timing_core::syngen::{generate_dataset, GeneratorConfig, RoutineBank, RoutineSpec, RoutineTemplate};

const GRAD_TOL: f64 = 1e-4;
/// Gradients below this magnitude are compared on absolute error.
const GRAD_FLOOR: f64 = 1e-4;
const GRAD_SECONDS: f64 = 300.0;
const GRAD_SEEDS: u64 = 3;
const IDENTITY_TOL: f64 = 1e-9;
const OVERFIT_TARGET: f64 = 0.95;
const OVERFIT_EPOCHS: usize = 200;
const OVERFIT_SECONDS: f64 = 180.0;
const CHANCE_TARGET: f64 = 0.15;
const DESK_RUN_SECONDS: f64 = 1800.0;
/// Training share of the desk run; generation and evaluation use the rest.
const DESK_TRAIN_SECONDS: f64 = 1200.0;
const DIRECTIONAL_SEEDS: u64 = 3;
const DIRECTIONAL_EPOCHS: usize = 5;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Weighted sum of squares, so every output element reaches the loss.
fn readout(tape: &mut Tape, v: Var, seed: u64) -> Result<Var, DiffError> {
    let n: usize = tape.shape(v).iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xace);
    let w = tape.constant(tape.shape(v).to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let sq = tape.square(v);
    let p = tape.mul(sq, w)?;
    Ok(tape.sum_all(p))
}

fn random(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn small_model(kind: ModelKind, ablation: Ablation, head: HeadKind) -> ModelConfig {
    ModelConfig {
        kind,
        ablation,
        head,
        dim: 4,
        seq_len: 3,
        num_bins: 8,
        num_devices: 3,
        num_controls: 5,
        heads: 2,
        layers: 1,
        ff_width: 6,
        baseline_hidden: 5,
        ..ModelConfig::default()
    }
}

fn random_batch(cfg: &ModelConfig, n: usize, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = cfg.seq_len;
    let examples: Vec<Example> = (0..n)
        .map(|_| {
            let mut diffs = random(&mut rng, l, 0.0, 20_000.0);
            diffs[0] = 0.0;
            let target = rng.random_range(0.0..86_400.0);
            Example {
                devices: (0..l).map(|_| rng.random_range(0..cfg.num_devices)).collect(),
                controls: (0..l).map(|_| rng.random_range(0..cfg.num_controls)).collect(),
                time_of_day: random(&mut rng, l, 0.0, 86_400.0),
                day: (0..l).map(|_| rng.random_range(0..366) as f64).collect(),
                diffs,
                target_seconds: target,
                label: (target / (86_400.0 / cfg.num_bins as f64)) as usize,
            }
        })
        .collect();
    let refs: Vec<&Example> = examples.iter().collect();
    Batch::from_examples(&refs).unwrap()
}

/// Gradient check of a layer held in its own store, fed a fixed input.
fn check_layer(
    seed: u64,
    build: impl Fn(&mut ParamStore, &mut ChaCha8Rng) -> Result<Box<dyn Fn(&mut Tape, &ParamStore) -> Result<Var, DiffError>>, DiffError>,
) -> Result<GradCheckReport, DiffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let f = build(&mut store, &mut rng)?;
    check_params(&mut store, |t, s| {
        let out = f(t, s)?;
        readout(t, out, seed)
    }, GradCheckOptions { seed, floor: GRAD_FLOOR, ..Default::default() })
}

fn gradient_correctness() -> Check {
    let started = Instant::now();
    let mut reports: Vec<(String, GradCheckReport)> = Vec::new();
    for seed in 0..GRAD_SEEDS {
        let run = |name: &str, r: Result<GradCheckReport, DiffError>| r.map(|r| (format!("{name} seed {seed}"), r)).map_err(err);
        reports.push(run("time2vec", check_layer(seed, |s, rng| {
            let layer = Time2Vec::new(s, "t2v", 6, rng)?;
            let tau = random(rng, 5, 0.0, 1.0);
            Ok(Box::new(move |t: &mut Tape, s: &ParamStore| {
                let x = t.constant(vec![5, 1], tau.clone())?;
                layer.forward(t, s, x)
            }))
        }))?);
        reports.push(run("rbf", check_layer(seed, |s, rng| {
            let layer = Rbf::new(s, "rbf", 6)?;
            let tau = random(rng, 5, 0.0, 1.0);
            Ok(Box::new(move |t: &mut Tape, s: &ParamStore| {
                let x = t.constant(vec![5, 1], tau.clone())?;
                layer.forward(t, s, x)
            }))
        }))?);
        reports.push(run("lookup", check_layer(seed, |s, rng| {
            let layer = Lookup::new(s, "lookup", 7, 4, rng)?;
            let idx: Vec<usize> = (0..9).map(|_| rng.random_range(0..7)).collect();
            Ok(Box::new(move |t: &mut Tape, s: &ParamStore| layer.forward(t, s, &idx)))
        }))?);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = [vec![2, 6, 3], vec![2, 3, 4], vec![4]];
        let inputs: Vec<(Vec<usize>, Vec<f64>)> =
            shapes.iter().map(|s| (s.clone(), random(&mut rng, s.iter().product(), -1.0, 1.0))).collect();
        reports.push(run("conv1d", check_inputs(&inputs, |t, v| {
            let y = t.conv1d(v[0], v[1], v[2], 1, 1)?;
            readout(t, y, seed)
        }, GradCheckOptions { seed, floor: GRAD_FLOOR, ..Default::default() }))?);
        let seq = |rng: &mut ChaCha8Rng, w: usize| random(rng, 2 * 5 * w, -1.0, 1.0);
        reports.push(run("causal conv", check_layer(seed, |s, rng| {
            let layer = CausalConv::new(s, "conv", 3, 2, rng)?;
            let x = seq(rng, 3);
            Ok(Box::new(move |t: &mut Tape, s: &ParamStore| {
                let x = t.constant(vec![2, 5, 3], x.clone())?;
                layer.forward(t, s, x)
            }))
        }))?);
        reports.push(run("tcn", check_layer(seed, |s, rng| {
            let layer = Tcn::new(s, "tcn", 3, 2, rng)?;
            let x = seq(rng, 3);
            Ok(Box::new(move |t: &mut Tape, s: &ParamStore| {
                let x = t.constant(vec![2, 5, 3], x.clone())?;
                layer.forward(t, s, x)
            }))
        }))?);
        reports.push(run("batch norm", check_layer(seed, |s, rng| {
            let layer = BatchNorm::new(s, "bn", 3)?;
            let x = random(rng, 18, -2.0, 2.0);
            Ok(Box::new(move |t: &mut Tape, s: &ParamStore| {
                let x = t.constant(vec![6, 3], x.clone())?;
                layer.forward(t, s, x, true)
            }))
        }))?);
        reports.push(run("transformer", check_layer(seed, |s, rng| {
            let layer = TransformerEncoder::new(s, "enc", 4, 2, 2, 6, rng)?;
            let x = seq(rng, 4);
            Ok(Box::new(move |t: &mut Tape, s: &ParamStore| {
                let x = t.constant(vec![2, 5, 4], x.clone())?;
                layer.forward(t, s, x)
            }))
        }))?);
        reports.push(run("lstm", check_layer(seed, |s, rng| {
            let layer = Lstm::new(s, "lstm", 3, 4, 2, rng)?;
            let x = seq(rng, 3);
            Ok(Box::new(move |t: &mut Tape, s: &ParamStore| {
                let x = t.constant(vec![2, 5, 3], x.clone())?;
                layer.forward(t, s, x)
            }))
        }))?);
        let mut models: Vec<ModelConfig> =
            Ablation::ALL.iter().map(|&a| small_model(ModelKind::TimingMatters, a, HeadKind::Classification)).collect();
        models.extend(ModelKind::BASELINES.iter().map(|&k| small_model(k, Ablation::Full, HeadKind::Classification)));
        models.push(small_model(ModelKind::TimingMatters, Ablation::Full, HeadKind::Regression));
        for cfg in models {
            let mut model = Model::new(cfg.clone(), seed).map_err(err)?;
            let batch = random_batch(&cfg, 2, 100 + seed);
            let net = model.clone();
            let r = check_params(
                &mut model.params,
                |tape, store| {
                    let m = Model { params: store.clone(), ..net.clone() };
                    let out = m.forward(tape, &batch, true)?;
                    m.loss(tape, &batch, out)
                },
                GradCheckOptions { seed, floor: GRAD_FLOOR, coords_per_tensor: 4, ..Default::default() },
            );
            reports.push(run(&model_id(&cfg), r)?);
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    let checks: usize = reports.iter().map(|(_, r)| r.checks.len()).sum();
    let (worst_name, worst) = reports
        .iter()
        .max_by(|a, b| a.1.max_rel_error().total_cmp(&b.1.max_rel_error()))
        .map(|(n, r)| (n.clone(), r.max_rel_error()))
        .unwrap_or_default();
    ensure(reports.iter().all(|(_, r)| r.passes(GRAD_TOL)), || format!("{worst_name}: max rel error {worst:.2e} >= {GRAD_TOL:e}"))?;
    ensure(elapsed < GRAD_SECONDS, || format!("took {elapsed:.0}s, limit {GRAD_SECONDS}s"))?;
    Ok(format!(
        "{} component checks ({checks} coordinates), max rel error {worst:.2e} < {GRAD_TOL:e}, {elapsed:.1}s",
        reports.len()
    ))
}

fn closed_form_identities() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let t2v = Time2Vec::new(&mut store, "t2v", 8, &mut rng).map_err(err)?;
    store.get_mut(t2v.phase).array.values_mut().fill(0.0);
    let mut tape = Tape::new();
    let zero = tape.constant(vec![1, 1], vec![0.0]).map_err(err)?;
    let out = t2v.forward(&mut tape, &store, zero).map_err(err)?;
    ensure(tape.value(out).iter().all(|&v| v == 0.0), || format!("time2vec(0) = {:?}", tape.value(out)))?;

    let rbf = Rbf::new(&mut store, "rbf", 8).map_err(err)?;
    let centres = store.values(rbf.centres).to_vec();
    let mut tape = Tape::new();
    let taus = tape.constant(vec![8, 1], centres).map_err(err)?;
    let out = rbf.forward(&mut tape, &store, taus).map_err(err)?;
    let diag: Vec<f64> = (0..8).map(|i| tape.value(out)[i * 8 + i]).collect();
    ensure(diag.iter().all(|&v| v == 1.0), || format!("rbf at centres {diag:?}"))?;

    let mut worst_ce = 0.0f64;
    for k in SWEEP_BIN_COUNTS {
        let mut tape = Tape::new();
        let logits = tape.constant(vec![4, k], vec![0.7; 4 * k]).map_err(err)?;
        let loss = tape.cross_entropy(logits, &[0, 1, k / 2, k - 1]).map_err(err)?;
        worst_ce = worst_ce.max((tape.value(loss)[0] - (k as f64).ln()).abs());
    }
    ensure(worst_ce < IDENTITY_TOL, || format!("uniform cross-entropy off by {worst_ce:e}"))?;

    let pred: Vec<usize> = (0..1000).map(|_| rng.random_range(0..8)).collect();
    let truth: Vec<usize> = (0..1000).map(|_| rng.random_range(0..8)).collect();
    let hits = (0..1000).filter(|&i| pred[i] == truth[i]).count();
    let p = precision_at_k(&pred, &truth).map_err(err)?;
    ensure(p == hits as f64 / 1000.0, || format!("precision {p} vs {hits}/1000"))?;

    let a = random(&mut rng, 1000, 0.0, 86_400.0);
    let b = random(&mut rng, 1000, 0.0, 86_400.0);
    let sq: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).collect();
    let oracle = (sq.iter().sum::<f64>() / 1000.0).sqrt();
    let got = rmse(&a, &b, TimeDistance::Linear).map_err(err)?;
    let rel = (got - oracle).abs() / oracle;
    ensure(rel < IDENTITY_TOL, || format!("rmse {got} vs oracle {oracle}"))?;
    Ok(format!("t2v(0)=0, rbf(centre)=1, |CE - ln k| {worst_ce:.1e}, precision exact, rmse rel {rel:.1e}"))
}

fn shape_ledger() -> Check {
    let cfg = ModelConfig::default();
    let model = Model::new(cfg.clone(), 0).map_err(err)?;
    let batch = random_batch(&cfg, 2, 3);
    let Network::TimingMatters(net) = &model.network else { return Err("default model is not timing-matters".into()) };
    let mut tape = Tape::new();
    let tr = net.trace(&mut tape, &model.params, &batch, true).map_err(err)?;
    let shape = |v: Var| tape.shape(v).to_vec();
    let param = |name: &str| model.params.id(name).map(|id| model.params.get(id).array.shape().to_vec());
    let f = tr.fields;
    let tokens = [f.device, f.control, f.date_periodic, f.date_radial];
    ensure(ACTION_TOKENS == 4 && tokens.iter().all(|&v| shape(v) == [18, 50]), || "X is not 4 tokens of width 50".into())?;
    ensure(param("action_encoder/projection") == Some(vec![200, 50]), || "projection is not 200 -> 50".into())?;
    ensure(shape(tr.action) == [18, 50], || format!("H is {:?}", shape(tr.action)))?;
    ensure(shape(tr.time) == [18, 150], || format!("time encoding is {:?}", shape(tr.time)))?;
    ensure(shape(tr.sequence) == [2, 9, 200], || format!("sequence input is {:?}", shape(tr.sequence)))?;
    ensure(param("sequence_encoder/positional") == Some(vec![9, 200]), || "P is not 9x200".into())?;
    ensure(
        param("sequence_encoder/hidden/weight") == Some(vec![200, 100]) && param("sequence_encoder/out/weight") == Some(vec![100, 96]),
        || "head is not 200 -> 100 -> 96".into(),
    )?;
    ensure(shape(tr.output) == [2, 96], || format!("output is {:?}", shape(tr.output)))?;
    Ok("X 4x50, Z' 200, H 50, time 150, s 200, P 9x200, head 200->100->96".into())
}

fn overfit_smoke() -> Check {
    let started = Instant::now();
    let cfg = GeneratorConfig { num_users: 1, target_instances: 64, ..GeneratorConfig::default() };
    let anchors = [7.0, 8.5, 12.0, 18.25, 22.0];
    let routines = anchors
        .iter()
        .enumerate()
        .map(|(i, h)| RoutineTemplate {
            device: i as u32,
            control: cfg.device_controls(i as u32).start,
            mean_time: h * 3600.0,
            jitter_sd: 0.0,
            weekdays: ALL_DAYS,
            probability: 1.0,
        })
        .collect();
    let bank = RoutineBank { users: vec![RoutineSpec { user: 0, routines, noise_rate: 0.0 }] };
    let ds = generate_dataset(&cfg, &bank).map_err(err)?;
    ensure(ds.sessions.len() == 64, || format!("{} sessions", ds.sessions.len()))?;
    // validation reads the training sessions, so its precision is train precision
    let parts = DatasetSplit::from_parts(ds.sessions.clone(), ds.sessions.clone(), ds.sessions.clone());
    let train_cfg = TrainConfig { max_epochs: OVERFIT_EPOCHS, patience: OVERFIT_EPOCHS, ..TrainConfig::default() };
    let out = train(Model::new(ModelConfig::default(), 0).map_err(err)?, &parts, &train_cfg, "overfit").map_err(err)?;
    let elapsed = started.elapsed().as_secs_f64();
    let first = out.history.iter().find(|r| r.val_precision >= OVERFIT_TARGET).map(|r| r.epoch);
    let Some(epoch) = first else {
        return Err(format!("best train P96 {:.3} after {OVERFIT_EPOCHS} epochs", out.best_val_precision));
    };
    ensure(elapsed < OVERFIT_SECONDS, || format!("took {elapsed:.0}s, limit {OVERFIT_SECONDS}s"))?;
    Ok(format!("train P96 >= {OVERFIT_TARGET} at epoch {epoch}, best {:.3}, {elapsed:.0}s", out.best_val_precision))
}

fn default_dataset() -> Result<Dataset, String> {
    generate_dataset(&GeneratorConfig::default(), &RoutineBank::default_bank()).map_err(err)
}

fn generator_fidelity() -> Check {
    let ds = default_dataset()?;
    let again = default_dataset()?;
    ensure(ds.to_text() == again.to_text(), || "generation is not deterministic".into())?;
    ds.validate().map_err(err)?;
    let s = ds.summary();
    let h = &ds.header;
    let found = (s.sessions, s.devices_observed, s.controls_observed, s.users_observed);
    ensure(found == (11_665, 16, 121, 39), || format!("sessions/devices/controls/users = {found:?}"))?;
    ensure((h.num_devices, h.num_controls, h.num_users) == (16, 121, Some(39)), || format!("header {h:?}"))?;
    ensure(ds.sessions.iter().all(|x| x.actions.len() == 10 && x.schema == Schema::An), || "session length or schema".into())?;
    let parsed = Dataset::parse(&ds.to_text()).map_err(err)?;
    ensure(parsed == ds, || "serialization round trip differs".into())?;
    Ok(format!("11665 sessions, 16 devices, 121 controls, 39 users, deterministic, valid, hash {}", &ds.content_hash()[..12]))
}

fn above_chance(ds: &Dataset) -> Result<(String, TrainOutcome), String> {
    let started = Instant::now();
    let parts = split(&ds.sessions, SplitRatios::default(), 0).map_err(err)?;
    let cfg = TrainConfig { time_limit_secs: Some(DESK_TRAIN_SECONDS), ..TrainConfig::default() };
    let out = train(Model::new(ModelConfig::default(), 0).map_err(err)?, &parts, &cfg, &ds.content_hash()).map_err(err)?;
    let elapsed = started.elapsed().as_secs_f64();
    let p96 = out.test.precision_at(96).ok_or("no P96 in report")?;
    let line = format!(
        "test P96 {p96:.4} (chance {:.4}), P8 {:.4}, rmse {:.0}s, best epoch {} of {}, {elapsed:.0}s",
        1.0 / 96.0,
        out.test.precision_at(8).unwrap_or(f64::NAN),
        out.test.rmse,
        out.best_epoch,
        out.history.len()
    );
    if p96 < CHANCE_TARGET || elapsed >= DESK_RUN_SECONDS {
        return Err(format!("{line}; needs P96 >= {CHANCE_TARGET} within {DESK_RUN_SECONDS}s"));
    }
    Ok((line, out))
}

fn directional(ds: &Dataset) -> Check {
    let mut seq_wins = 0;
    let mut head_wins = 0;
    let mut rows = Vec::new();
    for seed in 0..DIRECTIONAL_SEEDS {
        let parts = split(&ds.sessions, SplitRatios::default(), seed).map_err(err)?;
        let cfg = TrainConfig { max_epochs: DIRECTIONAL_EPOCHS, seed, ..TrainConfig::default() };
        let run = |ablation, head| -> Result<f64, String> {
            let model = Model::new(ModelConfig { ablation, head, ..ModelConfig::default() }, seed).map_err(err)?;
            let out = train(model, &parts, &cfg, "directional").map_err(err)?;
            out.test.precision_at(96).ok_or_else(|| "no P96".to_string())
        };
        let full = run(Ablation::Full, HeadKind::Classification)?;
        let no_seq = run(Ablation::MinusSequenceEncoder, HeadKind::Classification)?;
        let reg = run(Ablation::Full, HeadKind::Regression)?;
        seq_wins += usize::from(full >= no_seq);
        head_wins += usize::from(full >= reg);
        rows.push(format!("seed {seed}: full {full:.3} / -seq {no_seq:.3} / reg {reg:.3}"));
    }
    let majority = DIRECTIONAL_SEEDS as usize / 2 + 1;
    let detail = format!("full>=minus-seq {seq_wins}/3, cls>=reg {head_wins}/3 [{}]", rows.join("; "));
    ensure(seq_wins >= majority && head_wins >= majority, || detail.clone())?;
    Ok(detail)
}

fn coarsening_consistency(model: &Model, ds: &Dataset) -> Check {
    let fine = BinningScheme::fine();
    let coarse = BinningScheme::coarse();
    for bin in 0..96 {
        let to = fine.coarsen(bin, &coarse).map_err(err)?;
        let lo = bin as u32 * 900;
        for t in lo..lo + 900 {
            let direct = coarse.time_to_bin(t as f64).map_err(err)?;
            ensure(direct == to, || format!("bin {bin}: second {t} maps to {direct}, coarsen gives {to}"))?;
        }
    }
    let parts = split(&ds.sessions, SplitRatios::default(), 0).map_err(err)?;
    let examples = examples(parts.test(), &fine).map_err(err)?;
    let preds = predict(model, &examples).map_err(err)?;
    let bins = preds.bins.ok_or("model has no classification head")?;
    let truth: Vec<usize> = examples.iter().map(|e| e.label).collect();
    let p96 = precision_at_k(&bins, &truth).map_err(err)?;
    let p8 = coarse_precision(&bins, &truth, &fine, &coarse).map_err(err)?;
    ensure(p8 >= p96, || format!("P8 {p8} < P96 {p96}"))?;
    Ok(format!("coarsen(b, 8) == time_to_bin over all 86400 s; P8 {p8:.4} >= P96 {p96:.4}"))
}

fn sweep_contracts() -> Check {
    let gen = GeneratorConfig { num_users: 3, num_devices: 4, num_controls: 8, target_instances: 900, ..GeneratorConfig::default() };
    let ds = generate_dataset(&gen, &RoutineBank::synthesize(&gen, 3)).map_err(err)?;
    let sweep = SweepConfig {
        model: ModelConfig { dim: 4, num_devices: 4, num_controls: 8, heads: 2, layers: 1, ff_width: 8, ..ModelConfig::default() },
        train: TrainConfig { max_epochs: 1, learning_rate: 3e-3, ..TrainConfig::default() },
        ..SweepConfig::default()
    };
    let bins = sweep_bins(&ds, &sweep, &SWEEP_BIN_COUNTS).map_err(err)?;
    let ks = bins.table.column("bins").ok_or("no bins column")?;
    ensure(ks == ["8", "12", "24", "48", "96", "288"], || format!("bins rows {ks:?}"))?;
    ensure(bins.table.columns == ["bins", "precision", "rmse"], || format!("bins columns {:?}", bins.table.columns))?;
    let ctx = sweep_context(&ds, &sweep, &CONTEXT_WINDOWS, &CONTEXT_LAYERS).map_err(err)?;
    let grid: Vec<(String, String)> = ctx.table.rows.iter().map(|r| (r[0].clone(), r[1].clone())).collect();
    let expected: Vec<(String, String)> =
        CONTEXT_WINDOWS.iter().flat_map(|w| CONTEXT_LAYERS.iter().map(move |l| (w.to_string(), l.to_string()))).collect();
    ensure(grid == expected, || format!("context grid {grid:?}"))?;
    let bins_again = sweep_bins(&ds, &sweep, &SWEEP_BIN_COUNTS).map_err(err)?;
    let ctx_again = sweep_context(&ds, &sweep, &CONTEXT_WINDOWS, &CONTEXT_LAYERS).map_err(err)?;
    ensure(bins.table.to_tsv() == bins_again.table.to_tsv() && bins.reports == bins_again.reports, || "bins rerun differs".into())?;
    ensure(ctx.table.to_tsv() == ctx_again.table.to_tsv() && ctx.reports == ctx_again.reports, || "context rerun differs".into())?;
    Ok("bins rows {8,12,24,48,96,288}, context 6x2 grid, reruns bit-identical".into())
}

fn report(id: usize, name: &str, result: &Check, failures: &mut Vec<usize>) {
    match result {
        Ok(detail) => println!("PASS {id} {name}: {detail}"),
        Err(why) => {
            println!("FAIL {id} {name}: {why}");
            failures.push(id);
        }
    }
}

fn main() {
    let mut failures = Vec::new();
    report(1, "gradient correctness", &gradient_correctness(), &mut failures);
    report(2, "closed-form identities", &closed_form_identities(), &mut failures);
    report(3, "shape ledger", &shape_ledger(), &mut failures);
    report(4, "overfit smoke test", &overfit_smoke(), &mut failures);
    report(5, "generator fidelity", &generator_fidelity(), &mut failures);
    match default_dataset() {
        Ok(ds) => {
            let trained = above_chance(&ds);
            report(6, "above-chance learning", &trained.as_ref().map(|t| t.0.clone()).map_err(Clone::clone), &mut failures);
            report(7, "directional replication", &directional(&ds), &mut failures);
            let coarse = match &trained {
                Ok((_, out)) => coarsening_consistency(&out.model, &ds),
                Err(_) => Err("needs the trained model from criterion 6".into()),
            };
            report(8, "coarsening consistency", &coarse, &mut failures);
        }
        Err(e) => {
            for (id, name) in [(6, "above-chance learning"), (7, "directional replication"), (8, "coarsening consistency")] {
                report(id, name, &Err(format!("default dataset: {e}")), &mut failures);
            }
        }
    }
    report(9, "sweep harness contracts", &sweep_contracts(), &mut failures);
    if !failures.is_empty() {
        eprintln!("failed criteria: {failures:?}");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
