use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use timing_core::datamodel::Example;
use timing_core::diffcore::gradcheck::{check_params, GradCheckOptions};
use timing_core::diffcore::{ParamStore, Tape, Var};
use timing_core::nets::layers::Tcn;
use timing_core::nets::timing::{ActionEncoder, TimeEncoder};
use timing_core::nets::*;

fn random_examples(cfg: &ModelConfig, n: usize, seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let l = cfg.seq_len;
            let mut diffs: Vec<f64> = (0..l).map(|_| rng.random_range(0.0..20_000.0)).collect();
            diffs[0] = 0.0;
            let target: f64 = rng.random_range(0.0..86_400.0);
            Example {
                devices: (0..l).map(|_| rng.random_range(0..cfg.num_devices)).collect(),
                controls: (0..l).map(|_| rng.random_range(0..cfg.num_controls)).collect(),
                time_of_day: (0..l).map(|_| rng.random_range(0.0..86_400.0)).collect(),
                day: (0..l).map(|_| rng.random_range(0..366) as f64).collect(),
                diffs,
                target_seconds: target,
                label: (target / (86_400.0 / cfg.num_bins as f64)) as usize,
            }
        })
        .collect()
}

fn batch_of(examples: &[Example]) -> Batch {
    let refs: Vec<&Example> = examples.iter().collect();
    Batch::from_examples(&refs).unwrap()
}

fn small(kind: ModelKind, ablation: Ablation, head: HeadKind) -> ModelConfig {
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
        ..Default::default()
    }
}

fn every_config() -> Vec<ModelConfig> {
    let mut out: Vec<ModelConfig> =
        Ablation::ALL.iter().map(|&a| small(ModelKind::TimingMatters, a, HeadKind::Classification)).collect();
    out.extend(ModelKind::BASELINES.iter().map(|&k| small(k, Ablation::Full, HeadKind::Classification)));
    out.push(small(ModelKind::TimingMatters, Ablation::Full, HeadKind::Regression));
    out.push(ModelConfig { positional_before: true, ..small(ModelKind::TimingMatters, Ablation::Full, HeadKind::Classification) });
    out
}

fn output(model: &Model, batch: &Batch, train: bool) -> (Vec<usize>, Vec<f64>) {
    let mut tape = Tape::new();
    let v = model.forward(&mut tape, batch, train).unwrap();
    (tape.shape(v).to_vec(), tape.value(v).to_vec())
}

fn timing(model: &Model) -> &TimingMatters {
    match &model.network {
        Network::TimingMatters(m) => m,
        Network::Baseline(_) => panic!("not the full model"),
    }
}

#[test]
fn default_shape_ledger() {
    let cfg = ModelConfig::default();
    let model = Model::new(cfg.clone(), 0).unwrap();
    let ex = random_examples(&cfg, 3, 1);
    let batch = batch_of(&ex);
    let mut tape = Tape::new();
    let tr = timing(&model).trace(&mut tape, &model.params, &batch, true).unwrap();
    let f = tr.fields;
    for v in [f.device, f.control, f.time_periodic, f.time_radial, f.date_periodic, f.date_radial, tr.action] {
        assert_eq!(tape.shape(v), &[27, 50]);
    }
    assert_eq!(tape.shape(tr.diff_seq), &[3, 9, 50]);
    assert_eq!(tape.shape(tr.time), &[27, 150]);
    assert_eq!(tape.shape(tr.sequence), &[3, 9, 200]);
    assert_eq!(tape.shape(tr.output), &[3, 96]);
    let p = |name: &str| model.params.get(model.params.id(name).unwrap()).array.shape().to_vec();
    assert_eq!(p("action_encoder/projection"), vec![200, 50]);
    assert_eq!(p("sequence_encoder/positional"), vec![9, 200]);
    assert_eq!(p("sequence_encoder/hidden/weight"), vec![200, 100]);
    assert_eq!(p("sequence_encoder/out/weight"), vec![100, 96]);
    assert_eq!(p("action_encoder/transformer/layer1/ff_in/weight"), vec![50, 200]);
    assert_eq!(p("sequence_encoder/transformer/layer1/ff_in/weight"), vec![200, 200]);
    assert!(model.params.id("action_encoder/transformer/layer2/ff_in/weight").is_none());
    assert!(model.params.iter().all(|(_, p)| p.name.starts_with("embed/")
        || p.name.starts_with("action_encoder/")
        || p.name.starts_with("time_encoder/")
        || p.name.starts_with("sequence_encoder/")));
}

#[test]
fn action_encoder_with_identity_and_block_mean_averages_tokens() {
    let cfg = small(ModelKind::TimingMatters, Ablation::Full, HeadKind::Classification);
    let mut store = ParamStore::new();
    let mut enc = ActionEncoder::new(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    enc.transformer = None;
    let d = cfg.dim;
    let mut w = vec![0.0; 4 * d * d];
    for block in 0..4 {
        for i in 0..d {
            w[(block * d + i) * d + i] = 0.25;
        }
    }
    store.get_mut(enc.projection).array.values_mut().copy_from_slice(&w);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let parts: Vec<Vec<f64>> = (0..4).map(|_| (0..2 * d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let mut tape = Tape::new();
    let toks: Vec<Var> = parts.iter().map(|p| tape.constant(vec![2, d], p.clone()).unwrap()).collect();
    let h = enc.forward(&mut tape, &store, [toks[0], toks[1], toks[2], toks[3]]).unwrap();
    for (i, v) in tape.value(h).iter().enumerate() {
        let mean = parts.iter().map(|p| p[i]).sum::<f64>() / 4.0;
        assert!((v - mean).abs() < 1e-12);
    }
}

#[test]
fn action_encoder_is_sensitive_to_token_order() {
    let cfg = small(ModelKind::TimingMatters, Ablation::Full, HeadKind::Classification);
    let mut store = ParamStore::new();
    let enc = ActionEncoder::new(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut tape = Tape::new();
    let toks: Vec<Var> =
        (0..4).map(|_| tape.constant(vec![1, 4], (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()).collect();
    let a = enc.forward(&mut tape, &store, [toks[0], toks[1], toks[2], toks[3]]).unwrap();
    let b = enc.forward(&mut tape, &store, [toks[1], toks[0], toks[2], toks[3]]).unwrap();
    assert_ne!(tape.value(a), tape.value(b));
}

#[test]
fn time_encoder_zero_input_settles_to_a_constant() {
    let mut store = ParamStore::new();
    let tcn = Tcn::new(&mut store, "tcn", 4, 2, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert_eq!(tcn.receptive_field(), 5);
    let len = 8;
    let mut tape = Tape::new();
    let x = tape.constant(vec![1, len, 4], vec![0.0; len * 4]).unwrap();
    let y = tcn.forward(&mut tape, &store, x).unwrap();
    let v = tape.value(y);
    // once the zero padding is out of reach every position sees the same input
    for t in 4..len {
        assert_eq!(v[t * 4..t * 4 + 4], v[12..16]);
    }
    assert!(v[12..16].iter().any(|x| x.abs() > 1e-6));
    // the first unit only sees zeros, so it emits its bias everywhere
    let b0 = store.values(tcn.units[0].bias).to_vec();
    let first = tcn.units[0].forward(&mut tape, &store, x).unwrap();
    for t in 0..len {
        assert_eq!(tape.value(first)[t * 4..t * 4 + 4], b0[..]);
    }
}

#[test]
fn time_encoder_is_causal() {
    let cfg = small(ModelKind::TimingMatters, Ablation::Full, HeadKind::Classification);
    let mut store = ParamStore::new();
    let enc = TimeEncoder::new(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let (b, l, d) = (2, 7, cfg.dim);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let base: Vec<f64> = (0..b * l * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let run = |x: &[f64]| {
        let mut tape = Tape::new();
        let seq = tape.constant(vec![b, l, d], x.to_vec()).unwrap();
        let zeros = tape.constant(vec![b * l, d], vec![0.0; b * l * d]).unwrap();
        let (conv, out) = enc.forward(&mut tape, &store, seq, zeros, zeros, false).unwrap();
        assert_eq!(tape.shape(out), &[b * l, 3 * d]);
        tape.value(conv).to_vec()
    };
    let reference = run(&base);
    for t in 0..l {
        let mut x = base.clone();
        x[t * d] += 0.5;
        let out = run(&x);
        for pos in 0..l {
            let same = out[pos * d..(pos + 1) * d] == reference[pos * d..(pos + 1) * d];
            let reachable = pos >= t && pos < t + 5;
            assert_eq!(same, !reachable, "perturb {t}, position {pos}");
        }
        // the second sequence in the batch is untouched
        assert_eq!(out[l * d..], reference[l * d..]);
    }
}

#[test]
fn ablations_replace_components_with_identity() {
    let cfg = ModelConfig { seq_len: 5, ..small(ModelKind::TimingMatters, Ablation::MinusTimeEncoder, HeadKind::Classification) };
    let model = Model::new(cfg.clone(), 0).unwrap();
    assert!(model.params.iter().all(|(_, p)| !p.name.starts_with("time_encoder/tcn")));
    let batch = batch_of(&random_examples(&cfg, 4, 6));
    let mut tape = Tape::new();
    let tr = timing(&model).trace(&mut tape, &model.params, &batch, true).unwrap();
    assert_eq!(tape.value(tr.diff_conv), tape.value(tr.diff_seq));

    let cfg = ModelConfig { ablation: Ablation::MinusSequenceEncoder, ..cfg };
    let model = Model::new(cfg.clone(), 0).unwrap();
    assert!(model.params.iter().all(|(_, p)| !p.name.starts_with("sequence_encoder/transformer")));
    let mut tape = Tape::new();
    let tr = timing(&model).trace(&mut tape, &model.params, &batch, true).unwrap();
    let p = model.params.values(model.params.id("sequence_encoder/positional").unwrap());
    let width = 4 * cfg.dim;
    for (i, (&f, &s)) in tape.value(tr.context).iter().zip(tape.value(tr.sequence)).enumerate() {
        assert_eq!(f, s + p[i % (cfg.seq_len * width)]);
    }

    let cfg = ModelConfig { ablation: Ablation::MinusRbf, ..cfg };
    let model = Model::new(cfg, 0).unwrap();
    assert!(model.params.iter().all(|(_, p)| !p.name.contains("/rbf/")));
    assert!(model.params.id("embed/time/radial/t2v/omega").is_some());
}

#[test]
fn every_variant_keeps_the_output_contract() {
    for cfg in every_config() {
        let model = Model::new(cfg.clone(), 1).unwrap();
        let batch = batch_of(&random_examples(&cfg, 5, 2));
        for train in [true, false] {
            let (shape, values) = output(&model, &batch, train);
            assert_eq!(shape, vec![5, cfg.outputs()], "{} {}", cfg.kind, cfg.ablation);
            assert!(values.iter().all(|v| v.is_finite()));
        }
    }
    let cfg = ModelConfig::default();
    for kind in ModelKind::ALL {
        let model = Model::new(ModelConfig { kind: *kind, ..cfg.clone() }, 0).unwrap();
        let (shape, _) = output(&model, &batch_of(&random_examples(&cfg, 2, 3)), false);
        assert_eq!(shape, vec![2, 96], "{kind}");
    }
}

#[test]
fn identical_sessions_give_identical_rows() {
    for cfg in every_config() {
        let model = Model::new(cfg.clone(), 4).unwrap();
        let one = random_examples(&cfg, 1, 7);
        let batch = batch_of(&[one[0].clone(), one[0].clone(), one[0].clone()]);
        for train in [true, false] {
            let (_, v) = output(&model, &batch, train);
            let k = cfg.outputs();
            assert_eq!(v[..k], v[k..2 * k]);
            assert_eq!(v[..k], v[2 * k..]);
        }
    }
}

#[test]
fn forward_is_bitwise_deterministic() {
    for cfg in every_config() {
        let a = Model::new(cfg.clone(), 9).unwrap();
        let b = Model::new(cfg.clone(), 9).unwrap();
        let batch = batch_of(&random_examples(&cfg, 4, 8));
        assert_eq!(output(&a, &batch, true), output(&a, &batch, true));
        assert_eq!(output(&a, &batch, false), output(&b, &batch, false));
    }
}

#[test]
fn softmax_of_logits_sums_to_one() {
    let cfg = ModelConfig::default();
    let model = Model::new(cfg.clone(), 0).unwrap();
    let batch = batch_of(&random_examples(&cfg, 4, 1));
    let mut tape = Tape::new();
    let logits = model.forward(&mut tape, &batch, false).unwrap();
    let probs = tape.softmax(logits, 1).unwrap();
    for row in tape.value(probs).chunks(96) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn gradients_match_finite_differences_for_every_variant() {
    for (i, cfg) in every_config().into_iter().enumerate() {
        let mut model = Model::new(cfg.clone(), i as u64).unwrap();
        let batch = batch_of(&random_examples(&cfg, 2, 100 + i as u64));
        let net = model.clone();
        let report = check_params(
            &mut model.params,
            |tape, store| {
                let m = Model { params: store.clone(), ..net.clone() };
                let out = m.forward(tape, &batch, true)?;
                m.loss(tape, &batch, out)
            },
            GradCheckOptions { seed: i as u64, coords_per_tensor: 4, ..Default::default() },
        )
        .unwrap();
        assert!(report.passes(1e-4), "{} {} {}: worst {:?}", cfg.kind, cfg.ablation, cfg.head, report.worst());
    }
}

#[test]
fn every_trainable_parameter_receives_gradient() {
    for cfg in every_config() {
        let mut model = Model::new(cfg.clone(), 3).unwrap();
        let batch = batch_of(&random_examples(&cfg, 6, 11));
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, &batch, true).unwrap();
        let loss = model.loss(&mut tape, &batch, out).unwrap();
        tape.backward(loss, &mut model.params).unwrap();
        for (_, p) in model.params.iter().filter(|(_, p)| p.trainable) {
            let g = p.array.grad().unwrap();
            assert!(g.iter().any(|v| *v != 0.0), "{} {}: {} has zero gradient", cfg.kind, cfg.ablation, p.name);
        }
    }
}

#[test]
fn mlp_depends_on_action_order() {
    let cfg = small(ModelKind::Mlp, Ablation::Full, HeadKind::Classification);
    let model = Model::new(cfg.clone(), 0).unwrap();
    let ex = random_examples(&cfg, 1, 4);
    let mut swapped = ex[0].clone();
    swapped.devices.swap(0, 2);
    swapped.controls.swap(0, 2);
    swapped.time_of_day.swap(0, 2);
    swapped.day.swap(0, 2);
    swapped.diffs.swap(1, 2);
    assert_ne!(output(&model, &batch_of(&ex), false).1, output(&model, &batch_of(&[swapped]), false).1);
}

#[test]
fn positional_placement_flag_changes_the_model() {
    let cfg = small(ModelKind::TimingMatters, Ablation::Full, HeadKind::Classification);
    let batch = batch_of(&random_examples(&cfg, 3, 2));
    let after = Model::new(cfg.clone(), 5).unwrap();
    let before = Model::new(ModelConfig { positional_before: true, ..cfg }, 5).unwrap();
    assert_ne!(output(&after, &batch, false).1, output(&before, &batch, false).1);
}

#[test]
fn batch_norm_running_statistics_follow_momentum() {
    let cfg = small(ModelKind::TimingMatters, Ablation::Full, HeadKind::Classification);
    let mut model = Model::new(cfg.clone(), 0).unwrap();
    let batch = batch_of(&random_examples(&cfg, 4, 2));
    let mut tape = Tape::new();
    let tr = timing(&model).trace(&mut tape, &model.params, &batch, true).unwrap();
    assert_eq!(tape.shape(tr.time), &[12, 12]);
    let updates = tape.take_buffer_updates();
    assert_eq!(updates.len(), 2);
    model.params.apply_buffer_updates(updates);
    let rm = model.params.values(model.params.id("time_encoder/norm/running_mean").unwrap());
    let rv = model.params.values(model.params.id("time_encoder/norm/running_var").unwrap());
    // a fresh buffer is 0 mean and unit variance, moved 10% toward the batch
    assert!(rm.iter().any(|v| *v != 0.0));
    assert!(rv.iter().all(|v| *v >= 0.9));
    let mut tape = Tape::new();
    let _ = model.forward(&mut tape, &batch, false).unwrap();
    assert!(tape.take_buffer_updates().is_empty());
}

#[test]
fn names_parse_and_reject_unknown_values() {
    for kind in ModelKind::ALL {
        assert_eq!(kind.name().parse::<ModelKind>().unwrap(), *kind);
    }
    for a in Ablation::ALL {
        assert_eq!(a.to_string().parse::<Ablation>().unwrap(), *a);
    }
    let err = "minus-everything".parse::<Ablation>().unwrap_err();
    assert!(err.to_string().contains("minus-rbf"));
    assert!("gru".parse::<ModelKind>().is_err());
    let cfg = ModelConfig { kind: ModelKind::Lstm, ablation: Ablation::MinusRbf, ..Default::default() };
    assert!(Model::new(cfg, 0).is_err());
    let cfg = ModelConfig { num_bins: 7, ..Default::default() };
    assert!(Model::new(cfg, 0).is_err());
}

#[test]
fn config_round_trips_through_json() {
    let cfg = ModelConfig { kind: ModelKind::Lstm2Step, head: HeadKind::Regression, ..Default::default() };
    let text = serde_json::to_string(&cfg).unwrap();
    assert!(text.contains("\"lstm-2step\""));
    assert_eq!(serde_json::from_str::<ModelConfig>(&text).unwrap(), cfg);
}
