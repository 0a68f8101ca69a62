use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use timing_core::diffcore::gradcheck::{check_inputs, check_params, GradCheckOptions};
use timing_core::diffcore::{Adam, AdamConfig, Checkpoint, DiffError, ParamStore, Tape, Var};

const TOL: f64 = 1e-4;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Weighted sum readout so every output coordinate gets a distinct cotangent.
fn readout(tape: &mut Tape, v: Var, seed: u64) -> Result<Var, DiffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let n = tape.value(v).len();
    let shape = tape.shape(v).to_vec();
    let w = tape.constant(shape, rand_vec(&mut rng, n))?;
    let p = tape.mul(v, w)?;
    Ok(tape.sum_all(p))
}

fn check_op(shapes: &[Vec<usize>], seed: u64, f: impl Fn(&mut Tape, &[Var]) -> Result<Var, DiffError>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<(Vec<usize>, Vec<f64>)> =
        shapes.iter().map(|s| (s.clone(), rand_vec(&mut rng, s.iter().product()))).collect();
    let report = check_inputs(
        &inputs,
        |t, v| {
            let out = f(t, v)?;
            readout(t, out, seed)
        },
        GradCheckOptions { seed, coords_per_tensor: 40, ..Default::default() },
    )
    .unwrap();
    assert!(report.passes(TOL), "worst {:?}", report.worst());
}

#[test]
fn matmul_identity_and_zero() {
    let mut t = Tape::new();
    let i = t.constant(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let m = t.constant(vec![2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap();
    let p = t.matmul(i, m).unwrap();
    assert_eq!(t.value(p), &[3.0, 4.0, 5.0, 6.0]);
    let a = t.constant(vec![1, 2], vec![1.0, 2.0]).unwrap();
    let z = t.constant(vec![2, 1], vec![0.0, 0.0]).unwrap();
    let p = t.matmul(a, z).unwrap();
    assert_eq!(t.shape(p), &[1, 1]);
    assert_eq!(t.value(p), &[0.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut t = Tape::new();
    let a = t.constant(vec![2, 3], vec![0.0; 6]).unwrap();
    let b = t.constant(vec![2, 3], vec![0.0; 6]).unwrap();
    let err = t.matmul(a, b).unwrap_err();
    assert_eq!(err, DiffError::ShapeMismatch { op: "matmul", left: vec![2, 3], right: vec![2, 3] });
    assert!(err.to_string().contains("[2, 3] vs [2, 3]"));
}

#[test]
fn matmul_sum_gradient_matches_finite_differences() {
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = vec![(vec![3, 4], rand_vec(&mut rng, 12)), (vec![4, 2], rand_vec(&mut rng, 8))];
        let report = check_inputs(
            &inputs,
            |t, v| {
                let p = t.matmul(v[0], v[1])?;
                Ok(t.sum_all(p))
            },
            GradCheckOptions { seed, coords_per_tensor: 100, ..Default::default() },
        )
        .unwrap();
        assert!(report.max_rel_error() < 1e-6, "{:?}", report.worst());
    }
}

#[test]
fn primitive_examples() {
    let mut t = Tape::new();
    let z = t.constant(vec![3], vec![0.0; 3]).unwrap();
    let s = t.softmax(z, 0).unwrap();
    for v in t.value(s) {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let x = t.constant(vec![1], vec![-1.0]).unwrap();
    let y = t.leaky_relu(x, 0.01);
    assert_eq!(t.value(y), &[-0.01]);

    let x = t.constant(vec![1, 3, 1], vec![1.0, 2.0, 3.0]).unwrap();
    let w = t.constant(vec![2, 1, 1], vec![1.0, 1.0]).unwrap();
    let b = t.constant(vec![1], vec![0.0]).unwrap();
    let c = t.conv1d(x, w, b, 1, 1).unwrap();
    assert_eq!(t.value(c), &[1.0, 3.0, 5.0]);
}

#[test]
fn embedding_rejects_out_of_vocabulary() {
    let mut t = Tape::new();
    let table = t.constant(vec![3, 2], vec![0.0; 6]).unwrap();
    assert_eq!(t.embedding(table, &[3]).unwrap_err(), DiffError::IndexOutOfVocab { index: 3, vocab: 3 });
    let e = t.embedding(table, &[2, 0]).unwrap();
    assert_eq!(t.shape(e), &[2, 2]);
}

#[test]
fn elementwise_shape_mismatch() {
    let mut t = Tape::new();
    let a = t.constant(vec![2], vec![0.0; 2]).unwrap();
    let b = t.constant(vec![3], vec![0.0; 3]).unwrap();
    assert!(matches!(t.add(a, b), Err(DiffError::ShapeMismatch { .. })));
    assert!(matches!(t.add_bcast(b, a), Err(DiffError::ShapeMismatch { .. })));
}

#[test]
fn backward_examples() {
    let mut store = ParamStore::new();
    let p = store.add("p", vec![3], vec![1.0, -2.0, 0.5], true).unwrap();
    let mut t = Tape::new();
    let v = t.param(&store, p);
    let l = t.sum_all(v);
    t.backward(l, &mut store).unwrap();
    assert_eq!(store.get(p).array.grad().unwrap(), &[1.0, 1.0, 1.0]);

    let mut store = ParamStore::new();
    let p = store.add("p", vec![2], vec![1.0, 2.0], true).unwrap();
    let mut t = Tape::new();
    let v = t.param(&store, p);
    let sq = t.square(v);
    let l = t.sum_all(sq);
    t.backward(l, &mut store).unwrap();
    assert_eq!(store.get(p).array.grad().unwrap(), &[2.0, 4.0]);
    assert_eq!(t.backward(l, &mut store).unwrap_err(), DiffError::BackwardTwice);
    t.reset_grads();
    assert!(t.backward(l, &mut store).is_ok());
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut store = ParamStore::new();
    let p = store.add("p", vec![2], vec![1.0, 2.0], true).unwrap();
    let mut t = Tape::new();
    let v = t.param(&store, p);
    assert_eq!(t.backward(v, &mut store).unwrap_err(), DiffError::NonScalarLoss(vec![2]));
}

#[test]
fn unreached_parameters_get_zero_gradients() {
    let mut store = ParamStore::new();
    let a = store.add("a", vec![2], vec![1.0, 2.0], true).unwrap();
    let b = store.add("b", vec![2], vec![1.0, 2.0], true).unwrap();
    let mut t = Tape::new();
    let va = t.param(&store, a);
    let _vb = t.param(&store, b);
    let l = t.sum_all(va);
    t.backward(l, &mut store).unwrap();
    assert_eq!(store.get(b).array.grad().unwrap(), &[0.0, 0.0]);
}

#[test]
fn duplicate_parameter_names_rejected() {
    let mut store = ParamStore::new();
    store.add("w", vec![1], vec![0.0], true).unwrap();
    assert_eq!(store.add("w", vec![1], vec![0.0], true).unwrap_err(), DiffError::DuplicateParam("w".into()));
}

#[test]
fn gradient_check_every_primitive() {
    for seed in 0..3 {
        check_op(&[vec![3, 4], vec![3, 4]], seed, |t, v| t.add(v[0], v[1]));
        check_op(&[vec![3, 4], vec![3, 4]], seed, |t, v| t.sub(v[0], v[1]));
        check_op(&[vec![3, 4], vec![3, 4]], seed, |t, v| t.mul(v[0], v[1]));
        check_op(&[vec![2, 3, 4], vec![3, 4]], seed, |t, v| t.add_bcast(v[0], v[1]));
        check_op(&[vec![2, 3, 4], vec![4]], seed, |t, v| t.mul_bcast(v[0], v[1]));
        check_op(&[vec![2, 3, 4], vec![4, 5]], seed, |t, v| t.matmul(v[0], v[1]));
        check_op(&[vec![2, 3, 4], vec![2, 4, 5]], seed, |t, v| t.bmm(v[0], v[1]));
        check_op(&[vec![2, 3, 4]], seed, |t, v| t.transpose_last2(v[0]));
        check_op(&[vec![2, 3, 4], vec![2, 2, 4]], seed, |t, v| t.concat(&[v[0], v[1]], 1));
        check_op(&[vec![2, 3, 4], vec![2, 3, 1]], seed, |t, v| t.concat(&[v[0], v[1]], 2));
        check_op(&[vec![2, 3, 4]], seed, |t, v| t.narrow(v[0], 2, 1, 2));
        check_op(&[vec![2, 3, 4]], seed, |t, v| t.flatten(v[0]));
        check_op(&[vec![3, 4]], seed, |t, v| Ok(t.sin(v[0])));
        check_op(&[vec![3, 4]], seed, |t, v| Ok(t.exp(v[0])));
        check_op(&[vec![3, 4]], seed, |t, v| Ok(t.neg_abs(v[0])));
        check_op(&[vec![3, 4]], seed, |t, v| Ok(t.leaky_relu(v[0], 0.01)));
        check_op(&[vec![3, 4]], seed, |t, v| Ok(t.softplus(v[0])));
        check_op(&[vec![3, 4]], seed, |t, v| Ok(t.sigmoid(v[0])));
        check_op(&[vec![3, 4]], seed, |t, v| Ok(t.tanh(v[0])));
        check_op(&[vec![3, 4]], seed, |t, v| {
            let s = t.softplus(v[0]);
            Ok(t.recip(s))
        });
        check_op(&[vec![2, 3, 4]], seed, |t, v| t.softmax(v[0], 1));
        check_op(&[vec![2, 3, 4]], seed, |t, v| t.softmax(v[0], 2));
        check_op(&[vec![2, 3, 4]], seed, |t, v| t.mean(v[0], 1));
        check_op(&[vec![3, 5], vec![5], vec![5]], seed, |t, v| t.layer_norm(v[0], v[1], v[2]));
        check_op(&[vec![6, 3], vec![3], vec![3]], seed, |t, v| {
            let (y, _) = t.batch_norm(v[0], v[1], v[2], (&[0.0; 3], &[1.0; 3]), true)?;
            Ok(y)
        });
        check_op(&[vec![6, 3], vec![3], vec![3]], seed, |t, v| {
            let (y, _) = t.batch_norm(v[0], v[1], v[2], (&[0.1, -0.2, 0.3], &[0.5, 1.5, 2.0]), false)?;
            Ok(y)
        });
        check_op(&[vec![2, 5, 3], vec![2, 3, 4], vec![4]], seed, |t, v| t.conv1d(v[0], v[1], v[2], 1, 1));
        check_op(&[vec![2, 7, 3], vec![3, 3, 2], vec![2]], seed, |t, v| t.conv1d(v[0], v[1], v[2], 2, 0));
        check_op(&[vec![2, 6, 3]], seed, |t, v| t.avg_pool1d(v[0], 2, 2));
        check_op(&[vec![2, 6, 3]], seed, |t, v| t.avg_pool1d(v[0], 6, 1));
        check_op(&[vec![5, 3]], seed, |t, v| t.embedding(v[0], &[4, 0, 4, 2]));
        check_op(&[vec![3, 6]], seed, |t, v| {
            let l = t.cross_entropy(v[0], &[5, 0, 2])?;
            Ok(t.scale(l, 3.0))
        });
    }
}

#[test]
fn parameter_gradient_check_through_store() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::new();
    let w = store.add("w", vec![4, 3], rand_vec(&mut rng, 12), true).unwrap();
    let b = store.add("b", vec![3], rand_vec(&mut rng, 3), true).unwrap();
    let x = rand_vec(&mut rng, 8);
    let report = check_params(
        &mut store,
        |t, s| {
            let xv = t.constant(vec![2, 4], x.clone())?;
            let wv = t.param(s, w);
            let bv = t.param(s, b);
            let h = t.matmul(xv, wv)?;
            let h = t.add_bcast(h, bv)?;
            let h = t.tanh(h);
            t.cross_entropy(h, &[0, 2])
        },
        GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.passes(TOL));
}

#[test]
fn adam_step_examples() {
    let mut store = ParamStore::new();
    let p = store.add("p", vec![1], vec![0.5], true).unwrap();
    let mut opt = Adam::new(AdamConfig::default(), &store);
    store.get_mut(p).array = {
        let mut a = store.get(p).array.clone();
        a.values_mut()[0] = 0.5;
        a
    };
    let mut t = Tape::new();
    let v = t.param(&store, p);
    let l = t.sum_all(v);
    t.backward(l, &mut store).unwrap();
    opt.step(&mut store).unwrap();
    assert!(store.values(p)[0] < 0.5);
    assert!(store.get(p).array.grad().is_none());

    // zero grad, zero decay: unchanged
    let mut store = ParamStore::new();
    let p = store.add("p", vec![2], vec![0.25, -3.0], true).unwrap();
    let mut opt = Adam::new(AdamConfig { weight_decay: 0.0, ..Default::default() }, &store);
    let mut t = Tape::new();
    let v = t.param(&store, p);
    let z = t.scale(v, 0.0);
    let l = t.sum_all(z);
    t.backward(l, &mut store).unwrap();
    opt.step(&mut store).unwrap();
    assert_eq!(store.values(p), &[0.25, -3.0]);
}

#[test]
fn adam_requires_gradients() {
    let mut store = ParamStore::new();
    store.add("p", vec![1], vec![1.0], true).unwrap();
    let mut opt = Adam::new(AdamConfig::default(), &store);
    assert_eq!(opt.step(&mut store).unwrap_err(), DiffError::MissingGrad("p".into()));
}

#[test]
fn weight_decay_skips_buffers() {
    let mut store = ParamStore::new();
    let p = store.add("p", vec![1], vec![1.0], true).unwrap();
    let buf = store.add("running", vec![1], vec![5.0], false).unwrap();
    let mut opt = Adam::new(AdamConfig { weight_decay: 0.5, ..Default::default() }, &store);
    let mut t = Tape::new();
    let v = t.param(&store, p);
    let l = t.sum_all(v);
    t.backward(l, &mut store).unwrap();
    opt.step(&mut store).unwrap();
    assert_eq!(store.values(buf), &[5.0]);
    assert_eq!(store.get(p).array.shape(), &[1]);
}

#[test]
fn adam_descends_quadratic_bowl() {
    let mut store = ParamStore::new();
    let p = store.add("p", vec![2], vec![1.0, 1.0], true).unwrap();
    let mut opt = Adam::new(AdamConfig::default(), &store);
    let norm = |s: &ParamStore| s.values(p).iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut last = norm(&store);
    for _ in 0..50 {
        let mut t = Tape::new();
        let v = t.param(&store, p);
        let sq = t.square(v);
        let l = t.sum_all(sq);
        t.backward(l, &mut store).unwrap();
        opt.step(&mut store).unwrap();
        let now = norm(&store);
        assert!(now < last);
        last = now;
    }
}

#[test]
fn forward_and_gradients_are_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let w = store.add("w", vec![5, 5], rand_vec(&mut rng, 25), true).unwrap();
        let x = rand_vec(&mut rng, 15);
        let mut t = Tape::new();
        let xv = t.constant(vec![3, 5], x).unwrap();
        let wv = t.param(&store, w);
        let h = t.matmul(xv, wv).unwrap();
        let s = t.softmax(h, 1).unwrap();
        let l = t.cross_entropy(s, &[1, 2, 3]).unwrap();
        t.backward(l, &mut store).unwrap();
        (t.value(l).to_vec(), store.get(w).array.grad().unwrap().to_vec())
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0[0].to_bits(), b.0[0].to_bits());
    assert!(a.1.iter().zip(&b.1).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    store.add("layer/w", vec![3, 2], rand_vec(&mut rng, 6), true).unwrap();
    store.add("layer/running_mean", vec![2], vec![1e-300, -0.1], false).unwrap();
    let ck = Checkpoint::from_store(&store, r#"{"model":"x"}"#);
    let text = ck.encode().unwrap();
    let back = Checkpoint::decode(&text).unwrap();
    assert_eq!(back, ck);
    let mut other = store.clone();
    for id in other.ids().collect::<Vec<_>>() {
        other.get_mut(id).array.values_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    back.restore_into(&mut other).unwrap();
    assert_eq!(other, store);
    assert_eq!(back.encode().unwrap(), text);
}

#[test]
fn corrupted_checkpoint_fails_integrity() {
    let mut store = ParamStore::new();
    store.add("w", vec![2], vec![0.5, 0.25], true).unwrap();
    let text = Checkpoint::from_store(&store, "{}").encode().unwrap();
    let tampered = text.replace("0.25", "0.26");
    let err = Checkpoint::decode(&tampered).unwrap_err();
    assert!(err.to_string().contains("integrity"), "{err}");
    assert!(Checkpoint::decode("garbage").is_err());
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(values in proptest::collection::vec(-50.0f64..50.0, 12)) {
        let mut t = Tape::new();
        let x = t.constant(vec![3, 4], values).unwrap();
        let s = t.softmax(x, 1).unwrap();
        for row in t.value(s).chunks(4) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|v| *v > 0.0));
        }
    }

    #[test]
    fn causal_conv_preserves_length(len in 1usize..20, kernel in 1usize..5, channels in 1usize..4) {
        let mut t = Tape::new();
        let x = t.constant(vec![2, len, channels], vec![0.5; 2 * len * channels]).unwrap();
        let w = t.constant(vec![kernel, channels, 3], vec![0.1; kernel * channels * 3]).unwrap();
        let b = t.constant(vec![3], vec![0.0; 3]).unwrap();
        let y = t.conv1d(x, w, b, 1, kernel - 1).unwrap();
        prop_assert_eq!(t.shape(y), &[2, len, 3]);
    }
}
