use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn small_spec(kind: NetworkKind) -> NetworkSpec {
    match kind {
        NetworkKind::Ffnn => NetworkSpec {
            kind,
            input_width: 4,
            hidden: vec![6, 5],
            activations: vec![Activation::Relu; 2],
            dropout: 0.2,
            window: 1,
        },
        NetworkKind::Rnn => NetworkSpec {
            kind,
            input_width: 3,
            hidden: vec![5, 4],
            activations: vec![Activation::Tanh, Activation::Sigmoid],
            dropout: 0.2,
            window: 6,
        },
    }
}

fn random_batch(rng: &mut ChaCha8Rng, spec: &NetworkSpec, b: usize) -> (Array3<f64>, Vec<f64>) {
    let x = Array3::from_shape_simple_fn((b, spec.window, spec.input_width), || rng.random_range(-1.0..1.0));
    let y = (0..b).map(|_| rng.random_range(-2.0..2.0)).collect();
    (x, y)
}

/// Central-difference check on randomly chosen scalars; returns the worst
/// relative error.
fn gradient_check(kind: NetworkKind, seed: u64) -> f64 {
    let spec = small_spec(kind);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = xavier_init(&spec, seed);
    // non-zero biases so every term is exercised
    for t in params.0.iter_mut().filter(|t| t.shape.len() == 1) {
        t.data.iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3));
    }
    let (x, y) = random_batch(&mut rng, &spec, 7);
    let (_, grads) = loss_and_gradient(&params, &spec, x.view(), &y, None).unwrap();
    let loss = |p: &Parameters| loss_mse(&forward(p, &spec, x.view(), None).unwrap(), &y).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let k = rng.random_range(0..params.count());
        let v = *params.value_mut(k);
        let h = 1e-5 * v.abs().max(1.0);
        *params.value_mut(k) = v + h;
        let up = loss(&params);
        *params.value_mut(k) = v - h;
        let down = loss(&params);
        *params.value_mut(k) = v;
        let numeric = (up - down) / (2.0 * h);
        let analytic = *grads.clone().value_mut(k);
        let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    worst
}

#[test]
fn ffnn_gradients_match_finite_differences() {
    for seed in 0..10 {
        let e = gradient_check(NetworkKind::Ffnn, seed);
        assert!(e < 1e-4, "seed {seed}: {e}");
    }
}

#[test]
fn lstm_gradients_match_finite_differences() {
    for seed in 0..10 {
        let e = gradient_check(NetworkKind::Rnn, seed);
        assert!(e < 1e-4, "seed {seed}: {e}");
    }
}

#[test]
fn perfect_predictions_give_zero_loss_and_gradient() {
    let spec = small_spec(NetworkKind::Ffnn);
    let params = xavier_init(&spec, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (x, _) = random_batch(&mut rng, &spec, 5);
    let y = forward(&params, &spec, x.view(), None).unwrap();
    let (loss, grads) = loss_and_gradient(&params, &spec, x.view(), &y, None).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grads.iter_values().all(|g| *g == 0.0));
}

#[test]
fn doubling_targets_quadruples_loss_at_zero_prediction() {
    let t = [0.3, -1.2, 2.0];
    let t2: Vec<f64> = t.iter().map(|v| 2.0 * v).collect();
    let zero = [0.0; 3];
    assert!((loss_mse(&zero, &t2).unwrap() - 4.0 * loss_mse(&zero, &t).unwrap()).abs() < 1e-15);
}

#[test]
fn xavier_bounds_and_zero_biases() {
    assert!((xavier_bound(250, 100) - 0.130931).abs() < 1e-6);
    let spec = NetworkSpec::preset(NetworkKind::Ffnn, InputSet::I1);
    let p = xavier_init(&spec, 9);
    assert_eq!(p.0[2].shape, vec![250, 100]);
    assert!(p.0[2].data.iter().all(|w| w.abs() <= xavier_bound(250, 100)));
    assert!(p.0.iter().filter(|t| t.shape.len() == 1).all(|t| t.data.iter().all(|b| *b == 0.0)));
    assert_eq!(p, xavier_init(&spec, 9));
    assert_ne!(p, xavier_init(&spec, 10));
}

#[test]
fn presets_follow_published_architectures() {
    let widths = |k, i| NetworkSpec::preset(k, i).hidden;
    assert_eq!(widths(NetworkKind::Ffnn, InputSet::I1), vec![250, 100]);
    assert_eq!(widths(NetworkKind::Ffnn, InputSet::I2), vec![150, 50]);
    assert_eq!(widths(NetworkKind::Rnn, InputSet::I1), vec![100, 80]);
    assert_eq!(widths(NetworkKind::Rnn, InputSet::I2), vec![100, 50]);
    let rnn = NetworkSpec::preset(NetworkKind::Rnn, InputSet::I2);
    assert_eq!((rnn.input_width, rnn.window, rnn.dropout), (17, 20, 0.2));
}

#[test]
fn zero_weights_give_zero_output() {
    let spec = small_spec(NetworkKind::Ffnn);
    let params = xavier_init(&spec, 1).zeros_like();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (x, _) = random_batch(&mut rng, &spec, 4);
    assert!(forward(&params, &spec, x.view(), None).unwrap().iter().all(|v| *v == 0.0));
}

#[test]
fn hand_computed_single_unit_network() {
    let spec = NetworkSpec {
        kind: NetworkKind::Ffnn,
        input_width: 2,
        hidden: vec![1],
        activations: vec![Activation::Relu],
        dropout: 0.0,
        window: 1,
    };
    let params = Parameters(vec![
        Tensor { shape: vec![2, 1], data: vec![0.5, -1.0] },
        Tensor { shape: vec![1], data: vec![0.25] },
        Tensor { shape: vec![1, 1], data: vec![3.0] },
        Tensor { shape: vec![1], data: vec![-0.5] },
    ]);
    let x = Array3::from_shape_vec((2, 1, 2), vec![2.0, 0.5, 0.0, 1.0]).unwrap();
    let y = forward(&params, &spec, x.view(), None).unwrap();
    // relu(0.5·2 − 0.5 + 0.25) = 0.75 → 3·0.75 − 0.5; second input is clipped
    assert!((y[0] - 1.75).abs() < 1e-15);
    assert!((y[1] + 0.5).abs() < 1e-15);
}

#[test]
fn inference_ignores_dropout_and_matches_mask_average() {
    let spec = small_spec(NetworkKind::Ffnn);
    let params = xavier_init(&spec, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (x, _) = random_batch(&mut rng, &spec, 1);
    let inference = forward(&params, &spec, x.view(), None).unwrap()[0];
    assert_eq!(inference, forward(&params, &spec, x.view(), None).unwrap()[0]);
    // a single hidden layer keeps the output linear in each mask, so the mask
    // average equals the inference output
    let one = NetworkSpec { hidden: vec![40], activations: vec![Activation::Relu], ..spec };
    let mut params = xavier_init(&one, 4);
    params.0.last_mut().unwrap().data[0] = 1.0;
    let reference = forward(&params, &one, x.view(), None).unwrap()[0];
    let mut drop_rng = ChaCha8Rng::seed_from_u64(5);
    let n = 10_000;
    let draws: Vec<f64> = (0..n).map(|_| forward(&params, &one, x.view(), Some(&mut drop_rng)).unwrap()[0]).collect();
    let mean = draws.iter().sum::<f64>() / n as f64;
    let se = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n * (n - 1)) as f64).sqrt();
    assert!((mean - reference).abs() <= 0.01 * reference.abs(), "{mean} vs {reference} (se {se})");
}

#[test]
fn lstm_with_zero_weights_returns_head_bias() {
    let spec = small_spec(NetworkKind::Rnn);
    let mut params = xavier_init(&spec, 1).zeros_like();
    params.0.last_mut().unwrap().data[0] = 0.7;
    let x = Array3::zeros((3, spec.window, spec.input_width));
    let y = forward(&params, &spec, x.view(), None).unwrap();
    assert!(y.iter().all(|v| (*v - 0.7).abs() < 1e-15));
}

#[test]
fn lstm_matches_hand_unrolled_recurrence() {
    let spec = NetworkSpec {
        kind: NetworkKind::Rnn,
        input_width: 1,
        hidden: vec![1],
        activations: vec![Activation::Identity],
        dropout: 0.0,
        window: 3,
    };
    // gate weights on the input, recurrent weights, biases: i, f, g, o
    let (wx, wh, b) = ([0.5, -0.3, 0.8, 0.2], [0.1, 0.4, -0.6, 0.3], [0.0, 0.2, 0.1, -0.1]);
    let params = Parameters(vec![
        Tensor { shape: vec![1, 4], data: wx.to_vec() },
        Tensor { shape: vec![1, 4], data: wh.to_vec() },
        Tensor { shape: vec![4], data: b.to_vec() },
        Tensor { shape: vec![1, 1], data: vec![2.0] },
        Tensor { shape: vec![1], data: vec![0.1] },
    ]);
    let input = 0.9;
    let s = |v: f64| 1.0 / (1.0 + (-v).exp());
    let (mut h, mut c) = (0.0f64, 0.0f64);
    for _ in 0..3 {
        let z: Vec<f64> = (0..4).map(|k| wx[k] * input + wh[k] * h + b[k]).collect();
        let (i, f, g, o) = (s(z[0]), s(z[1]), z[2].tanh(), s(z[3]));
        c = f * c + i * g;
        h = o * c.tanh();
    }
    let x = Array3::from_elem((1, 3, 1), input);
    let y = forward(&params, &spec, x.view(), None).unwrap()[0];
    assert!((y - (2.0 * h + 0.1)).abs() < 1e-15);
}

#[test]
fn windows_are_independent_of_batch_order() {
    let spec = small_spec(NetworkKind::Rnn);
    let params = xavier_init(&spec, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (x, _) = random_batch(&mut rng, &spec, 4);
    let y = forward(&params, &spec, x.view(), None).unwrap();
    let mut rev = x.clone();
    rev.invert_axis(ndarray::Axis(0));
    let mut y_rev = forward(&params, &spec, rev.view(), None).unwrap();
    y_rev.reverse();
    assert_eq!(y, y_rev);
}

#[test]
fn wrong_batch_shape_is_rejected() {
    let spec = small_spec(NetworkKind::Rnn);
    let params = xavier_init(&spec, 1);
    let x = Array3::zeros((2, spec.window - 1, spec.input_width));
    assert!(matches!(forward(&params, &spec, x.view(), None), Err(Error::Shape(_))));
}

fn scalar_params(v: f64) -> Parameters {
    Parameters(vec![Tensor { shape: vec![1], data: vec![v] }])
}

#[test]
fn adam_first_step_by_hand() {
    let mut p = scalar_params(1.0);
    let mut st = OptimizerState::new(OptimizerKind::Adam, 8e-4, &p);
    adam_update(&mut st, &mut p, &scalar_params(0.3)).unwrap();
    // m̂ = g, v̂ = g², step = lr·g/(|g| + ε)
    let expected = 1.0 - 8e-4 * 0.3 / (0.3 + 1e-8);
    assert!((p.0[0].data[0] - expected).abs() < 1e-15);
}

#[test]
fn nadam_first_step_by_hand() {
    let mut p = scalar_params(1.0);
    let mut st = OptimizerState::new(OptimizerKind::Nadam, 5e-4, &p);
    nadam_update(&mut st, &mut p, &scalar_params(-2.0)).unwrap();
    let g: f64 = -2.0;
    let m_hat = 0.9 * (0.1 * g) / (1.0 - 0.81) + 0.1 * g / 0.1;
    let expected = 1.0 - 5e-4 * m_hat / (g.abs() + 1e-8);
    assert!((p.0[0].data[0] - expected).abs() < 1e-15);
}

#[test]
fn nadam_without_lookahead_is_adam() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut a = scalar_params(0.5);
    let mut n = scalar_params(0.5);
    let mut sa = OptimizerState::new(OptimizerKind::Adam, 1e-3, &a);
    let mut sn = OptimizerState::new(OptimizerKind::Nadam, 1e-3, &n);
    sn.nesterov = false;
    for _ in 0..50 {
        let g = scalar_params(rng.random_range(-1.0..1.0));
        sa.update(&mut a, &g).unwrap();
        sn.update(&mut n, &g).unwrap();
    }
    assert_eq!(a, n);
}

#[test]
fn zero_gradient_leaves_parameters() {
    let mut p = scalar_params(0.42);
    let mut st = OptimizerState::new(OptimizerKind::Nadam, 1e-3, &p);
    for _ in 0..5 {
        st.update(&mut p, &scalar_params(0.0)).unwrap();
    }
    assert_eq!(p.0[0].data[0], 0.42);
}

#[test]
fn scaler_contract() {
    let train = Array2::from_shape_vec((3, 2), vec![0.0, 5.0, 10.0, 5.0, 4.0, 5.0]).unwrap();
    let s = Scaler::fit(train.view()).unwrap();
    let test = Array2::from_shape_vec((2, 2), vec![5.0, 5.0, 12.0, 7.0]).unwrap();
    let out = s.apply(test.view()).unwrap();
    assert_eq!(out, Array2::from_shape_vec((2, 2), vec![0.5, 0.0, 1.2, 0.0]).unwrap());
    let own = s.apply(train.view()).unwrap();
    assert_eq!(own.column(0).fold(f64::INFINITY, |a, &v| a.min(v)), 0.0);
    assert_eq!(own.column(0).fold(0.0, |a: f64, &v| a.max(v)), 1.0);
    assert!(matches!(Scaler::fit(Array2::zeros((0, 2)).view()), Err(Error::Empty(_))));
}

fn linear_set(rng: &mut ChaCha8Rng, n: usize, offset: f64) -> SequenceSet {
    let x = Array2::from_shape_simple_fn((n, 2), || rng.random_range(0.0..1.0));
    let y = x.column(0).iter().map(|v| 0.5 * v + offset).collect();
    SequenceSet::new(vec![(x, y, vec![false; n])], 1, 1).unwrap()
}

fn tiny_ffnn() -> NetworkSpec {
    NetworkSpec {
        kind: NetworkKind::Ffnn,
        input_width: 2,
        hidden: vec![16, 8],
        activations: vec![Activation::Relu; 2],
        dropout: 0.0,
        window: 1,
    }
}

#[test]
fn learns_a_linear_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (train, val) = (linear_set(&mut rng, 2000, 0.0), linear_set(&mut rng, 400, 0.0));
    let cfg = TrainConfig {
        optimizer: OptimizerKind::Adam,
        learning_rate: 1e-2,
        batch_size: 64,
        patience: 50,
        max_epochs: 50,
        stride: 1,
        seed: 6,
    };
    let out = train_with_early_stopping(&tiny_ffnn(), &train, &val, &cfg).unwrap();
    assert!(out.history[out.best_epoch - 1].val_loss < 1e-3, "{:?}", out.history.last());
    assert!(out.history.len() <= 50);
}

#[test]
fn early_stopping_keeps_best_epoch() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    // validation targets sit far below the training targets, so fitting the
    // training data only moves away from them
    let train = linear_set(&mut rng, 500, 5.0);
    let val = linear_set(&mut rng, 100, -5.0);
    let cfg = TrainConfig { patience: 1, max_epochs: 30, batch_size: 50, ..TrainConfig::preset(NetworkKind::Ffnn) };
    let out = train_with_early_stopping(&tiny_ffnn(), &train, &val, &cfg).unwrap();
    assert_eq!(out.history.len(), 2);
    assert_eq!(out.best_epoch, 1);
    assert!(out.history[1].val_loss > out.history[0].val_loss);
    let again = train_with_early_stopping(&tiny_ffnn(), &train, &val, &cfg).unwrap();
    assert_eq!(again.history, out.history);
    assert_eq!(again.params, out.params);
}

#[test]
fn rnn_prediction_pads_the_warm_up_and_settles_after_a_step() {
    let spec = NetworkSpec { window: 5, ..small_spec(NetworkKind::Rnn) };
    let params = xavier_init(&spec, 2);
    let x = Array2::from_shape_fn((30, 3), |(i, _)| if i < 15 { 0.0 } else { 1.0 });
    let y = predict_scaled(&params, &spec, x.view()).unwrap();
    assert_eq!(y.len(), 30);
    assert!(y[..4].iter().all(|v| *v == y[4]));
    // once the window only holds post-step samples the output is constant
    assert!(y[19..].iter().all(|v| (*v - y[19]).abs() < 1e-15));
    assert!(y[14..19].iter().all(|v| (*v - y[19]).abs() > 0.0));
}

#[test]
fn checkpoint_round_trip() {
    let spec = small_spec(NetworkKind::Ffnn);
    let spec = NetworkSpec { input_width: 5, ..spec };
    let params = xavier_init(&spec, 3);
    let ck = Checkpoint {
        version: CHECKPOINT_VERSION,
        input_set: InputSet::I1,
        spec,
        scaler: Scaler { min: vec![0.0; 5], max: vec![1.0; 5] },
        optimizer: OptimizerState::new(OptimizerKind::Adam, 1e-3, &params),
        params,
        history: vec![EpochRecord { epoch: 1, train_loss: 0.5, val_loss: 0.25 }],
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    ck.save(&path).unwrap();
    assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    let frames = vec![crate::frame::MeasurementFrame { vx: 10.0, ..Default::default() }; 4];
    assert_eq!(ck.predict(&frames).unwrap().len(), 4);
    let i2 = Checkpoint { input_set: InputSet::I2, ..ck };
    assert!(matches!(i2.predict(&frames), Err(Error::MissingChannel(c)) if c == "fx_fl"));
}
