use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random_tensor(rng: &mut ChaCha8Rng, dims: [usize; 3]) -> Tensor3 {
    let n = dims[0] * dims[1] * dims[2];
    Tensor3::from_vec(dims, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn random_param(rng: &mut ChaCha8Rng, name: &str, shape: Vec<usize>) -> Parameter {
    let n = shape.iter().product();
    Parameter::new(name, shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Direct sliding dot product, independent of the im2col/GEMM path.
fn naive_conv(
    x: &Tensor3,
    w: &[f64],
    bias: &[f64],
    out_ch: usize,
    k: usize,
    dilation: usize,
    stride: usize,
    replicate: bool,
) -> Tensor3 {
    let [batch, in_ch, time] = x.dims();
    let total = (k - 1) * dilation;
    let (padded, left) = if replicate { (time + total, total / 2) } else { (time, 0) };
    let t_out = (padded - total - 1) / stride + 1;
    let mut out = Tensor3::zeros(batch, out_ch, t_out);
    for b in 0..batch {
        for o in 0..out_ch {
            for t in 0..t_out {
                let mut s = bias[o];
                for i in 0..in_ch {
                    for j in 0..k {
                        let p = (t * stride + j * dilation) as isize - left as isize;
                        let p = p.clamp(0, time as isize - 1) as usize;
                        s += w[(o * in_ch + i) * k + j] * x.at(b, i, p);
                    }
                }
                out.set(b, o, t, s);
            }
        }
    }
    out
}

fn conv_store(w: Vec<f64>, shape: [usize; 3], bias: Vec<f64>) -> (ParamStore, ParamId, ParamId) {
    let mut ps = ParamStore::new();
    let wid = ps.add(Parameter::new("w", shape.to_vec(), w));
    let bid = ps.add(Parameter::new("b", vec![shape[0]], bias));
    (ps, wid, bid)
}

#[test]
fn conv_identity_kernel_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_tensor(&mut rng, [2, 1, 7]);
    let (ps, w, b) = conv_store(vec![1.0], [1, 1, 1], vec![0.0]);
    let mut tape = Tape::new();
    let xi = tape.input(x.clone());
    let y = tape.conv1d(&ps, xi, w, Some(b), ConvSpec::valid(1)).unwrap();
    assert_eq!(tape.value(y), &x);
}

#[test]
fn conv_zero_kernel_gives_zeros() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_tensor(&mut rng, [2, 3, 9]);
    let (ps, w, b) = conv_store(vec![0.0; 4 * 3 * 3], [4, 3, 3], vec![0.0; 4]);
    let mut tape = Tape::new();
    let xi = tape.input(x);
    let y = tape.conv1d(&ps, xi, w, Some(b), ConvSpec::replicate(2)).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn conv_difference_kernel_hand_value() {
    let x = Tensor3::from_rows(&[vec![1.0, 2.0, 3.0, 4.0, 5.0]]).unwrap();
    let (ps, w, b) = conv_store(vec![1.0, 0.0, -1.0], [1, 1, 3], vec![0.0]);
    let mut tape = Tape::new();
    let xi = tape.input(x);
    let y = tape.conv1d(&ps, xi, w, Some(b), ConvSpec::valid(1)).unwrap();
    assert_eq!(tape.value(y).data(), &[-2.0, -2.0, -2.0]);
}

#[test]
fn conv_matches_naive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for &(k, d, s, rep) in &[
        (3, 1, 1, false),
        (3, 3, 1, false),
        (3, 2, 1, true),
        (5, 1, 1, true),
        (3, 1, 3, false),
        (1, 1, 1, false),
    ] {
        let x = random_tensor(&mut rng, [3, 4, 19]);
        let w: Vec<f64> = (0..5 * 4 * k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bias: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (ps, wid, bid) = conv_store(w.clone(), [5, 4, k], bias.clone());
        let spec = ConvSpec {
            dilation: d,
            stride: s,
            padding: if rep { Padding::Replicate } else { Padding::Valid },
        };
        let mut tape = Tape::new();
        let xi = tape.input(x.clone());
        let y = tape.conv1d(&ps, xi, wid, Some(bid), spec).unwrap();
        let expect = naive_conv(&x, &w, &bias, 5, k, d, s, rep);
        assert_eq!(tape.value(y).dims(), expect.dims());
        for (a, e) in tape.value(y).data().iter().zip(expect.data()) {
            assert!((a - e).abs() < 1e-12, "k={k} d={d} s={s}: {a} vs {e}");
        }
    }
}

#[test]
fn conv_output_lengths() {
    let (ps, w, b) = conv_store(vec![0.1; 3], [1, 1, 3], vec![0.0]);
    let mut tape = Tape::new();
    let xi = tape.input(Tensor3::zeros(1, 1, 20));
    let v = tape.conv1d(&ps, xi, w, Some(b), ConvSpec::valid(3)).unwrap();
    assert_eq!(tape.value(v).time(), 20 - 2 * 3);
    let r = tape.conv1d(&ps, xi, w, Some(b), ConvSpec::replicate(3)).unwrap();
    assert_eq!(tape.value(r).time(), 20);
}

#[test]
fn conv_errors() {
    let (ps, w, b) = conv_store(vec![0.1; 3], [1, 1, 3], vec![0.0]);
    let mut tape = Tape::new();
    let short = tape.input(Tensor3::zeros(1, 1, 4));
    assert_eq!(
        tape.conv1d(&ps, short, w, Some(b), ConvSpec::valid(2)),
        Err(AutodiffError::Window { needed: 5, got: 4 })
    );
    let wrong = tape.input(Tensor3::zeros(1, 2, 10));
    assert!(matches!(
        tape.conv1d(&ps, wrong, w, Some(b), ConvSpec::valid(1)),
        Err(AutodiffError::Dimension(_))
    ));
}

#[test]
fn conv_is_bitwise_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_tensor(&mut rng, [4, 6, 30]);
        let mut ps = ParamStore::new();
        let w = ps.add(random_param(&mut rng, "w", vec![8, 6, 3]));
        let mut tape = Tape::new();
        let xi = tape.input(x);
        let y = tape.conv1d(&ps, xi, w, None, ConvSpec::valid(3)).unwrap();
        let s = tape.sum(y);
        tape.backward(s, &mut ps).unwrap();
        (tape.value(y).clone(), ps.get(w).grad.clone())
    };
    let (a, ga) = run();
    let (b, gb) = run();
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert!(ga.iter().zip(&gb).all(|(x, y)| x.to_bits() == y.to_bits()));
}

proptest! {
    #[test]
    fn conv_is_linear_in_input(seed in 0u64..1000, alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_tensor(&mut rng, [2, 3, 15]);
        let b = random_tensor(&mut rng, [2, 3, 15]);
        let mut ps = ParamStore::new();
        let w = ps.add(random_param(&mut rng, "w", vec![4, 3, 3]));
        let combo = Tensor3::from_vec(
            a.dims(),
            a.data().iter().zip(b.data()).map(|(x, y)| alpha * x + beta * y).collect(),
        ).unwrap();
        let mut tape = Tape::new();
        let (ai, bi, ci) = (tape.input(a), tape.input(b), tape.input(combo));
        let spec = ConvSpec::valid(2);
        let ya = tape.conv1d(&ps, ai, w, None, spec).unwrap();
        let yb = tape.conv1d(&ps, bi, w, None, spec).unwrap();
        let yc = tape.conv1d(&ps, ci, w, None, spec).unwrap();
        for ((c, x), y) in tape.value(yc).data().iter().zip(tape.value(ya).data()).zip(tape.value(yb).data()) {
            prop_assert!((c - (alpha * x + beta * y)).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_norm_train_output_is_standardized(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, [5, 3, 11]).map(|v| 4.0 * v + 2.5);
        let mut ps = ParamStore::new();
        let g = ps.add(Parameter::new("g", vec![3], vec![1.0; 3]));
        let b = ps.add(Parameter::new("b", vec![3], vec![0.0; 3]));
        let mut running = RunningStats::new(3);
        let mut tape = Tape::new();
        let xi = tape.input(x);
        let y = tape
            .batch_norm(&ps, xi, g, b, BnMode::Train { running: &mut running, momentum: BN_MOMENTUM }, BN_EPS)
            .unwrap();
        let out = tape.value(y);
        for c in 0..3 {
            let vals: Vec<f64> = (0..5).flat_map(|bb| out.row(bb, c).to_vec()).collect();
            let n = vals.len() as f64;
            let mu = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
            prop_assert!(mu.abs() < 1e-6);
            prop_assert!((var - 1.0).abs() < 1e-4);
        }
    }
}

fn bn_store(ch: usize, gamma: f64, beta: f64) -> (ParamStore, ParamId, ParamId) {
    let mut ps = ParamStore::new();
    let g = ps.add(Parameter::new("g", vec![ch], vec![gamma; ch]));
    let b = ps.add(Parameter::new("b", vec![ch], vec![beta; ch]));
    (ps, g, b)
}

#[test]
fn batch_norm_constant_channel_maps_to_beta() {
    let (ps, g, b) = bn_store(1, 1.0, 0.7);
    let mut running = RunningStats::new(1);
    let mut tape = Tape::new();
    let xi = tape.input(Tensor3::filled(3, 1, 4, 5.0));
    let y = tape
        .batch_norm(&ps, xi, g, b, BnMode::Train { running: &mut running, momentum: 0.1 }, BN_EPS)
        .unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.7));
}

#[test]
fn batch_norm_two_values_hand_oracle() {
    let (ps, g, b) = bn_store(1, 1.0, 0.0);
    let mut running = RunningStats::new(1);
    let mut tape = Tape::new();
    let xi = tape.input(Tensor3::from_rows(&[vec![1.0, 3.0]]).unwrap());
    let y = tape
        .batch_norm(&ps, xi, g, b, BnMode::Train { running: &mut running, momentum: 0.1 }, BN_EPS)
        .unwrap();
    // mean 2, biased variance 1
    let k = 1.0 / (1.0 + BN_EPS).sqrt();
    let out = tape.value(y).data();
    assert!((out[0] + k).abs() < 1e-15 && (out[1] - k).abs() < 1e-15);
    // running: mean 0.9*0 + 0.1*2, var 0.9*1 + 0.1*2 (unbiased variance of {1,3})
    assert!((running.mean[0] - 0.2).abs() < 1e-15);
    assert!((running.var[0] - 1.1).abs() < 1e-15);
}

#[test]
fn batch_norm_standardized_input_passes_through() {
    let (ps, g, b) = bn_store(1, 1.0, 0.0);
    let mut running = RunningStats::new(1);
    let x = Tensor3::from_rows(&[vec![-1.0, 1.0, -1.0, 1.0]]).unwrap();
    let mut tape = Tape::new();
    let xi = tape.input(x.clone());
    let y = tape
        .batch_norm(&ps, xi, g, b, BnMode::Train { running: &mut running, momentum: 0.1 }, BN_EPS)
        .unwrap();
    let k = 1.0 / (1.0 + BN_EPS).sqrt();
    for (o, i) in tape.value(y).data().iter().zip(x.data()) {
        assert!((o - i * k).abs() < 1e-15);
    }
}

#[test]
fn batch_norm_eval_uses_running_stats() {
    let (ps, g, b) = bn_store(1, 2.0, 1.0);
    let running = RunningStats {
        mean: vec![3.0],
        var: vec![4.0 - BN_EPS],
    };
    let mut tape = Tape::new();
    let xi = tape.input(Tensor3::from_rows(&[vec![5.0, 1.0]]).unwrap());
    let y = tape
        .batch_norm(&ps, xi, g, b, BnMode::Eval { running: &running }, BN_EPS)
        .unwrap();
    let out = tape.value(y).data();
    assert!((out[0] - 3.0).abs() < 1e-12 && (out[1] + 1.0).abs() < 1e-12);
}

#[test]
fn batch_norm_rejects_empty_batch() {
    let (ps, g, b) = bn_store(2, 1.0, 0.0);
    let mut running = RunningStats::new(2);
    let mut tape = Tape::new();
    let xi = tape.input(Tensor3::zeros(0, 2, 5));
    assert_eq!(
        tape.batch_norm(&ps, xi, g, b, BnMode::Train { running: &mut running, momentum: 0.1 }, BN_EPS),
        Err(AutodiffError::EmptyInput)
    );
}

#[test]
fn activations_hand_values() {
    let mut tape = Tape::new();
    let x = tape.input(Tensor3::from_rows(&[vec![-1.0, 2.0, 0.0, 50.0, -50.0]]).unwrap());
    let r = tape.relu(x);
    let s = tape.sigmoid(x);
    assert_eq!(&tape.value(r).data()[..2], &[0.0, 2.0]);
    let s = tape.value(s).data();
    assert_eq!(s[2], 0.5);
    assert!((1.0 - s[3]).abs() < 1e-15);
    assert!(s[4].abs() < 1e-15 && s[4] > 0.0);
}

#[test]
fn sigmoid_strictly_inside_unit_interval() {
    for i in -3000..=3000 {
        let v = sigmoid(i as f64 * 0.01);
        assert!(v > 0.0 && v < 1.0);
    }
}

#[test]
fn hadamard_hand_values_and_shape_check() {
    let mut tape = Tape::new();
    let a = tape.input(Tensor3::from_rows(&[vec![2.0, 3.0]]).unwrap());
    let b = tape.input(Tensor3::from_rows(&[vec![4.0, -1.0]]).unwrap());
    let ones = tape.input(Tensor3::filled(1, 1, 2, 1.0));
    let zeros = tape.input(Tensor3::zeros(1, 1, 2));
    let p = tape.hadamard(a, b).unwrap();
    assert_eq!(tape.value(p).data(), &[8.0, -3.0]);
    let p1 = tape.hadamard(a, ones).unwrap();
    assert_eq!(tape.value(p1).data(), &[2.0, 3.0]);
    let p0 = tape.hadamard(a, zeros).unwrap();
    assert_eq!(tape.value(p0).data(), &[0.0, 0.0]);
    let c = tape.input(Tensor3::zeros(1, 1, 3));
    assert!(tape.hadamard(a, c).is_err());
}

#[test]
fn mse_loss_hand_values() {
    let mut tape = Tape::new();
    // two joints, diffs (1,2,2) and (0,3,4)
    let pred = tape.input(Tensor3::from_vec([1, 6, 1], vec![1.0, 2.0, 2.0, 0.0, 3.0, 4.0]).unwrap());
    let l = tape.mse_loss(pred, &[0.0; 6], 2).unwrap();
    assert_eq!(tape.value(l).data()[0], 17.0);
    let same = tape.mse_loss(pred, &[1.0, 2.0, 2.0, 0.0, 3.0, 4.0], 2).unwrap();
    assert_eq!(tape.value(same).data()[0], 0.0);
    // unit offset on every joint of a two-sample batch
    let p2 = tape.input(Tensor3::from_vec([2, 6, 1], vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap());
    let l2 = tape.mse_loss(p2, &[0.0; 12], 2).unwrap();
    assert_eq!(tape.value(l2).data()[0], 1.0);
    assert!(tape.mse_loss(p2, &[0.0; 6], 2).is_err());
}

#[test]
fn backward_requires_recorded_scalar() {
    let mut ps = ParamStore::new();
    let tape = Tape::new();
    let mut t2 = Tape::new();
    let x = t2.input(Tensor3::zeros(1, 1, 3));
    assert_eq!(t2.backward(x, &mut ps), Err(AutodiffError::NonScalarLoss([1, 1, 3])));
    let mut t3 = Tape::new();
    let s = t3.input(Tensor3::zeros(1, 1, 1));
    drop(t3);
    assert_eq!(tape.backward(s, &mut ps), Err(AutodiffError::EmptyTape));
}

#[test]
fn square_gradient_matches_hand_and_finite_difference() {
    let mut ps = ParamStore::new();
    let w = ps.add(Parameter::new("w", vec![1], vec![3.0]));
    let mut f = |ps: &ParamStore, tape: &mut Tape| -> Result<NodeId, AutodiffError> {
        let n = tape.param(ps, w);
        let sq = tape.hadamard(n, n)?;
        Ok(tape.sum(sq))
    };
    let grads = analytic_gradients(&mut ps, &mut f).unwrap();
    assert_eq!(grads[0][0], 6.0);
    let h = 1e-5;
    let fd = ((3.0 + h) * (3.0 + h) - (3.0 - h) * (3.0 - h)) / (2.0 * h);
    assert!((grads[0][0] - fd).abs() < 1e-9);
}

#[test]
fn unused_parameter_gets_zero_gradient_and_accumulation_is_additive() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut ps = ParamStore::new();
    let w = ps.add(random_param(&mut rng, "w", vec![2, 2, 3]));
    let unused = ps.add(random_param(&mut rng, "unused", vec![5]));
    let x = random_tensor(&mut rng, [1, 2, 8]);
    let run = |ps: &mut ParamStore| {
        let mut tape = Tape::new();
        let xi = tape.input(x.clone());
        let y = tape.conv1d(ps, xi, w, None, ConvSpec::valid(1)).unwrap();
        let s = tape.sum(y);
        tape.backward(s, ps).unwrap();
    };
    run(&mut ps);
    let once = ps.get(w).grad.clone();
    assert!(ps.get(unused).grad.iter().all(|&g| g == 0.0));
    run(&mut ps);
    for (g2, g1) in ps.get(w).grad.iter().zip(&once) {
        assert_eq!(*g2, 2.0 * g1);
    }
    ps.zero_grad();
    assert!(ps.iter().all(|(_, p)| p.grad.iter().all(|&g| g == 0.0)));
}

/// Builds a loss exercising one op family on random data.
fn op_loss<'a>(
    kind: usize,
    x: &'a Tensor3,
    ids: &[ParamId],
) -> impl FnMut(&ParamStore, &mut Tape) -> Result<NodeId, AutodiffError> + 'a {
    let ids = ids.to_vec();
    move |ps: &ParamStore, tape: &mut Tape| {
        let xi = tape.input(x.clone());
        let out = match kind {
            // conv, valid + dilation
            0 => tape.conv1d(ps, xi, ids[0], Some(ids[1]), ConvSpec::valid(2))?,
            // conv, replicate + stride
            1 => tape.conv1d(
                ps,
                xi,
                ids[0],
                Some(ids[1]),
                ConvSpec { dilation: 1, stride: 2, padding: Padding::Replicate },
            )?,
            // conv -> train batch norm
            2 => {
                let c = tape.conv1d(ps, xi, ids[0], None, ConvSpec::valid(1))?;
                let mut rs = RunningStats::new(3);
                tape.batch_norm(ps, c, ids[2], ids[3], BnMode::Train { running: &mut rs, momentum: 0.1 }, BN_EPS)?
            }
            // conv -> sigmoid, conv -> relu, product
            3 => {
                let a = tape.conv1d(ps, xi, ids[0], Some(ids[1]), ConvSpec::valid(1))?;
                let b = tape.conv1d(ps, xi, ids[4], None, ConvSpec::valid(1))?;
                let s = tape.sigmoid(a);
                let r = tape.relu(b);
                tape.hadamard(s, r)?
            }
            // conv -> slice + pad, add
            _ => {
                let a = tape.conv1d(ps, xi, ids[0], Some(ids[1]), ConvSpec::valid(1))?;
                let s = tape.slice_time(a, 1, 2, 3)?;
                let p = tape.pad_channels(s, 2);
                let q = tape.pad_channels(s, 2);
                tape.add(p, q)?
            }
        };
        // square then sum so that every op sees a non-constant upstream gradient
        let sq = tape.hadamard(out, out)?;
        Ok(tape.sum(sq))
    }
}

#[test]
fn every_op_matches_finite_differences_over_ten_seeds() {
    for seed in 0..10u64 {
        for kind in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let x = random_tensor(&mut rng, [2, 2, 9]);
            let mut ps = ParamStore::new();
            let ids = vec![
                ps.add(random_param(&mut rng, "w", vec![3, 2, 3])),
                ps.add(random_param(&mut rng, "b", vec![3])),
                ps.add(random_param(&mut rng, "gamma", vec![3])),
                ps.add(random_param(&mut rng, "beta", vec![3])),
                ps.add(random_param(&mut rng, "w2", vec![3, 2, 3])),
            ];
            let report = grad_check(&mut ps, op_loss(kind, &x, &ids), &GradCheckConfig::default()).unwrap();
            assert!(report.passed, "seed {seed} op {kind}: {report:?}");
            assert!(report.max_rel_err < 1e-4);
        }
    }
}

#[test]
fn linear_layer_grad_check_is_tight() {
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, [3, 4, 1]);
        let target: Vec<f64> = (0..3 * 6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut ps = ParamStore::new();
        let w = ps.add(random_param(&mut rng, "w", vec![6, 4, 1]));
        let b = ps.add(random_param(&mut rng, "b", vec![6]));
        let report = grad_check(
            &mut ps,
            |ps: &ParamStore, tape: &mut Tape| {
                let xi = tape.input(x.clone());
                let y = tape.conv1d(ps, xi, w, Some(b), ConvSpec::valid(1))?;
                tape.mse_loss(y, &target, 2)
            },
            &GradCheckConfig { tolerance: 1e-7, ..Default::default() },
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-7, "{report:?}");
    }
}

#[test]
fn gated_layer_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let x = random_tensor(&mut rng, [2, 3, 5]);
    let m = random_tensor(&mut rng, [2, 3, 5]);
    let target: Vec<f64> = (0..2 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut ps = ParamStore::new();
    let wf = ps.add(random_param(&mut rng, "wf", vec![3, 3, 5]));
    let wg = ps.add(random_param(&mut rng, "wg", vec![3, 3, 5]));
    let bg = ps.add(random_param(&mut rng, "bg", vec![3]));
    let report = grad_check(
        &mut ps,
        |ps: &ParamStore, tape: &mut Tape| {
            let xi = tape.input(x.clone());
            let mi = tape.input(m.clone());
            let y = tape.conv1d(ps, xi, wf, None, ConvSpec::valid(1))?;
            let y = tape.relu(y);
            let g = tape.conv1d(ps, mi, wg, Some(bg), ConvSpec::valid(1))?;
            let g = tape.sigmoid(g);
            let out = tape.hadamard(y, g)?;
            tape.mse_loss(out, &target, 1)
        },
        &GradCheckConfig { tolerance: 1e-5, ..Default::default() },
    )
    .unwrap();
    assert!(report.max_rel_err < 1e-5, "{report:?}");
}

#[test]
fn corrupted_gradient_is_reported() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random_tensor(&mut rng, [2, 3, 1]);
    let target: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut ps = ParamStore::new();
    let w = ps.add(random_param(&mut rng, "w", vec![3, 3, 1]));
    let b = ps.add(random_param(&mut rng, "b", vec![3]));
    let mut f = |ps: &ParamStore, tape: &mut Tape| {
        let xi = tape.input(x.clone());
        let y = tape.conv1d(ps, xi, w, Some(b), ConvSpec::valid(1))?;
        tape.mse_loss(y, &target, 1)
    };
    let mut analytic = analytic_gradients::<AutodiffError, _>(&mut ps, &mut f).unwrap();
    let clean = check_gradients(&mut ps, &analytic, &mut f, &GradCheckConfig::default()).unwrap();
    assert!(clean.passed);
    analytic[w.0][4] *= 1.1;
    let report = check_gradients(&mut ps, &analytic, &mut f, &GradCheckConfig::default()).unwrap();
    assert!(!report.passed);
    assert_eq!(report.offending, vec!["w".to_string()]);
}

#[test]
fn tape_is_topologically_ordered() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_tensor(&mut rng, [1, 2, 9]);
    let mut ps = ParamStore::new();
    let w = ps.add(random_param(&mut rng, "w", vec![2, 2, 3]));
    let b = ps.add(random_param(&mut rng, "b", vec![2]));
    let mut tape = Tape::new();
    op_loss(3, &x, &[w, b, w, w, w])(&ps, &mut tape).unwrap();
    for (id, inputs) in tape.edges() {
        assert!(inputs.iter().all(|i| *i < id));
    }
}
