use crowding_core::imaging::{Canvas, ImageBuffer, N_CLASSES};
use crowding_core::nn::*;
use crowding_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).unwrap()
}

/// Direct six-loop convolution over (out channel, out row, out col, in
/// channel, kernel row, kernel col).
fn conv_oracle(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Vec<f64> {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, k) = (w.shape()[0], w.shape()[2]);
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = Vec::new();
    for img in 0..n {
        for oc in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = b.data()[oc] as f64;
                    for ic in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let y = (oy * stride + ky) as isize - pad as isize;
                                let xx = (ox * stride + kx) as isize - pad as isize;
                                if y < 0 || xx < 0 || y >= h as isize || xx >= wd as isize {
                                    continue;
                                }
                                let xi = ((img * c + ic) * h + y as usize) * wd + xx as usize;
                                let wi = ((oc * c + ic) * k + ky) * k + kx;
                                s += x.data()[xi] as f64 * w.data()[wi] as f64;
                            }
                        }
                    }
                    out.push(s);
                }
            }
        }
    }
    out
}

#[test]
fn convolution_matches_six_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (stride, pad, out_c) in [(1, 0, 4), (1, 1, 5), (2, 1, 3), (2, 0, 2)] {
        let x = random_tensor(&[1, 3, 8, 8], &mut rng);
        let w = random_tensor(&[out_c, 3, 3, 3], &mut rng);
        let b = random_tensor(&[out_c], &mut rng);
        let got = conv2d_forward(&x, &w, &b, stride, pad).unwrap();
        let want = conv_oracle(&x, &w, &b, stride, pad);
        assert_eq!(got.len(), want.len());
        let max = got.data().iter().zip(&want).map(|(&g, &w)| (g as f64 - w).abs()).fold(0.0, f64::max);
        assert!(max < 1e-5, "stride {stride} pad {pad}: {max}");
    }
}

/// Parameter count of the reference plan, from layer shapes alone.
fn shape_arithmetic(side: usize, plan: &SimpleNetPlan) -> usize {
    let (mut c, mut s, mut total) = (3, side, 0);
    for (i, &o) in plan.conv_channels.iter().enumerate() {
        total += c * o * plan.kernel * plan.kernel + o;
        c = o;
        if plan.pool_after.contains(&i) {
            s /= 2;
        }
    }
    let mut f = c * s * s;
    for &u in plan.dense_units.iter().chain(&[N_CLASSES]) {
        total += f * u + u;
        f = u;
    }
    total
}

#[test]
fn reference_parameter_counts() {
    let plan = SimpleNetPlan::default();
    for (side, pinned) in [(224usize, 26_037_706usize), (64, 2_444_746)] {
        assert_eq!(shape_arithmetic(side, &plan), pinned);
        let net = build_simplenet(Canvas::square(side as u32), &plan, N_CLASSES, 0).unwrap();
        assert_eq!(net.param_count(), pinned, "side {side}");
    }
    assert_eq!(
        layer_names(&simplenet_specs(Canvas::square(64), &plan, N_CLASSES).unwrap()).iter().filter(|n| n.starts_with("fc")).count(),
        3
    );
}

fn small_specs(classes: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::Conv2d { in_channels: 3, out_channels: 4, kernel: 3, stride: 1, padding: 1 },
        LayerSpec::LeakyRelu { negative_slope: 0.01 },
        LayerSpec::MaxPool2d { size: 2, stride: 2 },
        LayerSpec::Flatten,
        LayerSpec::Dense { inputs: 4 * 4 * 4, outputs: 16 },
        LayerSpec::LeakyRelu { negative_slope: 0.01 },
        LayerSpec::Dense { inputs: 16, outputs: classes },
        LayerSpec::Softmax,
    ]
}

fn small_net(seed: u64, classes: usize) -> Network {
    Network::new([3, 8, 8], &small_specs(classes), seed).unwrap()
}

#[test]
fn zero_image_propagates_biases() {
    let mut net = small_net(3, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for layer in net.layers_mut() {
        if let Some(p) = layer.params.as_mut() {
            for v in p.bias.data_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
    }
    let leaky = |v: f64| if v > 0.0 { v } else { 0.01 * v };
    let layers = net.layers();
    let conv_b = layers[0].params.as_ref().unwrap().bias.data();
    // With a zero image every conv output equals its channel bias, and
    // pooling a constant map returns the constant.
    let pooled: Vec<f64> = (0..4).flat_map(|c| std::iter::repeat(leaky(conv_b[c] as f64)).take(16)).collect();
    let dense = |p: &Params, x: &[f64]| -> Vec<f64> {
        let (o, i) = (p.weight.shape()[0], p.weight.shape()[1]);
        (0..o)
            .map(|r| p.bias.data()[r] as f64 + (0..i).map(|c| p.weight.data()[r * i + c] as f64 * x[c]).sum::<f64>())
            .collect()
    };
    let h: Vec<f64> = dense(layers[4].params.as_ref().unwrap(), &pooled).into_iter().map(leaky).collect();
    let want = dense(layers[6].params.as_ref().unwrap(), &h);
    let got = net.logits(&Tensor::zeros(&[1, 3, 8, 8])).unwrap();
    for (g, w) in got.data().iter().zip(&want) {
        assert!((*g as f64 - w).abs() < 1e-5, "{g} vs {w}");
    }
    let probs = net.forward(&Tensor::zeros(&[1, 3, 8, 8])).unwrap();
    assert!((probs.data().iter().map(|&p| p as f64).sum::<f64>() - 1.0).abs() < 1e-5);
}

#[test]
fn untrained_net_spreads_its_probability() {
    let plan = SimpleNetPlan::default();
    let net = build_simplenet(Canvas::square(32), &plan, N_CLASSES, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mass = [0f64; N_CLASSES];
    let mut picks = [0usize; N_CLASSES];
    let n = 1000;
    for _ in 0..n / 50 {
        let probs = net.forward(&random_tensor(&[50, 3, 32, 32], &mut rng)).unwrap();
        for row in probs.data().chunks(N_CLASSES) {
            picks[argmax(row)] += 1;
            for (m, &p) in mass.iter_mut().zip(row) {
                *m += p as f64 / n as f64;
            }
        }
    }
    eprintln!("mean probabilities {mass:?}, argmax counts {picks:?}");
    assert_eq!(picks.iter().sum::<usize>(), n);
    for m in mass {
        assert!((m - 0.1).abs() <= 0.03, "{mass:?}");
    }
}

fn put(body: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f32]) {
    body.extend((name.len() as u32).to_le_bytes());
    body.extend(name.as_bytes());
    body.extend((shape.len() as u32).to_le_bytes());
    for &d in shape {
        body.extend((d as u32).to_le_bytes());
    }
    for &v in data {
        body.extend(v.to_le_bytes());
    }
}

fn seal(body: &[u8], version: u32) -> Vec<u8> {
    let mut out = b"CRWD".to_vec();
    out.extend(version.to_le_bytes());
    out.extend(body);
    out.extend(crc32fast::hash(body).to_le_bytes());
    out
}

/// Hand-written image of a one-dense-layer network (2 inputs as [2,1,1]).
fn tiny_image(dense_inputs: f32) -> Vec<u8> {
    let mut body = Vec::new();
    put(&mut body, "arch.input", &[3], &[2.0, 1.0, 1.0]);
    put(
        &mut body,
        "arch.layers",
        &[3, 6],
        &[4.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0, dense_inputs, 3.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    );
    put(&mut body, "arch.trainable", &[3], &[1.0, 1.0, 1.0]);
    put(&mut body, "fc1.weight", &[3, 2], &[0.5, -1.0, 2.0, 0.25, 0.0, 1.5]);
    put(&mut body, "fc1.bias", &[3], &[0.1, 0.2, 0.3]);
    body
}

#[test]
fn checkpoint_layout_matches_hand_encoding() {
    let bytes = seal(&tiny_image(2.0), 1);
    let ckpt = decode_checkpoint(&bytes).unwrap();
    assert!(ckpt.optimizer.is_none());
    assert_eq!(ckpt.network.input_shape(), [2, 1, 1]);
    assert_eq!(encode_checkpoint(&ckpt.network, None), bytes);
    let logits = ckpt.network.logits(&Tensor::from_vec(&[1, 2, 1, 1], vec![1.0, 2.0]).unwrap()).unwrap();
    assert_eq!(logits.data(), &[0.5 - 2.0 + 0.1, 2.0 + 0.5 + 0.2, 3.0 + 0.3]);
    assert_eq!(checkpoint_id(&bytes), format!("{:08x}", crc32fast::hash(&bytes)));
}

#[test]
fn checkpoint_rejections() {
    let good = seal(&tiny_image(2.0), 1);
    let format_err = |b: &[u8]| matches!(decode_checkpoint(b), Err(Error::Format(_)));
    let mut flipped = good.clone();
    flipped[40] ^= 0x10;
    assert!(format_err(&flipped), "corrupt byte");
    assert!(format_err(&seal(&tiny_image(2.0), 2)), "version");
    assert!(format_err(&good[..good.len() - 7]), "truncated");
    assert!(format_err(&good[..6]), "short header");
    let mut magic = good.clone();
    magic[0] = b'X';
    assert!(format_err(&magic), "magic");
    assert!(format_err(&seal(&tiny_image(5.0), 1)), "graph mismatch");
    let mut extra = tiny_image(2.0);
    put(&mut extra, "stray", &[1], &[0.0]);
    assert!(format_err(&seal(&extra, 1)), "unexpected tensor");
    let mut dup = tiny_image(2.0);
    put(&mut dup, "fc1.bias", &[3], &[0.0; 3]);
    assert!(format_err(&seal(&dup, 1)), "duplicate tensor");
    let body = tiny_image(2.0);
    let cut = body.len() - (4 + 8 + 4 + 4 + 12);
    assert!(format_err(&seal(&body[..cut], 1)), "missing tensor");
}

fn dataset(n: usize, classes: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = Dataset::new([3, 8, 8]);
    for i in 0..n {
        let label = i % classes;
        let x: Vec<f32> = (0..192).map(|j| if j % classes == label { 0.8 } else { 0.0 } + rng.gen_range(-0.3f32..0.3)).collect();
        d.push(x, label).unwrap();
    }
    d
}

fn quick_config(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, batch_size: 4, seed: 7, learning_rate: 1e-2, validation_split: 0.25, ..TrainConfig::default() }
}

#[test]
fn checkpoint_round_trip_after_training() {
    let data = dataset(24, 3, 1);
    let out = train(small_net(1, 3), &data, &quick_config(3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ckpt");
    save_checkpoint(&path, &out.network, Some(&out.optimizer)).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.optimizer.as_ref(), Some(&out.optimizer));
    let probe = Tensor::from_vec(&[1, 3, 8, 8], data.input(5).to_vec()).unwrap();
    let before = out.network.forward(&probe).unwrap();
    let after = back.network.forward(&probe).unwrap();
    assert_eq!(
        before.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        after.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    assert_eq!(encode_checkpoint(&back.network, back.optimizer.as_ref()), std::fs::read(&path).unwrap());
}

#[test]
fn training_is_deterministic_and_learns() {
    let data = dataset(24, 3, 2);
    let a = train(small_net(4, 3), &data, &quick_config(6)).unwrap();
    let b = train(small_net(4, 3), &data, &quick_config(6)).unwrap();
    assert_eq!(a.log, b.log);
    assert!((a.log[0].train_loss - b.log[0].train_loss).abs() < 1e-6);
    assert_eq!(encode_checkpoint(&a.network, None), encode_checkpoint(&b.network, None));
    assert!(a.log.last().unwrap().train_loss < a.log[0].train_loss);
}

fn params_bits(net: &Network) -> Vec<Vec<u32>> {
    net.layers()
        .iter()
        .filter_map(|l| l.params.as_ref())
        .map(|p| p.weight.data().iter().chain(p.bias.data()).map(|v| v.to_bits()).collect())
        .collect()
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let data = dataset(16, 2, 3);
    let net = small_net(5, 2);
    let cfg = TrainConfig { learning_rate: 0.0, ..quick_config(2) };
    let out = train(net.clone(), &data, &cfg).unwrap();
    assert_eq!(params_bits(&out.network), params_bits(&net));
}

#[test]
fn stage_one_trains_only_the_top_layer() {
    let data = dataset(24, 3, 4);
    let net = small_net(6, 3);
    let cfg = TrainConfig { schedule: ScheduleMode::StagedUnfreeze, patience: 50, ..quick_config(3) };
    let out = train(net.clone(), &data, &cfg).unwrap();
    assert!(out.log.iter().all(|e| e.stage == 1));
    let (before, after) = (params_bits(&net), params_bits(&out.network));
    assert_eq!(before[0], after[0]);
    assert_eq!(before[1], after[1]);
    assert_ne!(before[2], after[2]);
    let params: Vec<bool> = out.network.param_layers().iter().map(|&i| out.network.trainable_mask()[i]).collect();
    assert_eq!(params, vec![false, false, true]);
}

#[test]
fn staged_run_advances_on_plateaus() {
    let data = dataset(16, 2, 5);
    let cfg = TrainConfig { schedule: ScheduleMode::StagedUnfreeze, learning_rate: 0.0, ..quick_config(8) };
    let out = train(small_net(7, 2), &data, &cfg).unwrap();
    let stages: Vec<usize> = out.log.iter().map(|e| e.stage).collect();
    assert_eq!(stages, vec![1, 1, 1, 2, 2, 3, 3, 3]);
}

#[test]
fn non_finite_input_is_divergence() {
    let mut data = dataset(8, 2, 6);
    let mut bad = data.input(0).to_vec();
    bad[3] = f32::NAN;
    data.push(bad, 0).unwrap();
    let cfg = TrainConfig { validation_split: 0.0, ..quick_config(2) };
    match train(small_net(8, 2), &data, &cfg) {
        Err(Error::Divergence { epoch: 1, .. }) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn training_rejects_missing_classes_and_shapes() {
    let data = dataset(8, 2, 7);
    assert!(matches!(train(small_net(1, 3), &data, &quick_config(1)), Err(Error::Data(_))));
    let wrong = Dataset::new([3, 4, 4]);
    assert!(train(small_net(1, 2), &wrong, &quick_config(1)).is_err());
}

#[test]
fn classifier_predicts_images() {
    let net = build_simplenet(Canvas::square(32), &SimpleNetPlan::default(), N_CLASSES, 1).unwrap();
    let probs = net.predict(&ImageBuffer::for_canvas(Canvas::square(32), 128)).unwrap();
    assert_eq!(probs.len(), N_CLASSES);
    assert!((probs.iter().sum::<f32>() - 1.0).abs() < 1e-4);
    assert!(net.predict(&ImageBuffer::for_canvas(Canvas::square(40), 128)).is_err());
}
