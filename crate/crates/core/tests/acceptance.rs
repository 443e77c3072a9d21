use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use candle_core::{DType, Device, Tensor, Var};
use evrgbhand::cli_io::{make_synthetic_sequence, run_async_inference, SyntheticConfig};
use evrgbhand::degrader::{compute_descriptor, degrade_background_overflow, degrade_overexposure, sample_record, DegradationConfig};
use evrgbhand::eval_metrics::{default_thresholds, mpjpe, pa_mpjpe, pck_auc};
use evrgbhand::event_core::{
    bin_stream, latest_frame_index, simulate_events, slice_window, stack_events, Event, EventStream, Polarity, SensorSize,
    SimulatorConfig, StackedEventFrame,
};
use evrgbhand::fusion_net::{FusionNet, NetworkConfig, StepInput};
use evrgbhand::hand_model::{make_desk_model, HandMesh, HandModelData, ManoLayer};
use evrgbhand::train_engine::{
    total_loss, train, EventCount, FixedSamples, LossWeights, SampleSource, SampleSpec, SceneTag, SequenceSource,
    TrainConfig, TrainOutputs,
};
use nalgebra::{Rotation3, Unit, Vector3};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: std::result::Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn desk_model() -> HandModelData {
    make_desk_model(&mut ChaCha8Rng::seed_from_u64(0))
}

fn random_stream(rng: &mut ChaCha8Rng, sensor: SensorSize, n: usize, t_max: u64) -> EventStream {
    let mut ts: Vec<u64> = (0..n).map(|_| rng.random_range(0..=t_max)).collect();
    ts.sort();
    let events = ts
        .into_iter()
        .map(|t| {
            let p = if rng.random_bool(0.5) { Polarity::Positive } else { Polarity::Negative };
            Event::new(rng.random_range(0..sensor.width), rng.random_range(0..sensor.height), t, p)
        })
        .collect();
    EventStream::new(events, sensor).unwrap()
}

/// Latest event per pixel and polarity, found by scanning backwards.
fn naive_stack(events: &[Event], sensor: SensorSize, t: u64) -> Array3<f64> {
    let mut out = Array3::zeros((2, sensor.height as usize, sensor.width as usize));
    let t_s = events[0].t;
    if t == t_s {
        return out;
    }
    for c in 0..2 {
        for y in 0..sensor.height {
            for x in 0..sensor.width {
                let last = events.iter().rev().find(|e| e.x == x && e.y == y && e.p.channel() == c);
                if let Some(e) = last {
                    out[[c, y as usize, x as usize]] = (e.t - t_s) as f64 / (t - t_s) as f64;
                }
            }
        }
    }
    out
}

fn c1_stacking() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for trial in 0..1000 {
        let sensor = SensorSize::new(rng.random_range(1..24), rng.random_range(1..24));
        let n = rng.random_range(1..400);
        let t_max = rng.random_range(0..20_000);
        let stream = random_stream(&mut rng, sensor, n, t_max);
        let t = stream.last_time().unwrap() + if rng.random_bool(0.2) { 0 } else { rng.random_range(0..500) };
        let window = ok(slice_window(&stream, t, rng.random_range(1..=n)))?.events;
        let frame = ok(stack_events(&window, t))?;
        let oracle = naive_stack(window.events(), sensor, t);
        for (a, b) in frame.data.iter().zip(oracle.iter()) {
            ensure!((*a as f64 - b).abs() <= 1e-6, "window {trial}: {a} vs naive {b}");
            ensure!((0.0..=1.0).contains(a), "window {trial}: value {a} outside [0, 1]");
        }
    }
    Ok("1000 windows match the naive loop".into())
}

fn c2_simulator() -> Outcome {
    let cfg = SimulatorConfig::default();
    ensure!(cfg.c_pos == 0.143 && cfg.c_neg == 0.225, "default thresholds {} / {}", cfg.c_pos, cfg.c_neg);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut pixels = 0;
    for trial in 0..200 {
        let (h, w) = (rng.random_range(2..12), rng.random_range(2..12));
        let i0 = Array2::from_shape_fn((h, w), |_| rng.random_range(0.05f32..1.0));
        let i1 = i0.mapv(|v| {
            let up = rng.random_bool(0.5);
            let c = if up { cfg.c_pos } else { cfg.c_neg };
            let levels = rng.random_range(0..5) as f64 + rng.random_range(0.05..0.95);
            let delta = if up { levels * c } else { -levels * c };
            (v as f64 * delta.exp()) as f32
        });
        let stream = ok(simulate_events(&[(0, i0.clone()), (10_000, i1.clone())], &cfg))?;
        let mut counts = Array3::<u32>::zeros((2, h, w));
        for e in stream.events() {
            counts[[e.p.channel(), e.y as usize, e.x as usize]] += 1;
        }
        for ((y, x), &a) in i0.indexed_iter() {
            let b = i1[[y, x]];
            let d = (b as f64).ln() - (a as f64).ln();
            let (expected_ch, c) = if d >= 0.0 { (0, cfg.c_pos) } else { (1, cfg.c_neg) };
            let expected = (d.abs() / c).floor() as u32;
            ensure!(
                counts[[expected_ch, y, x]] == expected && counts[[1 - expected_ch, y, x]] == 0,
                "step {trial} pixel ({x},{y}): {:?} events for Δlog {d:.5}, expected {expected}",
                [counts[[0, y, x]], counts[[1, y, x]]]
            );
            pixels += 1;
        }
    }
    Ok(format!("{pixels} pixels over 200 steps"))
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((n, 3), |_| rng.random_range(-scale..scale))
}

fn c3_procrustes() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let gt = random_points(&mut rng, 21, 80.0);
        let axis = Unit::new_normalize(Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let r = Rotation3::from_axis_angle(&axis, rng.random_range(-3.1..3.1));
        let s = rng.random_range(0.3..3.0);
        let t = Vector3::new(rng.random_range(-500.0..500.0), rng.random_range(-500.0..500.0), rng.random_range(-500.0..500.0));
        let mut pred = gt.clone();
        for mut row in pred.rows_mut() {
            let p = r * Vector3::new(row[0], row[1], row[2]) * s + t;
            row.assign(&ndarray::arr1(&[p.x, p.y, p.z]));
        }
        worst = worst.max(ok(pa_mpjpe(pred.view(), gt.view()))?);
    }
    ensure!(worst < 1e-6, "PA-MPJPE {worst:e} mm on a similarity-transformed set");
    for i in 0..1000 {
        let gt = random_points(&mut rng, 21, 100.0);
        let noise = rng.random_range(0.1..50.0);
        let pred = &gt + &random_points(&mut rng, 21, noise);
        let (pa, m) = (ok(pa_mpjpe(pred.view(), gt.view()))?, ok(mpjpe(pred.view(), gt.view()))?);
        ensure!(pa <= m + 1e-9, "pair {i}: pa_mpjpe {pa} > mpjpe {m}");
    }
    Ok(format!("worst aligned error {worst:.1e} mm; pa <= mpjpe on 1000 pairs"))
}

fn rand_f64(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    (a * b).unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap()
}

/// Directional central differences of `Σ_k sum(f_k ⊙ r_k)` with respect to
/// the inputs and to `params`, compared with autodiff. Returns the two
/// relative errors.
fn fd_check(
    rng: &mut ChaCha8Rng,
    inputs: &[Tensor],
    params: &[Var],
    f: &dyn Fn(&[Tensor]) -> evrgbhand::Result<Vec<Tensor>>,
) -> (f64, f64) {
    let vars: Vec<Var> = inputs.iter().map(|x| Var::from_tensor(x).unwrap()).collect();
    let xs: Vec<Tensor> = vars.iter().map(|v| v.as_tensor().clone()).collect();
    let ys = f(&xs).unwrap();
    let rs: Vec<Tensor> = ys.iter().map(|y| rand_f64(rng, y.dims(), -1.0, 1.0)).collect();
    let objective = |ys: &[Tensor]| ys.iter().zip(&rs).map(|(y, r)| dot(y, r)).sum::<f64>();
    let mut loss = Tensor::new(0.0f64, &Device::Cpu).unwrap();
    for (y, r) in ys.iter().zip(&rs) {
        loss = (loss + (y * r).unwrap().sum_all().unwrap()).unwrap();
    }
    let grads = loss.backward().unwrap();

    // ReLU and max-pool kinks crossed by the step bias the estimate by O(h).
    let h = 1e-6;
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-8);

    let dirs: Vec<Tensor> = inputs.iter().map(|x| rand_f64(rng, x.dims(), -1.0, 1.0)).collect();
    let analytic: f64 = xs
        .iter()
        .zip(&dirs)
        .map(|(x, d)| grads.get(x).map(|g| dot(g, d)).unwrap_or(0.0))
        .sum();
    let eval = |s: f64| {
        let shifted: Vec<Tensor> = inputs.iter().zip(&dirs).map(|(x, d)| (x + (d * s).unwrap()).unwrap()).collect();
        objective(&f(&shifted).unwrap())
    };
    let input_err = rel(analytic, (eval(h) - eval(-h)) / (2.0 * h));

    let originals: Vec<Tensor> = params.iter().map(|p| p.as_tensor().copy().unwrap()).collect();
    let pdirs: Vec<Tensor> = params.iter().map(|p| rand_f64(rng, p.dims(), -1.0, 1.0)).collect();
    let analytic: f64 = params
        .iter()
        .zip(&pdirs)
        .map(|(p, d)| grads.get(p.as_tensor()).map(|g| dot(g, d)).unwrap_or(0.0))
        .sum();
    let eval = |s: f64| {
        for ((p, o), d) in params.iter().zip(&originals).zip(&pdirs) {
            p.set(&(o + (d * s).unwrap()).unwrap()).unwrap();
        }
        objective(&f(inputs).unwrap())
    };
    let numeric = (eval(h) - eval(-h)) / (2.0 * h);
    for (p, o) in params.iter().zip(&originals) {
        p.set(o).unwrap();
    }
    (input_err, rel(analytic, numeric))
}

fn c4_gradients() -> Outcome {
    let start = Instant::now();
    let model = desk_model();
    let cfg = NetworkConfig::desk();
    let owned = ok(FusionNet::new(cfg.clone(), &model.upsample_matrix, 4, DType::F64, &Device::Cpu))?;
    let net = &owned;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    // Zero-initialised tensors (offset head, lag biases, ...) would make some
    // derivatives vanish identically, so every parameter gets a random value.
    for (name, var) in net.params().iter() {
        let noise = rand_f64(&mut rng, var.dims(), -0.1, 0.1);
        ok(net.params().assign(name, &(var.as_tensor() + noise).unwrap()))?;
    }
    let block_params = |prefix: &str| -> Vec<Var> {
        net.params()
            .iter()
            .filter(|(k, _)| k.split('.').next() == Some(prefix))
            .map(|(_, v)| v.clone())
            .collect()
    };
    let (d, g, hid) = (cfg.token_dim, cfg.feature_grid(), cfg.lstm_hidden);
    let (fg, t) = (cfg.fused_grid(), cfg.num_tokens());
    let s = cfg.input_size;

    let mut checks: Vec<(String, Vec<Tensor>, Box<dyn Fn(&[Tensor]) -> evrgbhand::Result<Vec<Tensor>> + '_>)> = Vec::new();
    checks.push((
        "image_backbone".into(),
        vec![rand_f64(&mut rng, &[1, 3, s, s], 0.0, 1.0)],
        Box::new(|x| Ok(vec![net.image_backbone().forward(&x[0])?])),
    ));
    checks.push((
        "event_backbone".into(),
        vec![rand_f64(&mut rng, &[1, 2, s, s], 0.0, 1.0)],
        Box::new(|x| Ok(vec![net.event_backbone().forward(&x[0])?])),
    ));
    checks.push((
        "offsets".into(),
        (0..4).map(|i| rand_f64(&mut rng, &[1, if i < 2 { d } else { hid }, g, g], -1.0, 1.0)).collect(),
        Box::new(|x| {
            let state = evrgbhand::fusion_net::RecurrentState { hidden: x[2].clone(), cell: x[3].clone() };
            let (off, next) = net.offset_estimator().forward(&x[0], &x[1], &state)?;
            Ok(vec![off, next.hidden, next.cell])
        }),
    ));
    checks.push((
        "align".into(),
        vec![rand_f64(&mut rng, &[1, d, g, g], -1.0, 1.0), rand_f64(&mut rng, &[1, 18, g, g], -1.4, 1.4)],
        Box::new(|x| Ok(vec![net.aligner().forward(&x[0], &x[1])?])),
    ));
    checks.push((
        "fusion".into(),
        (0..2).map(|_| rand_f64(&mut rng, &[1, d, g, g], -1.0, 1.0)).collect(),
        Box::new(|x| Ok(vec![net.fusion().forward(&x[0], &x[1])?])),
    ));
    checks.push((
        "encoder".into(),
        vec![rand_f64(&mut rng, &[1, d, fg, fg], -1.0, 1.0)],
        Box::new(|x| net.encoder().forward(&x[0])),
    ));
    for l in 0..cfg.num_blocks {
        checks.push((
            format!("temporal{l}"),
            (0..=cfg.temporal_window).map(|_| rand_f64(&mut rng, &[1, t, d], -1.0, 1.0)).collect(),
            Box::new(move |x| Ok(vec![net.temporal()[l].forward(x)?])),
        ));
    }
    checks.push((
        "decoder".into(),
        (0..cfg.num_blocks).map(|_| rand_f64(&mut rng, &[1, t, d], -1.0, 1.0)).collect(),
        Box::new(|x| {
            let p = net.decoder().forward(x)?;
            Ok(vec![p.joints, p.coarse, p.fine])
        }),
    ));

    let mut worst_net: f64 = 0.0;
    let mut failures = Vec::new();
    for (name, inputs, f) in &checks {
        let params = block_params(name);
        if params.is_empty() {
            return Err(format!("no parameters under `{name}`"));
        }
        for _ in 0..2 {
            let (ei, ep) = fd_check(&mut rng, inputs, &params, f.as_ref());
            worst_net = worst_net.max(ei).max(ep);
            if ei >= 1e-3 || ep >= 1e-3 {
                failures.push(format!("{name}: input {ei:.1e}, params {ep:.1e}"));
            }
        }
    }

    let layer = ok(ManoLayer::new(&model, DType::F64, &Device::Cpu))?;
    let mut worst_mano: f64 = 0.0;
    for _ in 0..3 {
        let theta = rand_f64(&mut rng, &[48], -0.8, 0.8);
        let beta = rand_f64(&mut rng, &[10], -1.0, 1.0);
        let (e, _) = fd_check(&mut rng, &[theta, beta], &[], &|x| {
            let (v, j) = layer.forward(&x[0], &x[1])?;
            Ok(vec![v, j])
        });
        worst_mano = worst_mano.max(e);
        if e >= 1e-4 {
            failures.push(format!("mano_forward: {e:.1e}"));
        }
    }
    let elapsed = start.elapsed();
    ensure!(failures.is_empty(), "{}", failures.join("; "));
    ensure!(elapsed < Duration::from_secs(300), "took {elapsed:?}");
    Ok(format!(
        "{} blocks, worst network {worst_net:.1e}, worst hand model {worst_mano:.1e}, {:.1}s",
        checks.len(),
        elapsed.as_secs_f64()
    ))
}

fn c5_loss() -> Outcome {
    let gt = HandMesh::new(Array2::zeros((778, 3)), Array2::zeros((21, 3))).unwrap();
    let mut joints = Array2::zeros((21, 3));
    joints[[7, 1]] = 5.0;
    let pred = ok(HandMesh::new(Array2::ones((778, 3)), joints))?;
    let preds = vec![pred.clone(), pred.clone()];
    let gts = vec![gt.clone(), gt.clone()];
    let b = ok(total_loss(&pred, &preds, &gt, &gts, LossWeights::default()))?;
    let expected = 3.0 * (100.0 * 3.0 + 2000.0 * 5.0 / 21.0);
    ensure!((b.total - expected).abs() < 1e-6, "total {} vs {expected}", b.total);
    ensure!((expected - 2328.571).abs() < 1e-3, "hand value {expected}");
    let zero = ok(total_loss(&gt, &gts, &gt, &gts, LossWeights::default()))?;
    ensure!(zero.total == 0.0, "exact predictions give {}", zero.total);
    Ok(format!("total {:.6}", b.total))
}

fn max_diff(a: &Tensor, b: &Tensor) -> f32 {
    (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap()
}

fn rand_input(rng: &mut ChaCha8Rng, size: usize) -> StepInput {
    let t = |c: usize, rng: &mut ChaCha8Rng| rand_f64(rng, &[1, c, size, size], 0.0, 1.0).to_dtype(DType::F32).unwrap();
    StepInput { image: t(3, rng), events: t(2, rng) }
}

fn c6_causality() -> Outcome {
    let model = desk_model();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let nets: Vec<FusionNet> = [0, 2, 4]
        .iter()
        .map(|&s| {
            let cfg = NetworkConfig { input_size: 48, temporal_window: s, ..NetworkConfig::desk() };
            FusionNet::new(cfg, &model.upsample_matrix, s as u64, DType::F32, &Device::Cpu).unwrap()
        })
        .collect();
    let mut checked = 0;
    for k in 0..50 {
        let net = &nets[k % 3];
        let len = rng.random_range(2..7);
        let steps: Vec<StepInput> = (0..len).map(|_| rand_input(&mut rng, 48)).collect();
        let (full, _) = ok(net.forward_sequence(&steps))?;
        for t in 0..len {
            let (prefix, _) = ok(net.forward_sequence(&steps[..=t]))?;
            for (a, b) in [(&prefix[t].fine, &full[t].fine), (&prefix[t].joints, &full[t].joints)] {
                let diff = max_diff(a, b);
                ensure!(diff == 0.0, "sequence {k} (S={}): step {t} changed by {diff}", net.config().temporal_window);
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} truncation points over 50 sequences"))
}

fn c7_deformable() -> Outcome {
    let model = desk_model();
    let net = ok(FusionNet::new(NetworkConfig::desk(), &model.upsample_matrix, 7, DType::F32, &Device::Cpu))?;
    let align = net.aligner();
    let c = net.config().token_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f32 = 0.0;
    for _ in 0..100 {
        let (b, h, w) = (rng.random_range(1..3), rng.random_range(3..20), rng.random_range(3..20));
        let x = rand_f64(&mut rng, &[b, c, h, w], -1.0, 1.0).to_dtype(DType::F32).unwrap();
        let zeros = Tensor::zeros((b, 18, h, w), DType::F32, &Device::Cpu).unwrap();
        let got = ok(align.forward(&x, &zeros))?;
        let reference = x
            .conv2d(align.weight(), 1, 1, 1, 1)
            .and_then(|y| y.broadcast_add(&align.bias().reshape((1, c, 1, 1))?))
            .map_err(|e| e.to_string())?;
        worst = worst.max(max_diff(&got, &reference));
    }
    ensure!(worst <= 1e-5, "max difference {worst:e}");
    Ok(format!("max difference {worst:.1e} over 100 inputs"))
}

/// Learning rate of the overfit run. The default 1e-4 is tuned for the full
/// 2,000-iteration schedule over many sequences.
const OVERFIT_LR: f64 = 1e-3;

fn c8_overfit() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model = make_desk_model(&mut rng);
    let seq = ok(make_synthetic_sequence(&model, "overfit", SceneTag::Normal, &SyntheticConfig::default(), &mut rng))?;
    let seqs = vec![seq];
    let spec = SampleSpec { window: 2, event_step_us: 16_667, event_count: EventCount::evaluation(), degrade: None, augment: None };
    let source = SequenceSource::new(&seqs, &model, spec);
    ensure!(source.len() >= 13, "only {} anchors", source.len());
    let samples = [0, 4, 8, 12].iter().map(|&i| source.prepare(i, &mut rng)).collect::<Result<Vec<_>, _>>();
    let samples = ok(samples)?;
    let net = ok(FusionNet::new(NetworkConfig::desk(), &model.upsample_matrix, 0, DType::F32, &Device::Cpu))?;
    let cfg = TrainConfig { iterations: 500, lr: OVERFIT_LR, ..Default::default() };
    let report = ok(train(&net, &FixedSamples(samples), &cfg, None, &TrainOutputs::default()))?;
    let (first, last) = (report.history[0].loss.total, report.history.last().unwrap().loss.total);
    let elapsed = start.elapsed();
    let detail = format!("loss {first:.1} -> {last:.1} ({:.1}%), {:.0}s", 100.0 * last / first, elapsed.as_secs_f64());
    ensure!(last <= 0.1 * first, "{detail}");
    ensure!(elapsed < Duration::from_secs(600), "{detail}: over 10 min");
    Ok(detail)
}

fn c9_degrader() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let sensor = SensorSize::DAVIS346;
    let mut frame = StackedEventFrame::zeros(sensor, 1);
    frame.data.fill(0.5);
    let out = degrade_background_overflow(&frame, DegradationConfig::default().bo_pixel_p, &mut rng);
    let flipped = out.data.iter().filter(|&&v| v != 0.5).count() as f64 / out.data.len() as f64;
    ensure!((flipped - 0.2).abs() <= 0.01, "BO flip fraction {flipped}");

    let cfg = DegradationConfig::default();
    let fired = (0..10_000).filter(|_| sample_record(&cfg, &mut rng).overexposure.is_some()).count() as f64 / 1e4;
    ensure!((fired - 0.4).abs() <= 0.015, "OE fire rate {fired}");

    let events = StackedEventFrame::zeros(SensorSize::new(32, 24), 1);
    let mut pairs = 0;
    while pairs < 500 {
        let Some(factor) = sample_record(&cfg, &mut rng).overexposure else { continue };
        if factor < 1.0 {
            continue;
        }
        let image = Array3::from_shape_fn((3, 24, 32), |_| rng.random_range(0.0f32..0.95));
        let before = compute_descriptor(&image, &events).brightness;
        let after = compute_descriptor(&degrade_overexposure(&image, factor), &events).brightness;
        ensure!(after > before, "factor {factor}: brightness {before} -> {after}");
        pairs += 1;
    }
    Ok(format!("BO {flipped:.4}, OE rate {fired:.4}, 500 brighter pairs"))
}

fn c10_pairing() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let sensor = SensorSize::new(8, 8);
    let mut bins_checked = 0;
    for trial in 0..300 {
        let mut frames: Vec<u64> = (0..rng.random_range(1..30)).map(|_| rng.random_range(0..1_000_000)).collect();
        frames.sort();
        if rng.random_bool(0.3) {
            let i = rng.random_range(0..frames.len());
            frames.insert(i, frames[i]);
        }
        let n = rng.random_range(1..3000);
        let stream = random_stream(&mut rng, sensor, n, 1_000_000);
        let rate = rng.random_range(5.0..400.0);
        let binning = ok(bin_stream(&stream, rate, &frames))?;
        let mut unpaired = 0;
        let period = 1e6 / rate;
        let (first, last) = (stream.first_time().unwrap(), stream.last_time().unwrap());
        let n_bins = ((last - first + 1) as f64 / period).ceil() as usize;
        for i in 0..n_bins {
            let bin_time = first + ((i + 1) as f64 * period).round() as u64 - 1;
            let oracle = (0..frames.len())
                .filter(|&j| frames[j] <= bin_time)
                .min_by_key(|&j| (bin_time - frames[j], std::cmp::Reverse(j)));
            match oracle {
                None => unpaired += 1,
                Some(j) => {
                    let bin = binning.bins.iter().find(|b| b.bin_time == bin_time);
                    let Some(bin) = bin else { return Err(format!("trial {trial}: bin ending {bin_time} missing")) };
                    ensure!(bin.frame_index == j, "trial {trial}: bin {bin_time} paired with {} not {j}", bin.frame_index);
                    ensure!(bin_time >= frames[bin.frame_index], "trial {trial}: paired with a future frame");
                    bins_checked += 1;
                }
            }
        }
        ensure!(binning.dropped == unpaired, "trial {trial}: {} dropped vs {unpaired}", binning.dropped);
        ensure!(binning.bins.len() + unpaired == n_bins, "trial {trial}: bin count");
    }

    let model = desk_model();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let seq = ok(make_synthetic_sequence(&model, "pairing", SceneTag::Normal, &SyntheticConfig::default(), &mut rng))?;
    let frame_times = seq.frame_times();
    ensure!(frame_times.len() == 15, "{} frames in one second", frame_times.len());
    let grid: Vec<Event> = (0..60u64)
        .flat_map(|k| [Event::new(1, 1, k * 16_667, Polarity::Positive), Event::new(2, 2, k * 16_667 + 16_000, Polarity::Negative)])
        .collect();
    let seq = evrgbhand::train_engine::Sequence { events: ok(EventStream::new(grid, seq.sensor))?, ..seq };
    let net = ok(FusionNet::new(NetworkConfig::desk(), &model.upsample_matrix, 0, DType::F32, &Device::Cpu))?;
    let track = ok(run_async_inference(&net, &seq, 4.0 * 15.0, None))?;
    ensure!(track.meshes.len() == 60, "{} meshes", track.meshes.len());
    for m in &track.meshes {
        ensure!(Some(m.frame_index) == latest_frame_index(&frame_times, m.t), "mesh at {} paired badly", m.t);
    }
    Ok(format!("{bins_checked} bins over 300 grids; 60 meshes"))
}

fn c11_pck() -> Outcome {
    let grid = default_thresholds();
    ensure!(grid.len() == 101, "{} thresholds", grid.len());
    for (errors, expected) in [(vec![0.0; 42], 1.0), (vec![100.5; 42], 0.0), (vec![50.0; 42], 0.505)] {
        let (_, auc) = ok(pck_auc(&errors, &grid))?;
        ensure!((auc - expected).abs() <= 1e-9, "errors {} give AUC {auc}, expected {expected}", errors[0]);
    }
    Ok("1.0 / 0.0 / 0.505".into())
}

fn cli(out: &Path, config: &Path, args: &[&str]) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_evrgbhand"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(args)
        .status()
        .map_err(|e| e.to_string())?;
    ensure!(status.success(), "`{}` exited with {status}", args[0]);
    Ok(())
}

fn json(path: &Path) -> Result<serde_json::Value, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn c12_smoke() -> Outcome {
    let start = Instant::now();
    let dir = ok(tempfile::tempdir())?;
    let root = dir.path();
    let config = root.join("config.toml");
    ok(std::fs::write(&config, "[synthetic]\nduration_s = 0.5\n\n[train]\niterations = 3\nbatch_size = 2\ncheckpoint_every = 2\n"))?;
    let (data, trained, eval, infer, plot) =
        (root.join("data"), root.join("train"), root.join("eval"), root.join("infer"), root.join("plot"));
    let s = |p: &Path| p.to_str().unwrap().to_owned();

    cli(&data, &config, &["simulate", "--train-sequences", "2", "--eval-sequences", "1"])?;
    let splits = json(&data.join("splits.json"))?;
    let eval_id = splits["eval"][0].as_str().ok_or("splits.json lacks an eval sequence")?.to_owned();

    cli(&trained, &config, &["train", "--data", &s(&data)])?;
    let history = ok(std::fs::read_to_string(trained.join("loss_history.csv")))?;
    let mut lines = history.lines();
    ensure!(lines.next().is_some_and(|h| h.starts_with("iteration,lr,total")), "loss history header");
    ensure!(lines.count() == 3, "loss history rows");
    let checkpoint = trained.join("checkpoint.safetensors");
    ensure!(checkpoint.exists() && trained.join("checkpoint_000002.safetensors").exists(), "checkpoints missing");

    cli(&eval, &config, &["eval", "--data", &s(&data), "--checkpoint", &s(&checkpoint)])?;
    let metrics = json(&eval.join("metrics.json"))?;
    for key in ["samples", "mpjpe", "mpvpe", "pa_mpjpe", "auc", "pck_curve", "per_scene"] {
        ensure!(metrics.get(key).is_some(), "metrics.json lacks `{key}`");
    }
    ensure!(metrics["mpjpe"].as_f64().is_some_and(f64::is_finite), "mpjpe not finite");
    ensure!(metrics["pck_curve"].as_array().is_some_and(|c| c.len() == 101), "pck curve length");

    cli(&infer, &config, &["infer", "--data", &s(&data), "--checkpoint", &s(&checkpoint), "--sequence", &eval_id])?;
    let track = json(&infer.join("track.json"))?;
    ensure!(track["sequence_id"] == eval_id.as_str(), "track sequence id");
    let meshes = track["meshes"].as_array().ok_or("track.json lacks meshes")?;
    ensure!(!meshes.is_empty(), "no meshes");
    ensure!(meshes.iter().all(|m| m["joints"].as_array().is_some_and(|j| j.len() == 21)), "mesh joints");
    ensure!(meshes.iter().all(|m| m["vertices"].as_array().is_some_and(|v| v.len() == 778)), "mesh vertices");

    cli(&plot, &config, &["plot-pck", "--metrics", &s(&eval.join("metrics.json"))])?;
    let csv = ok(std::fs::read_to_string(plot.join("pck_overall.csv")))?;
    ensure!(csv.lines().count() == 102, "pck csv has {} lines", csv.lines().count());
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(1200), "took {elapsed:?}");
    Ok(format!("{} meshes, {:.0}s", meshes.len(), elapsed.as_secs_f64()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("event stacking oracle", c1_stacking),
        ("simulator analytic count", c2_simulator),
        ("procrustes exactness", c3_procrustes),
        ("gradient suite", c4_gradients),
        ("loss arithmetic", c5_loss),
        ("causality", c6_causality),
        ("deformable reduction", c7_deformable),
        ("overfit sanity", c8_overfit),
        ("degrader statistics", c9_degrader),
        ("async pairing", c10_pairing),
        ("pck/auc", c11_pck),
        ("end-to-end smoke", c12_smoke),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if only.as_ref().is_some_and(|o| !o.contains(&(i + 1))) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:2} {name}: PASS ({detail}) [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:2} {name}: FAIL ({detail}) [{secs:.1}s]", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
