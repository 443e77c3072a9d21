use std::path::Path;

use candle_core::{DType, Device};
use evrgbhand::cli_io::*;
use evrgbhand::event_core::{latest_frame_index, Event, EventStream, Polarity, SensorSize, SimulatorConfig};
use evrgbhand::fusion_net::{FusionNet, NetworkConfig};
use evrgbhand::hand_model::{make_desk_model, mano_forward, HandModelData};
use evrgbhand::train_engine::{SceneTag, Sequence};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn model() -> HandModelData {
    make_desk_model(&mut ChaCha8Rng::seed_from_u64(0))
}

fn short() -> SyntheticConfig {
    SyntheticConfig { duration_s: 0.4, ..Default::default() }
}

fn sequence(scene: SceneTag, cfg: &SyntheticConfig, seed: u64) -> Sequence {
    make_synthetic_sequence(&model(), "s", scene, cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn run(args: &[&str]) -> i32 {
    let mut argv = vec!["evrgbhand"];
    argv.extend_from_slice(args);
    evrgbhand::cli_io::run(argv)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn empty_root_gives_empty_index() {
    let dir = tempfile::tempdir().unwrap();
    let index = load_dataset(dir.path()).unwrap();
    assert!(index.is_empty());
    assert!(load_dataset(&dir.path().join("missing")).is_err());
}

#[test]
fn synthetic_sequence_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let written = write_synthetic_dataset(dir.path(), &model(), &short(), 2, 1, &mut rng).unwrap();
    let index = load_dataset(dir.path()).unwrap();
    assert_eq!(index.sequences, written);
    assert_eq!(index.split(Split::Train).len(), 2);
    assert_eq!(index.split(Split::Eval).len(), 1);
    assert_eq!(HandModelData::load(&dir.path().join(HAND_MODEL_FILE)).unwrap(), model());

    // Stored parameters regenerate the stored joints up to the translation.
    let seq = &index.sequences[0];
    for r in &seq.annotations {
        let mesh = mano_forward(&r.mano, &model()).unwrap();
        let offset: Vec<f64> = (0..3).map(|c| r.joints3d[0][c] - mesh.joints[[0, c]]).collect();
        for (j, row) in r.joints3d.iter().enumerate() {
            for c in 0..3 {
                assert!((row[c] - mesh.joints[[j, c]] - offset[c]).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn generator_defaults_and_static_scene() {
    let cfg = SyntheticConfig::default();
    assert_eq!(cfg.fps, 15.0);
    assert_eq!(cfg.simulator, SimulatorConfig::default());
    assert_eq!((cfg.simulator.c_pos, cfg.simulator.c_neg), (0.143, 0.225));
    let times = cfg.frame_times();
    assert_eq!(times.len(), 15);
    assert!(times.windows(2).all(|w| (w[1] - w[0]).abs_diff(66_667) <= 1));

    let frozen = sequence(SceneTag::Normal, &SyntheticConfig { static_pose: true, ..short() }, 1);
    assert_eq!(frozen.events.len(), 0);
    let moving = sequence(SceneTag::Normal, &short(), 1);
    assert!(moving.events.len() > 1000, "{}", moving.events.len());
    assert!(moving.frames.windows(2).any(|w| w[0].1 != w[1].1));
}

#[test]
fn scene_effects_change_frames_and_events() {
    let cfg = short();
    let normal = sequence(SceneTag::Normal, &cfg, 2);
    let strong = sequence(SceneTag::StrongLight, &cfg, 2);
    let mean = |s: &Sequence| s.frames.iter().map(|f| f.1.mean().unwrap() as f64).sum::<f64>() / s.frames.len() as f64;
    assert!(mean(&strong) > 1.5 * mean(&normal));
    let frozen = SyntheticConfig { static_pose: true, duration_s: 1.0, ..cfg };
    let flash = sequence(SceneTag::Flash, &frozen, 3);
    assert!(flash.events.len() > 10_000, "{}", flash.events.len());
}

fn corrupt(dir: &Path, rel: &str, f: impl FnOnce(String) -> String) {
    let path = dir.join(rel);
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, f(text)).unwrap();
}

#[test]
fn loader_rejects_malformed_data() {
    let make = || {
        let dir = tempfile::tempdir().unwrap();
        let seq = sequence(SceneTag::Normal, &SyntheticConfig { duration_s: 0.2, ..Default::default() }, 5);
        save_sequence(&seq, dir.path()).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap().sequences, vec![seq]);
        dir
    };

    let dir = make();
    corrupt(dir.path(), "s/annotations.json", |t| t.replace("\"normal\"", "\"underwater\""));
    let err = load_dataset(dir.path()).unwrap_err().to_string();
    assert!(err.contains("annotations.json"), "{err}");

    let dir = make();
    std::fs::remove_file(dir.path().join("s/calib.json")).unwrap();
    let err = load_dataset(dir.path()).unwrap_err().to_string();
    assert!(err.contains("calib.json"), "{err}");

    let dir = make();
    std::fs::write(dir.path().join("s/events.evb"), b"not events").unwrap();
    let err = load_dataset(dir.path()).unwrap_err().to_string();
    assert!(err.contains("events.evb"), "{err}");

    let dir = make();
    corrupt(dir.path(), "s/annotations.json", |t| t.replacen("\"timestamp\": 0", "\"timestamp\": 99999999", 1));
    assert!(load_dataset(dir.path()).is_err());

    let dir = make();
    corrupt(dir.path(), "s/annotations.json", |t| t.replacen("\"schema_version\": 1", "\"schema_version\": 9", 1));
    assert!(load_dataset(dir.path()).unwrap_err().to_string().contains("schema_version"));

    let dir = make();
    save_splits(dir.path(), &["s".into()], &["nope".into()]).unwrap();
    assert!(load_dataset(dir.path()).unwrap_err().to_string().contains("nope"));
}

fn desk_net(model: &HandModelData) -> FusionNet {
    FusionNet::new(NetworkConfig::desk(), &model.upsample_matrix, 0, DType::F32, &Device::Cpu).unwrap()
}

/// Frames at 15 fps and uniform random events over one second.
fn grid_sequence(rng: &mut ChaCha8Rng) -> Sequence {
    let base = sequence(SceneTag::Normal, &SyntheticConfig { duration_s: 1.0, ..Default::default() }, 6);
    let sensor = SensorSize::DAVIS346;
    let mut ts: Vec<u64> = (0..20_000).map(|_| rng.random_range(0..1_000_000)).collect();
    ts.sort();
    let events = ts
        .into_iter()
        .map(|t| {
            let p = if rng.random_bool(0.5) { Polarity::Positive } else { Polarity::Negative };
            Event::new(rng.random_range(0..sensor.width), rng.random_range(0..sensor.height), t, p)
        })
        .collect();
    Sequence { events: EventStream::new(events, sensor).unwrap(), ..base }
}

#[test]
fn async_inference_cadence_and_pairing() {
    let model = model();
    let net = desk_net(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let seq = grid_sequence(&mut rng);
    let frame_times = seq.frame_times();

    let track = run_async_inference(&net, &seq, 60.0, None).unwrap();
    assert_eq!(track.meshes.len(), 60);
    assert_eq!(track.skipped, 0);
    assert!(track.meshes.windows(2).all(|w| w[0].t < w[1].t));
    for m in &track.meshes {
        let oracle = frame_times.iter().enumerate().filter(|(_, &f)| f <= m.t).min_by_key(|(_, &f)| m.t - f).map(|(i, _)| i);
        assert_eq!(Some(m.frame_index), oracle);
        assert!(m.t >= m.frame_time);
        assert_eq!(m.vertices.len(), 778);
        assert!(m.joints.iter().flatten().all(|v| v.is_finite()));
    }

    let track = run_async_inference(&net, &seq, 15.0, None).unwrap();
    assert_eq!(track.meshes.len(), 15);
    assert!(track.meshes.windows(2).all(|w| w[0].frame_index <= w[1].frame_index));
    assert!(track.meshes.iter().all(|m| m.t - m.frame_time < 66_667 || m.frame_index + 1 == frame_times.len()));
    for m in &track.meshes {
        assert_eq!(latest_frame_index(&frame_times, m.t), Some(m.frame_index));
    }

    assert!(run_async_inference(&net, &seq, 5.0, None).is_err());

    // Bins ending before the first frame are skipped and counted.
    let late = Sequence {
        frames: seq.frames.iter().map(|(t, f)| (t + 100_000, f.clone())).collect(),
        ..seq.clone()
    };
    let track = run_async_inference(&net, &late, 60.0, None).unwrap();
    assert!(track.skipped >= 5);
    assert_eq!(track.skipped + track.meshes.len(), 60);
}

#[test]
fn cli_usage_and_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["--help"]), EXIT_OK);
    assert_eq!(run(&["bogus"]), EXIT_USAGE);
    assert_eq!(run(&["eval", "--data", p(dir.path())]), EXIT_USAGE);
    let missing = dir.path().join("missing");
    assert_eq!(run(&["eval", "--oracle", "--data", p(&missing), "--out", p(dir.path())]), EXIT_DATA);
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\nlr = -1.0\n").unwrap();
    assert_eq!(run(&["--config", p(&cfg), "eval", "--oracle", "--data", p(dir.path())]), EXIT_USAGE);
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    assert_eq!(run(&["eval", "--oracle", "--data", p(&empty), "--out", p(dir.path())]), EXIT_DATA);
}

#[test]
fn cli_oracle_eval_is_perfect_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "[synthetic]\nduration_s = 0.5\n").unwrap();
    let data = dir.path().join("data");
    assert_eq!(run(&["--config", p(&cfg), "--seed", "7", "--out", p(&data), "simulate", "--train-sequences", "1", "--eval-sequences", "1"]), EXIT_OK);
    let mut outputs = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("eval{k}"));
        assert_eq!(run(&["--config", p(&cfg), "--seed", "7", "--out", p(&out), "eval", "--oracle", "--data", p(&data)]), EXIT_OK);
        outputs.push(std::fs::read(out.join("metrics.json")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let report: serde_json::Value = serde_json::from_slice(&outputs[0]).unwrap();
    assert_eq!(report["mpjpe"], 0.0);
    assert!(report["pa_mpjpe"].as_f64().unwrap().abs() < 1e-6);
    assert_eq!(report["auc"], 1.0);
    assert!(report["per_scene"].as_object().unwrap().len() == 1);

    let out = dir.path().join("plot");
    assert_eq!(run(&["--out", p(&out), "plot-pck", "--metrics", p(&dir.path().join("eval0/metrics.json"))]), EXIT_OK);
    let csv = std::fs::read_to_string(out.join("pck_overall.csv")).unwrap();
    assert_eq!(csv.lines().count(), 102);
    assert_eq!(run(&["--out", p(&out), "plot-pck", "--scene", "nope", "--metrics", p(&dir.path().join("eval0/metrics.json"))]), EXIT_USAGE);
}

#[test]
fn cli_degrade_and_frame_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let seq = sequence(SceneTag::Normal, &SyntheticConfig { duration_s: 0.3, ..Default::default() }, 8);
    save_sequence(&seq, dir.path()).unwrap();
    let rgb = dir.path().join("s/rgb");
    let out = dir.path().join("sim");
    assert_eq!(run(&["--out", p(&out), "simulate", "--frames", p(&rgb)]), EXIT_OK);
    assert!(out.join(EVENTS_FILE).exists());

    let frame = |i: usize| rgb.join(frame_file_name(seq.frames[i].0));
    let t = seq.frames[2].0.to_string();
    let out = dir.path().join("deg");
    let code = run(&[
        "--out", p(&out), "--seed", "3", "degrade",
        "--image", p(&frame(2)), "--prev", p(&frame(1)), "--next", p(&frame(3)),
        "--events", p(&dir.path().join("s/events.evb")), "--time", &t,
    ]);
    assert_eq!(code, EXIT_OK);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("degradation.json")).unwrap()).unwrap();
    assert!(report["before"]["sharpness"].as_f64().unwrap() > 0.0);
    assert!(report["after"]["brightness"].is_number());
    assert!(out.join("degraded.png").exists() && out.join("degraded_events.png").exists());
    assert_eq!(run(&["--out", p(&out), "degrade", "--image", p(&frame(2)), "--prev", p(&frame(1))]), EXIT_USAGE);
}
