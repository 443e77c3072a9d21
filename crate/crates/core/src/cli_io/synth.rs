use std::f64::consts::{PI, TAU};
use std::path::Path;

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::{save_sequence, save_splits, HAND_MODEL_FILE};
use crate::error::{Error, Result};
use crate::event_core::{simulate_events, SensorSize, SimulatorConfig};
use crate::hand_model::{mano_forward, HandMesh, HandModelData, ManoParams, NUM_BETAS, NUM_POSE_PARAMS};
use crate::imaging::{to_gray, Image, Intrinsics};
use crate::train_engine::{AnnotationRecord, SceneTag, Sequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub duration_s: f64,
    pub fps: f64,
    /// Renders per frame interval fed to the event simulator.
    pub substeps: usize,
    pub width: u16,
    pub height: u16,
    pub focal_px: f64,
    /// Wrist distance from the camera.
    pub depth_mm: f64,
    pub motion_hz: (f64, f64),
    /// Holds the first pose for the whole sequence.
    pub static_pose: bool,
    pub simulator: SimulatorConfig,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            duration_s: 1.0,
            fps: 15.0,
            substeps: 4,
            width: SensorSize::DAVIS346.width,
            height: SensorSize::DAVIS346.height,
            focal_px: 250.0,
            depth_mm: 500.0,
            motion_hz: (0.4, 0.8),
            static_pose: false,
            simulator: SimulatorConfig::default(),
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0 && self.fps > 0.0 && self.focal_px > 0.0 && self.depth_mm > 0.0) {
            return Err(Error::invalid("synthetic duration, fps, focal length and depth must be positive"));
        }
        if self.substeps == 0 || self.width == 0 || self.height == 0 {
            return Err(Error::invalid("synthetic substeps and resolution must be positive"));
        }
        if !(self.motion_hz.0 > 0.0 && self.motion_hz.0 <= self.motion_hz.1) {
            return Err(Error::invalid("synthetic motion_hz must be an increasing positive range"));
        }
        self.simulator.validate()
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics::new(
            self.focal_px,
            self.focal_px,
            (self.width as f64 - 1.0) / 2.0,
            (self.height as f64 - 1.0) / 2.0,
        )
    }

    pub fn frame_times(&self) -> Vec<u64> {
        let n = (self.duration_s * self.fps).round().max(1.0) as usize;
        (0..n).map(|f| (f as f64 * 1e6 / self.fps).round() as u64).collect()
    }
}

struct Wave {
    amp: f64,
    freq: f64,
    phase: f64,
}

impl Wave {
    fn at(&self, t: f64) -> f64 {
        self.amp * (TAU * self.freq * t + self.phase).sin()
    }
}

/// Smooth hand trajectory: pose and translation as sums of sinusoids.
struct Trajectory {
    beta: Vec<f64>,
    pose: Vec<Wave>,
    translation: [Wave; 3],
    base_translation: [f64; 3],
    frozen: bool,
}

impl Trajectory {
    fn sample<R: Rng + ?Sized>(cfg: &SyntheticConfig, speed: f64, rng: &mut R) -> Self {
        let shape = Normal::new(0.0, 0.5).expect("valid std");
        let beta = (0..NUM_BETAS).map(|_| shape.sample(rng)).collect();
        let wave = |amp: f64, rng: &mut R| Wave {
            amp,
            freq: speed * rng.random_range(cfg.motion_hz.0..=cfg.motion_hz.1),
            phase: rng.random_range(0.0..TAU),
        };
        let pose = (0..NUM_POSE_PARAMS)
            .map(|k| {
                let amp = match (k / 3, k % 3) {
                    (0, _) => 0.25,
                    (_, 0) => 0.6,
                    _ => 0.1,
                };
                wave(amp, rng)
            })
            .collect();
        let translation = [wave(30.0, rng), wave(20.0, rng), wave(40.0, rng)];
        Trajectory {
            beta,
            pose,
            translation,
            base_translation: [0.0, 90.0, cfg.depth_mm],
            frozen: cfg.static_pose,
        }
    }

    fn at(&self, t_us: u64) -> (ManoParams, [f64; 3]) {
        let t = if self.frozen { 0.0 } else { t_us as f64 * 1e-6 };
        let theta = self
            .pose
            .iter()
            .enumerate()
            .map(|(k, w)| {
                let v = w.at(t);
                match (k / 3, k % 3) {
                    // Fingers pointing up the image with the palm towards the camera.
                    (0, 0) => PI + v,
                    (0, _) => v,
                    // Flexion stays on one side.
                    (_, 0) => 0.5 * (w.amp + v),
                    _ => v,
                }
            })
            .collect();
        let mut trans = self.base_translation;
        for (c, w) in trans.iter_mut().zip(&self.translation) {
            *c += w.at(t);
        }
        (ManoParams { theta, beta: self.beta.clone() }, trans)
    }
}

fn background(y: usize, x: usize) -> [f32; 3] {
    let v = 0.25 + 0.08 * ((x as f32 / 17.0).sin() * (y as f32 / 23.0).cos());
    [v * 0.9, v, v * 1.1]
}

/// Flat-shaded vertex splats over a fixed textured background, z-buffered.
pub fn render_hand(mesh: &HandMesh, translation: [f64; 3], k: &Intrinsics, width: usize, height: usize) -> Image {
    let mut img = Array3::from_shape_fn((3, height, width), |(c, y, x)| background(y, x)[c]);
    let mut depth = Array2::from_elem((height, width), f64::INFINITY);
    let pts: Vec<[f64; 3]> = mesh
        .vertices
        .rows()
        .into_iter()
        .map(|r| [r[0] + translation[0], r[1] + translation[1], r[2] + translation[2]])
        .collect();
    let (z_min, z_max) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p[2]), b.max(p[2])));
    let z_span = (z_max - z_min).max(1e-6);
    for (i, p) in pts.iter().enumerate() {
        let Some([u, v]) = k.project(*p) else { continue };
        let r = (k.0[0][0] * 6.0 / p[2]).max(1.5);
        let albedo = 0.75 + 0.25 * ((i * 7919) % 13) as f64 / 12.0;
        let shade = (albedo * (1.0 - 0.5 * (p[2] - z_min) / z_span)) as f32;
        let (x0, x1) = ((u - r).floor().max(0.0) as usize, (u + r).ceil().min(width as f64 - 1.0));
        let (y0, y1) = ((v - r).floor().max(0.0) as usize, (v + r).ceil().min(height as f64 - 1.0));
        if x1 < 0.0 || y1 < 0.0 {
            continue;
        }
        for y in y0..=y1 as usize {
            for x in x0..=x1 as usize {
                let (dx, dy) = (x as f64 - u, y as f64 - v);
                if dx * dx + dy * dy > r * r || p[2] >= depth[[y, x]] {
                    continue;
                }
                depth[[y, x]] = p[2];
                img[[0, y, x]] = 0.9 * shade;
                img[[1, y, x]] = 0.7 * shade;
                img[[2, y, x]] = 0.55 * shade;
            }
        }
    }
    img
}

/// Global illumination gain of a scene at time `t`.
fn illumination(scene: SceneTag, t_us: u64, flash_at: u64) -> f32 {
    match scene {
        SceneTag::StrongLight => 2.5,
        SceneTag::Flash => {
            let d = (t_us as f64 - flash_at as f64) / 30_000.0;
            (1.0 + 3.0 * (-d * d).exp()) as f32
        }
        _ => 1.0,
    }
}

fn quantize(img: &Image) -> Image {
    img.mapv(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8 as f32 / 255.0)
}

/// Renders a synthetic sequence of the given scene type: RGB frames at the
/// configured rate (clipped and quantised to 8 bits), events simulated from
/// unclipped luma at `substeps` renders per frame interval, and exact
/// annotations at every frame time.
pub fn make_synthetic_sequence<R: Rng + ?Sized>(
    model: &HandModelData,
    id: &str,
    scene: SceneTag,
    cfg: &SyntheticConfig,
    rng: &mut R,
) -> Result<Sequence> {
    cfg.validate()?;
    model.validate()?;
    let speed = if scene == SceneTag::FastMotion { 3.0 } else { 1.0 };
    let traj = Trajectory::sample(cfg, speed, rng);
    let k = cfg.intrinsics();
    let (w, h) = (cfg.width as usize, cfg.height as usize);
    let frame_times = cfg.frame_times();
    let last = *frame_times.last().expect("at least one frame");
    let flash_at = rng.random_range(0..=last.max(1));
    let interval = 1e6 / cfg.fps;

    let render = |t: u64| -> Result<(Image, HandMesh, ManoParams, [f64; 3])> {
        let (params, trans) = traj.at(t);
        let mesh = mano_forward(&params, model)?;
        Ok((render_hand(&mesh, trans, &k, w, h), mesh, params, trans))
    };

    let mut frames = Vec::with_capacity(frame_times.len());
    let mut annotations = Vec::with_capacity(frame_times.len());
    for &t in &frame_times {
        let (img, mesh, params, trans) = render(t)?;
        let img = if scene == SceneTag::FastMotion {
            // Exposure covers the half interval before the frame time.
            let taps = cfg.substeps.max(2);
            let mut acc = img;
            for j in 1..taps {
                let dt = (j as f64 * 0.5 * interval / (taps - 1) as f64).round() as u64;
                acc = acc + render(t.saturating_sub(dt))?.0;
            }
            acc / taps as f32
        } else {
            img
        };
        frames.push((t, quantize(&(img * illumination(scene, t, flash_at)))));
        annotations.push(AnnotationRecord {
            timestamp: t,
            mano: params,
            joints3d: mesh.joints.rows().into_iter().map(|r| [r[0] + trans[0], r[1] + trans[1], r[2] + trans[2]]).collect(),
            camera_id: "rgb".into(),
        });
    }

    let mut luma = Vec::new();
    for f in 0..frame_times.len().saturating_sub(1) {
        let (a, b) = (frame_times[f], frame_times[f + 1]);
        for s in 0..cfg.substeps {
            let t = a + ((b - a) as f64 * s as f64 / cfg.substeps as f64).round() as u64;
            luma.push((t, to_gray(&(render(t)?.0 * illumination(scene, t, flash_at)))));
        }
    }
    luma.push((last, to_gray(&(render(last)?.0 * illumination(scene, last, flash_at)))));
    let events = simulate_events(&luma, &cfg.simulator)?;

    Ok(Sequence {
        id: id.to_string(),
        scene,
        intrinsics: k,
        sensor: SensorSize::new(cfg.width, cfg.height),
        frames,
        events,
        annotations,
    })
}

/// Writes `n_train + n_eval` synthetic sequences (scene types cycling through
/// the vocabulary), the splits file and the hand model under `root`.
pub fn write_synthetic_dataset<R: Rng + ?Sized>(
    root: &Path,
    model: &HandModelData,
    cfg: &SyntheticConfig,
    n_train: usize,
    n_eval: usize,
    rng: &mut R,
) -> Result<Vec<Sequence>> {
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    model.save(&root.join(HAND_MODEL_FILE))?;
    let mut train = Vec::new();
    let mut eval = Vec::new();
    let mut out = Vec::new();
    for i in 0..n_train + n_eval {
        let scene = SceneTag::ALL[i % SceneTag::ALL.len()];
        let id = format!("seq_{i:03}_{}", scene.as_str());
        let seq = make_synthetic_sequence(model, &id, scene, cfg, rng)?;
        save_sequence(&seq, root)?;
        if i < n_train {
            train.push(id);
        } else {
            eval.push(id);
        }
        out.push(seq);
    }
    save_splits(root, &train, &eval)?;
    Ok(out)
}
