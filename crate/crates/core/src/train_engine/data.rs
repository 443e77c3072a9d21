use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::geometry::{crop_hand, geometric_augment, interpolate_track, rotate_points_z, AugmentConfig, AugmentParams};
use super::schedule::EventCount;
use crate::degrader::{apply_degrader, BlockMatchingInterpolator, DegradationConfig, DegradationRecord, DegradeInput};
use crate::error::{Error, Result};
use crate::event_core::{slice_window, stack_events, EventStream, SensorSize, StackedEventFrame};
use crate::hand_model::{mano_forward, HandMesh, HandModelData, ManoParams, NUM_JOINTS};
use crate::imaging::{warp_affine, Image, Intrinsics};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneTag {
    Normal,
    StrongLight,
    Flash,
    FastMotion,
}

impl SceneTag {
    pub const ALL: [SceneTag; 4] = [SceneTag::Normal, SceneTag::StrongLight, SceneTag::Flash, SceneTag::FastMotion];

    pub fn as_str(&self) -> &'static str {
        match self {
            SceneTag::Normal => "normal",
            SceneTag::StrongLight => "strong_light",
            SceneTag::Flash => "flash",
            SceneTag::FastMotion => "fast_motion",
        }
    }
}

impl std::str::FromStr for SceneTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SceneTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::data(format!("unknown scene tag `{s}`")))
    }
}

/// Ground truth at one annotation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    /// Microseconds.
    pub timestamp: u64,
    pub mano: ManoParams,
    /// Camera-frame joints, millimetres.
    pub joints3d: Vec<[f64; 3]>,
    pub camera_id: String,
}

impl AnnotationRecord {
    pub fn joints(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.joints3d.len(), 3), |(i, c)| self.joints3d[i][c])
    }

    pub fn validate(&self) -> Result<()> {
        self.mano.validate()?;
        if self.joints3d.len() != NUM_JOINTS {
            return Err(Error::data(format!(
                "annotation at {} has {} joints, expected {NUM_JOINTS}",
                self.timestamp,
                self.joints3d.len()
            )));
        }
        if self.joints3d.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::data(format!("annotation at {} has non-finite joints", self.timestamp)));
        }
        Ok(())
    }
}

/// One recorded sequence held in memory; the image and event cameras share
/// intrinsics and resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub id: String,
    pub scene: SceneTag,
    pub intrinsics: Intrinsics,
    pub sensor: SensorSize,
    pub frames: Vec<(u64, Image)>,
    pub events: EventStream,
    pub annotations: Vec<AnnotationRecord>,
}

impl Sequence {
    pub fn frame_times(&self) -> Vec<u64> {
        self.frames.iter().map(|f| f.0).collect()
    }

    pub fn annotation_span(&self) -> Option<(u64, u64)> {
        Some((self.annotations.first()?.timestamp, self.annotations.last()?.timestamp))
    }

    pub fn params_at(&self, t: u64) -> Result<ManoParams> {
        let track: Vec<(u64, ManoParams)> = self.annotations.iter().map(|a| (a.timestamp, a.mano.clone())).collect();
        interpolate_track(&track, t, |a, b, alpha| a.lerp(b, alpha))
    }

    pub fn joints_at(&self, t: u64) -> Result<Array2<f64>> {
        let track: Vec<(u64, Array2<f64>)> = self.annotations.iter().map(|a| (a.timestamp, a.joints())).collect();
        super::geometry::interpolate_joints(&track, t)
    }

    /// Root-relative ground-truth mesh from interpolated hand parameters.
    pub fn mesh_at(&self, t: u64, model: &HandModelData) -> Result<HandMesh> {
        Ok(mano_forward(&self.params_at(t)?, model)?.root_relative())
    }
}

/// How training/evaluation samples are cut from sequences.
#[derive(Debug, Clone)]
pub struct SampleSpec {
    /// Event steps after the image step.
    pub window: usize,
    pub event_step_us: u64,
    pub event_count: EventCount,
    pub degrade: Option<DegradationConfig>,
    pub augment: Option<AugmentConfig>,
}

/// Network-ready crops for one sample: step 0 is the image step, steps
/// `1..=S` the event steps; targets are root-relative.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub image: Image,
    pub events: Vec<Image>,
    pub targets: Vec<HandMesh>,
    pub times: Vec<u64>,
    pub scene: SceneTag,
    pub degradation: DegradationRecord,
    pub augmentation: AugmentParams,
}

pub trait SampleSource {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn prepare(&self, index: usize, rng: &mut ChaCha8Rng) -> Result<PreparedSample>;

    /// Short human-readable identifier for diagnostics.
    fn describe(&self, index: usize) -> String {
        format!("sample {index}")
    }
}

/// Pre-built samples returned as-is.
pub struct FixedSamples(pub Vec<PreparedSample>);

impl SampleSource for FixedSamples {
    fn len(&self) -> usize {
        self.0.len()
    }

    fn prepare(&self, index: usize, _rng: &mut ChaCha8Rng) -> Result<PreparedSample> {
        self.0.get(index).cloned().ok_or_else(|| Error::invalid(format!("sample {index} out of range")))
    }
}

/// Samples anchored at every frame whose event steps stay inside the
/// annotated span.
pub struct SequenceSource<'a> {
    pub sequences: &'a [Sequence],
    pub model: &'a HandModelData,
    pub spec: SampleSpec,
    anchors: Vec<(usize, usize)>,
}

impl<'a> SequenceSource<'a> {
    pub fn new(sequences: &'a [Sequence], model: &'a HandModelData, spec: SampleSpec) -> Self {
        let mut anchors = Vec::new();
        for (si, seq) in sequences.iter().enumerate() {
            let Some((a0, a1)) = seq.annotation_span() else { continue };
            let first_event = seq.events.first_time().unwrap_or(u64::MAX);
            for (fi, (t, _)) in seq.frames.iter().enumerate() {
                let last = t + spec.window as u64 * spec.event_step_us;
                if *t >= a0 && last <= a1 && *t >= first_event {
                    anchors.push((si, fi));
                }
            }
        }
        SequenceSource { sequences, model, spec, anchors }
    }

    pub fn anchor(&self, index: usize) -> (usize, usize) {
        self.anchors[index]
    }
}

fn crop_events(frame: &StackedEventFrame, at: &crate::imaging::Affine2) -> StackedEventFrame {
    StackedEventFrame {
        data: warp_affine(&frame.data, at, super::geometry::CROP_SIZE, super::geometry::CROP_SIZE),
        target_time: frame.target_time,
        window_start: frame.window_start,
    }
}

impl SampleSource for SequenceSource<'_> {
    fn len(&self) -> usize {
        self.anchors.len()
    }

    fn describe(&self, index: usize) -> String {
        let (si, fi) = self.anchors[index];
        format!("{}@{}", self.sequences[si].id, self.sequences[si].frames[fi].0)
    }

    fn prepare(&self, index: usize, rng: &mut ChaCha8Rng) -> Result<PreparedSample> {
        let (si, fi) = *self
            .anchors
            .get(index)
            .ok_or_else(|| Error::invalid(format!("sample {index} out of range")))?;
        let seq = &self.sequences[si];
        let k = &seq.intrinsics;
        let t0 = seq.frames[fi].0;
        let times: Vec<u64> = (0..=self.spec.window as u64).map(|s| t0 + s * self.spec.event_step_us).collect();

        let crop = crop_hand(&seq.frames[fi].1, seq.joints_at(t0)?.view(), k)?;
        let neighbour = |j: Option<usize>| j.and_then(|j| seq.frames.get(j)).map(|f| warp_affine(&f.1, &crop.transform, crop.image.dim().1, crop.image.dim().2));
        let neighbours = match (neighbour(fi.checked_sub(1)), neighbour(Some(fi + 1))) {
            (Some(a), Some(b)) => Some([a, b]),
            _ => None,
        };

        let mut event_frames = Vec::with_capacity(times.len());
        let mut targets = Vec::with_capacity(times.len());
        for &t in &times {
            let n = self.spec.event_count.draw(rng);
            let window = slice_window(&seq.events, t, n)?;
            let stacked = if window.events.is_empty() {
                StackedEventFrame::zeros(seq.sensor, t)
            } else {
                stack_events(&window.events, t)?
            };
            let joints = seq.joints_at(t)?;
            let ev_crop = crop_hand(&stacked.data, joints.view(), k)?;
            event_frames.push(crop_events(&stacked, &ev_crop.transform));
            targets.push(seq.mesh_at(t, self.model)?);
        }

        let (image, event_frames, degradation) = match &self.spec.degrade {
            Some(cfg) => {
                let input = DegradeInput {
                    image: &crop.image,
                    neighbours: neighbours.as_ref().map(|[a, b]| [a, b]),
                    events: &event_frames,
                };
                apply_degrader(&input, cfg, &BlockMatchingInterpolator::default(), rng)?
            }
            None => (crop.image.clone(), event_frames, DegradationRecord::default()),
        };

        let augmentation = match &self.spec.augment {
            Some(a) => a.sample(rng),
            None => AugmentParams::identity(),
        };
        let mut views: Vec<&Image> = vec![&image];
        views.extend(event_frames.iter().map(|f| &f.data));
        let aug = geometric_augment(&views, &crop.intrinsics, augmentation);
        let mut images = aug.images.into_iter();
        let image = images.next().expect("image view");
        let events: Vec<Image> = images.collect();
        let targets = targets
            .into_iter()
            .map(|m| HandMesh::new(rotate_points_z(&m.vertices, aug.rotation), rotate_points_z(&m.joints, aug.rotation)))
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedSample {
            image,
            events,
            targets,
            times,
            scene: seq.scene,
            degradation,
            augmentation,
        })
    }
}
