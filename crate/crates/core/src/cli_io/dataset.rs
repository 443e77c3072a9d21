use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_core::{read_evb, write_evb, SensorSize};
use crate::imaging::{Image, Intrinsics};
use crate::train_engine::{AnnotationRecord, SceneTag, Sequence};

pub const SCHEMA_VERSION: u32 = 1;
pub const EVENTS_FILE: &str = "events.evb";
pub const FRAMES_DIR: &str = "rgb";
pub const ANNOTATIONS_FILE: &str = "annotations.json";
pub const CALIB_FILE: &str = "calib.json";
pub const SPLITS_FILE: &str = "splits.json";
/// Optional hand-model archive at the dataset root.
pub const HAND_MODEL_FILE: &str = "hand_model.safetensors";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationFile {
    pub schema_version: u32,
    pub sequence_id: String,
    pub scene_tag: SceneTag,
    pub records: Vec<AnnotationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraCalib {
    pub camera_id: String,
    pub intrinsics: Intrinsics,
    pub width: u16,
    pub height: u16,
    /// Row-major 4×4 camera-from-world transform; stored, not used.
    pub extrinsics: [[f64; 4]; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibFile {
    pub schema_version: u32,
    pub cameras: Vec<CameraCalib>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitsFile {
    pub schema_version: u32,
    pub train: Vec<String>,
    pub eval: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceEntry {
    pub id: String,
    pub scene: SceneTag,
    pub split: Split,
    pub events_path: PathBuf,
    pub frames_dir: PathBuf,
    pub annotations_path: PathBuf,
    pub calib_path: PathBuf,
}

/// Validated dataset: every entry's files have been parsed into `sequences`.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub entries: Vec<SequenceEntry>,
    pub sequences: Vec<Sequence>,
}

impl DatasetIndex {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn split(&self, split: Split) -> Vec<Sequence> {
        self.entries
            .iter()
            .zip(&self.sequences)
            .filter(|(e, _)| e.split == split)
            .map(|(_, s)| s.clone())
            .collect()
    }

    pub fn sequence(&self, id: &str) -> Option<&Sequence> {
        self.sequences.iter().find(|s| s.id == id)
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn check_version(path: &Path, v: u32) -> Result<()> {
    if v != SCHEMA_VERSION {
        return Err(Error::data(format!("{}: schema_version {v}, expected {SCHEMA_VERSION}", path.display())));
    }
    Ok(())
}

/// Reads an 8-bit PNG as a `[3, H, W]` image in `[0, 1]`.
pub fn read_png(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?.to_rgb8();
    let (w, h) = img.dimensions();
    Ok(Array3::from_shape_fn((3, h as usize, w as usize), |(c, y, x)| {
        img.get_pixel(x as u32, y as u32)[c] as f32 / 255.0
    }))
}

/// Writes a 1- or 3-channel image as 8-bit PNG, clamping to `[0, 1]`; a
/// 2-channel event frame is written with an empty blue channel.
pub fn write_png(path: &Path, img: &Image) -> Result<()> {
    let (c, h, w) = img.dim();
    let px = |ch: usize, y: usize, x: usize| (img[[ch, y, x]].clamp(0.0, 1.0) * 255.0).round() as u8;
    let buf = image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        match c {
            1 => image::Rgb([px(0, y, x); 3]),
            2 => image::Rgb([px(0, y, x), px(1, y, x), 0]),
            _ => image::Rgb([px(0, y, x), px(1, y, x), px(2, y, x)]),
        }
    });
    buf.save(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

/// `rgb/<t_us>.png` with the timestamp zero-padded to 12 digits.
pub fn frame_file_name(t: u64) -> String {
    format!("{t:012}.png")
}

/// Frames in a directory of `<t_us>.png` files, sorted by time.
pub fn read_frames(dir: &Path) -> Result<Vec<(u64, Image)>> {
    let mut frames = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        let t: u64 = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::data(format!("{}: frame name is not a microsecond timestamp", path.display())))?;
        frames.push((t, read_png(&path)?));
    }
    frames.sort_by_key(|f| f.0);
    if frames.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::data(format!("{}: duplicate frame timestamps", dir.display())));
    }
    Ok(frames)
}

fn load_entry(entry: &SequenceEntry) -> Result<Sequence> {
    let ann: AnnotationFile = read_json(&entry.annotations_path)?;
    check_version(&entry.annotations_path, ann.schema_version)?;
    if ann.sequence_id != entry.id {
        return Err(Error::data(format!(
            "{}: sequence_id `{}` does not match directory `{}`",
            entry.annotations_path.display(),
            ann.sequence_id,
            entry.id
        )));
    }
    let calib: CalibFile = read_json(&entry.calib_path)?;
    check_version(&entry.calib_path, calib.schema_version)?;
    let event_cam = calib
        .cameras
        .iter()
        .find(|c| c.camera_id == "event")
        .ok_or_else(|| Error::data(format!("{}: no `event` camera", entry.calib_path.display())))?;
    if let Some(rgb) = calib.cameras.iter().find(|c| c.camera_id == "rgb") {
        if rgb.intrinsics != event_cam.intrinsics || (rgb.width, rgb.height) != (event_cam.width, event_cam.height) {
            return Err(Error::data(format!(
                "{}: rgb and event cameras must share intrinsics and resolution",
                entry.calib_path.display()
            )));
        }
    }
    let sensor = SensorSize::new(event_cam.width, event_cam.height);

    let file = fs::File::open(&entry.events_path).map_err(|e| Error::io(&entry.events_path, e))?;
    let events = read_evb(std::io::BufReader::new(file))
        .map_err(|e| Error::data(format!("{}: {e}", entry.events_path.display())))?;
    if events.sensor() != sensor {
        return Err(Error::data(format!(
            "{}: sensor {}×{} differs from calibration {}×{}",
            entry.events_path.display(),
            events.sensor().width,
            events.sensor().height,
            sensor.width,
            sensor.height
        )));
    }

    let frames = read_frames(&entry.frames_dir)?;
    for (t, f) in &frames {
        if f.dim().1 != sensor.height as usize || f.dim().2 != sensor.width as usize {
            return Err(Error::data(format!("{}: frame {t} has the wrong resolution", entry.frames_dir.display())));
        }
    }
    let span = match (frames.first(), frames.last(), events.first_time(), events.last_time()) {
        (Some(a), Some(b), e0, e1) => (a.0.min(e0.unwrap_or(a.0)), b.0.max(e1.unwrap_or(b.0))),
        (None, None, Some(e0), Some(e1)) => (e0, e1),
        _ => (0, u64::MAX),
    };
    let mut prev = None;
    for r in &ann.records {
        r.validate().map_err(|e| Error::data(format!("{}: {e}", entry.annotations_path.display())))?;
        if r.timestamp < span.0 || r.timestamp > span.1 {
            return Err(Error::data(format!(
                "{}: annotation at {} lies outside the sequence span {}..={}",
                entry.annotations_path.display(),
                r.timestamp,
                span.0,
                span.1
            )));
        }
        if prev.is_some_and(|p| p >= r.timestamp) {
            return Err(Error::data(format!(
                "{}: annotation timestamps must strictly increase",
                entry.annotations_path.display()
            )));
        }
        prev = Some(r.timestamp);
    }
    Ok(Sequence {
        id: entry.id.clone(),
        scene: ann.scene_tag,
        intrinsics: event_cam.intrinsics,
        sensor,
        frames,
        events,
        annotations: ann.records,
    })
}

/// Scans `root/<sequence_id>/` directories listed in `splits.json` (or every
/// subdirectory, as training data, when there is no splits file) and parses
/// every file. Any malformed file fails the whole load.
pub fn load_dataset(root: &Path) -> Result<DatasetIndex> {
    if !root.is_dir() {
        return Err(Error::data(format!("dataset root {} is not a directory", root.display())));
    }
    let splits_path = root.join(SPLITS_FILE);
    let listed: Vec<(String, Split)> = if splits_path.exists() {
        let s: SplitsFile = read_json(&splits_path)?;
        check_version(&splits_path, s.schema_version)?;
        s.train
            .into_iter()
            .map(|id| (id, Split::Train))
            .chain(s.eval.into_iter().map(|id| (id, Split::Eval)))
            .collect()
    } else {
        let mut ids = Vec::new();
        for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
            let entry = entry.map_err(|e| Error::io(root, e))?;
            if entry.path().is_dir() {
                ids.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        ids.sort();
        ids.into_iter().map(|id| (id, Split::Train)).collect()
    };
    let mut entries = Vec::new();
    let mut sequences = Vec::new();
    for (id, split) in listed {
        if entries.iter().any(|e: &SequenceEntry| e.id == id) {
            return Err(Error::data(format!("{}: sequence `{id}` listed twice", splits_path.display())));
        }
        let dir = root.join(&id);
        let mut entry = SequenceEntry {
            id: id.clone(),
            scene: SceneTag::Normal,
            split,
            events_path: dir.join(EVENTS_FILE),
            frames_dir: dir.join(FRAMES_DIR),
            annotations_path: dir.join(ANNOTATIONS_FILE),
            calib_path: dir.join(CALIB_FILE),
        };
        for p in [&entry.events_path, &entry.annotations_path, &entry.calib_path, &entry.frames_dir] {
            if !p.exists() {
                return Err(Error::data(format!("sequence `{id}`: missing {}", p.display())));
            }
        }
        let seq = load_entry(&entry)?;
        entry.scene = seq.scene;
        entries.push(entry);
        sequences.push(seq);
    }
    if entries.is_empty() {
        log::warn!("dataset root {} contains no sequences", root.display());
    }
    Ok(DatasetIndex {
        root: root.to_path_buf(),
        entries,
        sequences,
    })
}

/// Writes one sequence in the dataset layout under `root/<id>/`.
pub fn save_sequence(seq: &Sequence, root: &Path) -> Result<PathBuf> {
    let dir = root.join(&seq.id);
    let frames_dir = dir.join(FRAMES_DIR);
    fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
    let events_path = dir.join(EVENTS_FILE);
    let file = fs::File::create(&events_path).map_err(|e| Error::io(&events_path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_evb(&seq.events, &mut w)?;
    std::io::Write::flush(&mut w).map_err(|e| Error::io(&events_path, e))?;
    for (t, img) in &seq.frames {
        write_png(&frames_dir.join(frame_file_name(*t)), img)?;
    }
    write_json(
        &dir.join(ANNOTATIONS_FILE),
        &AnnotationFile {
            schema_version: SCHEMA_VERSION,
            sequence_id: seq.id.clone(),
            scene_tag: seq.scene,
            records: seq.annotations.clone(),
        },
    )?;
    let identity = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];
    let camera = |id: &str| CameraCalib {
        camera_id: id.into(),
        intrinsics: seq.intrinsics,
        width: seq.sensor.width,
        height: seq.sensor.height,
        extrinsics: identity,
    };
    write_json(
        &dir.join(CALIB_FILE),
        &CalibFile {
            schema_version: SCHEMA_VERSION,
            cameras: vec![camera("rgb"), camera("event")],
        },
    )?;
    Ok(dir)
}

pub fn save_splits(root: &Path, train: &[String], eval: &[String]) -> Result<()> {
    write_json(
        &root.join(SPLITS_FILE),
        &SplitsFile {
            schema_version: SCHEMA_VERSION,
            train: train.to_vec(),
            eval: eval.to_vec(),
        },
    )
}
