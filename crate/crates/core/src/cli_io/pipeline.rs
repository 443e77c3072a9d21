use candle_core::Tensor;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval_metrics::EvalSample;
use crate::event_core::{bin_stream, slice_window, stack_events, StackedEventFrame};
use crate::fusion_net::{FusionNet, MeshPrediction, StepInput, StreamState};
use crate::hand_model::HandModelData;
use crate::imaging::{warp_affine, Affine2, Image};
use crate::train_engine::{
    batch_tensors, crop_hand, crop_transform, EventCount, SampleSource, SampleSpec, Sequence, SequenceSource, CROP_SIZE,
    EVAL_EVENT_COUNT,
};

/// One `[1, C, H, W]` tensor in the network's dtype.
pub fn image_tensor(img: &Image, net: &FusionNet) -> Result<Tensor> {
    let (c, h, w) = img.dim();
    let data: Vec<f32> = img.iter().copied().collect();
    Ok(Tensor::from_vec(data, (1, c, h, w), net.device())?.to_dtype(net.dtype())?)
}

fn points(t: &Tensor, b: usize) -> Result<Array2<f64>> {
    let rows: Vec<Vec<f64>> = t.get(b)?.to_dtype(candle_core::DType::F64)?.to_vec2()?;
    Ok(Array2::from_shape_fn((rows.len(), 3), |(i, c)| rows[i][c]))
}

/// Joints and fine vertices of batch element `b`.
pub fn prediction_arrays(pred: &MeshPrediction, b: usize) -> Result<(Array2<f64>, Array2<f64>)> {
    Ok((points(&pred.joints, b)?, points(&pred.fine, b)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedMesh {
    /// Bin end, microseconds.
    pub t: u64,
    pub frame_index: usize,
    pub frame_time: u64,
    pub joints: Vec<[f64; 3]>,
    pub vertices: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsyncTrack {
    pub sequence_id: String,
    pub bin_rate: f64,
    pub meshes: Vec<TimedMesh>,
    /// Bins that ended before the first frame.
    pub skipped: usize,
}

fn rows(a: &Array2<f64>) -> Vec<[f64; 3]> {
    a.rows().into_iter().map(|r| [r[0], r[1], r[2]]).collect()
}

fn crop_at(seq: &Sequence, t: u64) -> Result<Affine2> {
    let sensor = seq.sensor;
    match seq.annotation_span() {
        Some((a, b)) => {
            let joints = seq.joints_at(t.clamp(a, b))?;
            let probe = Image::zeros((1, sensor.height as usize, sensor.width as usize));
            Ok(crop_hand(&probe, joints.view(), &seq.intrinsics)?.transform)
        }
        None => {
            let (w, h) = (sensor.width as f64, sensor.height as f64);
            Ok(crop_transform([(w - 1.0) / 2.0, (h - 1.0) / 2.0], w.min(h), CROP_SIZE))
        }
    }
}

/// Streams a sequence through the network at `bin_rate` Hz. Each bin is
/// paired with the latest frame not after its end; its stacked frame holds
/// the last `event_count` events up to the bin end. Crops follow the hand
/// annotations when present, otherwise the frame centre.
pub fn run_async_inference(net: &FusionNet, seq: &Sequence, bin_rate: f64, event_count: Option<usize>) -> Result<AsyncTrack> {
    let frame_times = seq.frame_times();
    if frame_times.len() >= 2 {
        let span = (frame_times[frame_times.len() - 1] - frame_times[0]) as f64 * 1e-6;
        let fps = (frame_times.len() - 1) as f64 / span;
        if bin_rate < fps * (1.0 - 1e-3) {
            return Err(Error::invalid(format!("bin rate {bin_rate} Hz is below the frame rate {fps:.3} Hz")));
        }
    }
    let n = event_count.unwrap_or(EVAL_EVENT_COUNT);
    let binning = bin_stream(&seq.events, bin_rate, &frame_times)?;
    let mut state = StreamState::new();
    let mut cached: Option<(usize, Tensor)> = None;
    let mut meshes = Vec::with_capacity(binning.bins.len());
    for bin in &binning.bins {
        let fi = bin.frame_index;
        let image = match &cached {
            Some((i, t)) if *i == fi => t.clone(),
            _ => {
                let (ft, frame) = &seq.frames[fi];
                let a = crop_at(seq, *ft)?;
                let t = image_tensor(&warp_affine(frame, &a, CROP_SIZE, CROP_SIZE), net)?;
                cached = Some((fi, t.clone()));
                t
            }
        };
        let window = slice_window(&seq.events, bin.bin_time, n)?;
        let stacked = if window.events.is_empty() {
            StackedEventFrame::zeros(seq.sensor, bin.bin_time)
        } else {
            stack_events(&window.events, bin.bin_time)?
        };
        let a = crop_at(seq, bin.bin_time)?;
        let events = image_tensor(&warp_affine(&stacked.data, &a, CROP_SIZE, CROP_SIZE), net)?;
        let pred = net.step(&StepInput { image, events }, &mut state)?;
        let (joints, vertices) = prediction_arrays(&pred, 0)?;
        meshes.push(TimedMesh {
            t: bin.bin_time,
            frame_index: fi,
            frame_time: frame_times[fi],
            joints: rows(&joints),
            vertices: rows(&vertices),
        });
    }
    Ok(AsyncTrack {
        sequence_id: seq.id.clone(),
        bin_rate,
        meshes,
        skipped: binning.dropped,
    })
}

/// Evaluation samples cut from `sequences` with `window` event steps and the
/// fixed evaluation event count, no degradation or augmentation.
pub fn eval_spec(window: usize, event_step_us: u64, event_count: usize) -> SampleSpec {
    SampleSpec {
        window,
        event_step_us,
        event_count: EventCount::Fixed(event_count),
        degrade: None,
        augment: None,
    }
}

/// Per-step predictions versus ground truth over every evaluation sample.
/// Without a network the ground truth itself is scored.
pub fn collect_eval_samples(
    net: Option<&FusionNet>,
    sequences: &[Sequence],
    model: &HandModelData,
    spec: SampleSpec,
) -> Result<Vec<EvalSample>> {
    let source = SequenceSource::new(sequences, model, spec);
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let mut out = Vec::new();
    for i in 0..source.len() {
        let sample = source.prepare(i, &mut rng)?;
        let preds: Vec<(Array2<f64>, Array2<f64>)> = match net {
            Some(net) => {
                let (inputs, _) = batch_tensors(std::slice::from_ref(&sample), net, None)?;
                let (preds, _) = net.forward_sequence(&inputs)?;
                preds.iter().map(|p| prediction_arrays(p, 0)).collect::<Result<_>>()?
            }
            None => sample.targets.iter().map(|m| (m.joints.clone(), m.vertices.clone())).collect(),
        };
        for ((pj, pv), gt) in preds.into_iter().zip(&sample.targets) {
            out.push(EvalSample {
                scene: sample.scene.as_str().to_string(),
                pred_joints: pj,
                gt_joints: gt.joints.clone(),
                pred_vertices: pv,
                gt_vertices: gt.vertices.clone(),
            });
        }
    }
    Ok(out)
}
