//! Stochastic degradation of (image, stacked event frame) training pairs.
//!
//! Image-side degradations run in the order overexposure, motion blur;
//! event-side ones in the order background overflow, Gaussian noise.

mod blur;

pub use blur::{
    degrade_motion_blur, estimate_block_flow, warp_interpolate, BlockMatchingInterpolator, FlowField,
    FrameInterpolator, KnownFlowInterpolator,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_core::{add_temporal_noise, Polarity, StackedEventFrame};
use crate::imaging::{to_gray, Image};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradationConfig {
    pub p_oe: f64,
    pub oe_lo: f64,
    pub oe_hi: f64,
    pub p_mb: f64,
    pub mb_frames: usize,
    pub p_bo: f64,
    pub bo_pixel_p: f64,
    pub p_noise: f64,
    pub noise_lo: f64,
    pub noise_hi: f64,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        DegradationConfig {
            p_oe: 0.4,
            oe_lo: 0.8,
            oe_hi: 4.0,
            p_mb: 0.3,
            mb_frames: 17,
            p_bo: 0.5,
            bo_pixel_p: 0.2,
            p_noise: 0.8,
            noise_lo: 0.05,
            noise_hi: 0.2,
        }
    }
}

impl DegradationConfig {
    /// A configuration under which nothing ever fires.
    pub fn disabled() -> Self {
        DegradationConfig {
            p_oe: 0.0,
            p_mb: 0.0,
            p_bo: 0.0,
            p_noise: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_oe", self.p_oe),
            ("p_mb", self.p_mb),
            ("p_bo", self.p_bo),
            ("bo_pixel_p", self.bo_pixel_p),
            ("p_noise", self.p_noise),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("degrader.{name} must be in [0, 1], got {p}")));
            }
        }
        if !(self.oe_lo > 0.0 && self.oe_lo <= self.oe_hi && self.oe_hi.is_finite()) {
            return Err(Error::invalid(format!(
                "degrader.oe_lo/oe_hi must satisfy 0 < lo <= hi, got {}..{}",
                self.oe_lo, self.oe_hi
            )));
        }
        if !(self.noise_lo >= 0.0 && self.noise_lo <= self.noise_hi && self.noise_hi.is_finite()) {
            return Err(Error::invalid(format!(
                "degrader.noise_lo/noise_hi must satisfy 0 <= lo <= hi, got {}..{}",
                self.noise_lo, self.noise_hi
            )));
        }
        if self.mb_frames == 0 || self.mb_frames.is_multiple_of(2) {
            return Err(Error::invalid(format!("degrader.mb_frames must be odd, got {}", self.mb_frames)));
        }
        Ok(())
    }
}

/// Which degradations fired for one sample, with their sampled parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DegradationRecord {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overexposure: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub motion_blur: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub background_overflow: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gaussian_noise: Option<f64>,
}

impl DegradationRecord {
    pub fn is_empty(&self) -> bool {
        *self == DegradationRecord::default()
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Draws the per-sample decisions. Every trigger consumes randomness whether
/// or not it fires, so the stream stays aligned across configurations.
pub fn sample_record<R: Rng + ?Sized>(cfg: &DegradationConfig, rng: &mut R) -> DegradationRecord {
    let oe = rng.random::<f64>() < cfg.p_oe;
    let factor = uniform(rng, cfg.oe_lo, cfg.oe_hi);
    let mb = rng.random::<f64>() < cfg.p_mb;
    let bo = rng.random::<f64>() < cfg.p_bo;
    let noise = rng.random::<f64>() < cfg.p_noise;
    let sigma = uniform(rng, cfg.noise_lo, cfg.noise_hi);
    DegradationRecord {
        overexposure: oe.then_some(factor),
        motion_blur: mb.then_some(cfg.mb_frames),
        background_overflow: bo.then_some(cfg.bo_pixel_p),
        gaussian_noise: noise.then_some(sigma),
    }
}

pub fn degrade_overexposure(image: &Image, factor: f64) -> Image {
    image.mapv(|v| (factor * v as f64).clamp(0.0, 1.0) as f32)
}

/// Salt-and-pepper replacement: each element independently becomes 1 or 0
/// (equally likely) with probability `pixel_p`.
pub fn degrade_background_overflow<R: Rng + ?Sized>(
    frame: &StackedEventFrame,
    pixel_p: f64,
    rng: &mut R,
) -> StackedEventFrame {
    let mut out = frame.clone();
    if pixel_p <= 0.0 {
        return out;
    }
    for v in out.data.iter_mut() {
        if rng.random::<f64>() < pixel_p {
            *v = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
        }
    }
    out
}

/// The inputs of one training sample. `neighbours` holds the frames before
/// and after `image` and is needed only for motion blur.
#[derive(Debug, Clone, Copy)]
pub struct DegradeInput<'a> {
    pub image: &'a Image,
    pub neighbours: Option<[&'a Image; 2]>,
    pub events: &'a [StackedEventFrame],
}

/// Applies a previously sampled record. All event frames of the sample share
/// the same decisions; the per-element salt/pepper and noise draws differ.
pub fn apply_record<R: Rng + ?Sized>(
    input: &DegradeInput<'_>,
    record: &DegradationRecord,
    interp: &dyn FrameInterpolator,
    rng: &mut R,
) -> Result<(Image, Vec<StackedEventFrame>, DegradationRecord)> {
    let mut applied = record.clone();
    let mut image = input.image.clone();
    let mut neighbours = input.neighbours.map(|[a, b]| [a.clone(), b.clone()]);
    if let Some(factor) = record.overexposure {
        image = degrade_overexposure(&image, factor);
        if let Some([a, b]) = neighbours.as_mut() {
            *a = degrade_overexposure(a, factor);
            *b = degrade_overexposure(b, factor);
        }
    }
    if let Some(frames) = record.motion_blur {
        match &neighbours {
            Some([prev, next]) => image = degrade_motion_blur([prev, &image, next], frames, interp)?,
            None => applied.motion_blur = None,
        }
    }
    let mut events = Vec::with_capacity(input.events.len());
    for frame in input.events {
        let mut f = frame.clone();
        if let Some(p) = record.background_overflow {
            f = degrade_background_overflow(&f, p, rng);
        }
        if let Some(sigma) = record.gaussian_noise {
            f = add_temporal_noise(&f, sigma, rng)?;
        }
        events.push(f);
    }
    Ok((image, events, applied))
}

/// Samples and applies the degradations for one sample.
///
/// Motion blur can only fire when neighbouring frames are supplied; the
/// returned record lists what was actually applied.
pub fn apply_degrader<R: Rng + ?Sized>(
    input: &DegradeInput<'_>,
    cfg: &DegradationConfig,
    interp: &dyn FrameInterpolator,
    rng: &mut R,
) -> Result<(Image, Vec<StackedEventFrame>, DegradationRecord)> {
    cfg.validate()?;
    let record = sample_record(cfg, rng);
    apply_record(input, &record, interp, rng)
}

/// Four-number summary of an (image, event frame) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairDescriptor {
    pub sharpness: f64,
    pub brightness: f64,
    pub mean_pos: f64,
    pub mean_neg: f64,
}

impl PairDescriptor {
    pub fn to_array(&self) -> [f64; 4] {
        [self.sharpness, self.brightness, self.mean_pos, self.mean_neg]
    }
}

/// Sharpness is the variance of the 4-neighbour Laplacian over interior
/// pixels of the luma image; brightness is the mean over all channels.
pub fn compute_descriptor(image: &Image, events: &StackedEventFrame) -> PairDescriptor {
    let brightness = image.iter().map(|&v| v as f64).sum::<f64>() / image.len().max(1) as f64;
    let g = to_gray(image);
    let (h, w) = g.dim();
    let mut responses = Vec::with_capacity(h.saturating_sub(2) * w.saturating_sub(2));
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let lap = g[[y - 1, x]] as f64 + g[[y + 1, x]] as f64 + g[[y, x - 1]] as f64 + g[[y, x + 1]] as f64
                - 4.0 * g[[y, x]] as f64;
            responses.push(lap);
        }
    }
    let sharpness = if responses.is_empty() {
        0.0
    } else {
        let n = responses.len() as f64;
        let mean = responses.iter().sum::<f64>() / n;
        responses.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n
    };
    PairDescriptor {
        sharpness,
        brightness,
        mean_pos: events.channel_mean(Polarity::Positive),
        mean_neg: events.channel_mean(Polarity::Negative),
    }
}
