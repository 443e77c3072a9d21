use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::stream::{Event, EventStream, Polarity, SensorSize};
use crate::error::{Error, Result};

/// Intensities are clamped to this floor before taking the logarithm.
pub const INTENSITY_FLOOR: f32 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulatorConfig {
    /// Positive log-intensity contrast threshold.
    pub c_pos: f64,
    /// Negative log-intensity contrast threshold.
    pub c_neg: f64,
    /// Sub-frames linearly interpolated per frame interval.
    pub interp_factor: u32,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        SimulatorConfig {
            c_pos: 0.143,
            c_neg: 0.225,
            interp_factor: 10,
        }
    }
}

impl SimulatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_pos > 0.0 && self.c_neg > 0.0) {
            return Err(Error::invalid("contrast thresholds must be positive"));
        }
        if self.interp_factor == 0 {
            return Err(Error::invalid("interp_factor must be at least 1"));
        }
        Ok(())
    }
}

/// Converts timestamped grayscale frames into events.
///
/// Every pixel keeps a reference log-intensity, initialised from the first
/// frame. Whenever the log-intensity rises `k` positive thresholds above the
/// reference, or falls `k` negative thresholds below it, `k` events are emitted
/// at the interpolated crossing times and the reference moves by `k`
/// thresholds.
pub fn simulate_events(frames: &[(u64, Array2<f32>)], cfg: &SimulatorConfig) -> Result<EventStream> {
    cfg.validate()?;
    if frames.len() < 2 {
        return Err(Error::invalid("simulation needs at least two frames"));
    }
    let (h, w) = frames[0].1.dim();
    if h > u16::MAX as usize || w > u16::MAX as usize {
        return Err(Error::invalid("frame too large for 16-bit event coordinates"));
    }
    for pair in frames.windows(2) {
        if pair[1].0 <= pair[0].0 {
            return Err(Error::invalid(format!(
                "frame timestamps must increase strictly ({} then {})",
                pair[0].0, pair[1].0
            )));
        }
    }
    if let Some((t, f)) = frames.iter().find(|(_, f)| f.dim() != (h, w)) {
        return Err(Error::shape(format!(
            "frame at t={t} is {:?}, expected {:?}",
            f.dim(),
            (h, w)
        )));
    }
    let sensor = SensorSize::new(w as u16, h as u16);
    let log = |v: f32| (v.max(INTENSITY_FLOOR) as f64).ln();

    let mut reference: Vec<f64> = frames[0].1.iter().map(|&v| log(v)).collect();
    let mut events = Vec::new();
    let m = cfg.interp_factor as usize;

    for pair in frames.windows(2) {
        let (t0, ref a) = pair[0];
        let (t1, ref b) = pair[1];
        let dt = (t1 - t0) as f64;
        for (idx, (&ia, &ib)) in a.iter().zip(b.iter()).enumerate() {
            if ia == ib {
                continue;
            }
            let (x, y) = ((idx % w) as u16, (idx / w) as u16);
            let (ia, ib) = (ia as f64, ib as f64);
            let mut l_prev = log(ia as f32);
            for j in 0..m {
                let alpha_b = (j + 1) as f64 / m as f64;
                let ib_j = if j + 1 == m {
                    ib
                } else {
                    (1.0 - alpha_b) * ia + alpha_b * ib
                };
                let l_next = log(ib_j as f32);
                let ta = t0 as f64 + dt * j as f64 / m as f64;
                let tb = t0 as f64 + dt * alpha_b;
                let r = &mut reference[idx];
                let delta = l_next - *r;
                let (count, step, p) = if delta >= cfg.c_pos {
                    ((delta / cfg.c_pos).floor() as u32, cfg.c_pos, Polarity::Positive)
                } else if delta <= -cfg.c_neg {
                    ((-delta / cfg.c_neg).floor() as u32, -cfg.c_neg, Polarity::Negative)
                } else {
                    (0, 0.0, Polarity::Positive)
                };
                for q in 1..=count {
                    let level = *r + q as f64 * step;
                    let frac = if l_next != l_prev {
                        ((level - l_prev) / (l_next - l_prev)).clamp(0.0, 1.0)
                    } else {
                        1.0
                    };
                    let t = (ta + frac * (tb - ta)).round() as u64;
                    events.push(Event::new(x, y, t.clamp(t0, t1), p));
                }
                *r += count as f64 * step;
                l_prev = l_next;
            }
        }
    }
    events.sort_by_key(|e| e.t);
    EventStream::new(events, sensor)
}
