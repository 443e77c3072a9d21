use ndarray::Array3;

use super::stream::{EventStream, Polarity, SensorSize};
use crate::error::{Error, Result};

/// Two-channel time surface: channel 0 positive, channel 1 negative events.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedEventFrame {
    /// `[2, H, W]`, values in `[0, 1]`.
    pub data: Array3<f32>,
    pub target_time: u64,
    /// Timestamp of the first event of the window.
    pub window_start: u64,
}

impl StackedEventFrame {
    pub fn zeros(sensor: SensorSize, target_time: u64) -> Self {
        StackedEventFrame {
            data: Array3::zeros((2, sensor.height as usize, sensor.width as usize)),
            target_time,
            window_start: target_time,
        }
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    /// The window spanned zero time, so the frame carries no information.
    pub fn is_degenerate(&self) -> bool {
        self.window_start == self.target_time
    }

    pub fn channel_mean(&self, p: Polarity) -> f64 {
        let ch = self.data.index_axis(ndarray::Axis(0), p.channel());
        ch.iter().map(|&v| v as f64).sum::<f64>() / ch.len().max(1) as f64
    }
}

/// Stacks a window into a time surface targeted at `t`.
///
/// Each event writes `(t_i - t_s) / (t - t_s)` at its pixel and polarity
/// channel, later events overwriting earlier ones. A window with
/// `t == t_s` yields an all-zero frame.
pub fn stack_events(window: &EventStream, t: u64) -> Result<StackedEventFrame> {
    let sensor = window.sensor();
    let first = window
        .first_time()
        .ok_or_else(|| Error::invalid("cannot stack an empty window"))?;
    let last = window.last_time().unwrap_or(first);
    if last > t {
        return Err(Error::invalid(format!(
            "window contains event at t={last} after target time {t}"
        )));
    }
    let mut frame = StackedEventFrame::zeros(sensor, t);
    frame.window_start = first;
    if t == first {
        log::warn!("degenerate event window at t={t}: all events share the target timestamp");
        return Ok(frame);
    }
    let span = (t - first) as f64;
    for e in window.events() {
        let v = (e.t - first) as f64 / span;
        frame.data[[e.p.channel(), e.y as usize, e.x as usize]] = v as f32;
    }
    Ok(frame)
}
