use super::stream::EventStream;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EventBin {
    /// End of the bin (inclusive), microseconds.
    pub bin_time: u64,
    /// Events in `(previous bin_time, bin_time]`.
    pub window: EventStream,
    /// Latest frame with timestamp `<= bin_time`.
    pub frame_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Binning {
    pub bins: Vec<EventBin>,
    /// Bins that ended before the first frame.
    pub dropped: usize,
}

/// Index of the frame `j` minimising `t - t_j` subject to `t - t_j >= 0`.
///
/// `frame_times` must be sorted. Among equal timestamps the last one wins.
pub fn latest_frame_index(frame_times: &[u64], t: u64) -> Option<usize> {
    frame_times.partition_point(|&f| f <= t).checked_sub(1)
}

/// Splits `stream` into bins of period `1 / bin_rate` starting at its first
/// event, pairing each bin with the latest frame not after the bin end.
pub fn bin_stream(stream: &EventStream, bin_rate: f64, frame_times: &[u64]) -> Result<Binning> {
    if !(bin_rate > 0.0 && bin_rate.is_finite()) {
        return Err(Error::invalid(format!("bin rate must be positive, got {bin_rate}")));
    }
    if frame_times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("frame timestamps must be sorted"));
    }
    let (Some(first), Some(last)) = (stream.first_time(), stream.last_time()) else {
        return Ok(Binning {
            bins: Vec::new(),
            dropped: 0,
        });
    };
    let period = 1e6 / bin_rate;
    let n_bins = ((last - first + 1) as f64 / period).ceil() as usize;
    let events = stream.events();
    let mut bins = Vec::with_capacity(n_bins);
    let mut dropped = 0;
    let mut start_idx = 0;
    for i in 0..n_bins {
        let bin_time = first + ((i + 1) as f64 * period).round() as u64 - 1;
        let end_idx = events.partition_point(|e| e.t <= bin_time);
        let window = EventStream::from_sorted_slice(&events[start_idx..end_idx], stream.sensor());
        start_idx = end_idx;
        match latest_frame_index(frame_times, bin_time) {
            Some(frame_index) => bins.push(EventBin {
                bin_time,
                window,
                frame_index,
            }),
            None => dropped += 1,
        }
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} event bins preceding the first frame");
    }
    Ok(Binning { bins, dropped })
}
