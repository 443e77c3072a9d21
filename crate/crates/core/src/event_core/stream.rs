use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn sign(self) -> i8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }

    pub fn from_sign(p: i8) -> Result<Self> {
        match p {
            1 => Ok(Polarity::Positive),
            -1 => Ok(Polarity::Negative),
            other => Err(Error::data(format!("polarity must be +1 or -1, got {other}"))),
        }
    }

    /// Channel of the stacked frame holding this polarity.
    pub fn channel(self) -> usize {
        match self {
            Polarity::Positive => 0,
            Polarity::Negative => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    /// Column.
    pub x: u16,
    /// Row.
    pub y: u16,
    /// Microseconds.
    pub t: u64,
    pub p: Polarity,
}

impl Event {
    pub fn new(x: u16, y: u16, t: u64, p: Polarity) -> Self {
        Event { x, y, t, p }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SensorSize {
    pub width: u16,
    pub height: u16,
}

impl SensorSize {
    pub const DAVIS346: SensorSize = SensorSize {
        width: 346,
        height: 260,
    };

    pub fn new(width: u16, height: u16) -> Self {
        SensorSize { width, height }
    }

    pub fn contains(&self, x: u16, y: u16) -> bool {
        x < self.width && y < self.height
    }
}

/// Time-ordered events from one sensor. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    events: Vec<Event>,
    sensor: SensorSize,
}

impl EventStream {
    /// Validates ordering and bounds.
    pub fn new(events: Vec<Event>, sensor: SensorSize) -> Result<Self> {
        if let Some(i) = events.windows(2).position(|w| w[1].t < w[0].t) {
            return Err(Error::data(format!(
                "events out of order at index {}: t={} after t={}",
                i + 1,
                events[i + 1].t,
                events[i].t
            )));
        }
        if let Some(e) = events.iter().find(|e| !sensor.contains(e.x, e.y)) {
            return Err(Error::data(format!(
                "event at ({}, {}) outside {}x{} sensor",
                e.x, e.y, sensor.width, sensor.height
            )));
        }
        Ok(EventStream { events, sensor })
    }

    pub fn empty(sensor: SensorSize) -> Self {
        EventStream {
            events: Vec::new(),
            sensor,
        }
    }

    pub(crate) fn from_sorted_slice(events: &[Event], sensor: SensorSize) -> Self {
        EventStream {
            events: events.to_vec(),
            sensor,
        }
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn sensor(&self) -> SensorSize {
        self.sensor
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn first_time(&self) -> Option<u64> {
        self.events.first().map(|e| e.t)
    }

    pub fn last_time(&self) -> Option<u64> {
        self.events.last().map(|e| e.t)
    }

    /// Number of events with timestamp `<= t`.
    pub fn count_until(&self, t: u64) -> usize {
        self.events.partition_point(|e| e.t <= t)
    }
}

/// Result of [`slice_window`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlicedWindow {
    pub events: EventStream,
    /// Fewer than the requested number of events preceded `t`.
    pub short: bool,
}

/// The last `n` events with timestamp `<= t`, in stream order.
///
/// An empty window is not an error; callers decide what to do with it.
pub fn slice_window(stream: &EventStream, t: u64, n: usize) -> Result<SlicedWindow> {
    if n == 0 {
        return Err(Error::invalid("window size must be at least 1"));
    }
    let end = stream.count_until(t);
    let start = end.saturating_sub(n);
    Ok(SlicedWindow {
        events: EventStream::from_sorted_slice(&stream.events[start..end], stream.sensor),
        short: end - start < n,
    })
}
