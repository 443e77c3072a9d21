//! Event streams and their dense representations.

mod binning;
mod codec;
mod noise;
mod simulate;
mod stack;
mod stream;

pub use binning::{bin_stream, latest_frame_index, Binning, EventBin};
pub use codec::{read_csv, read_evb, write_csv, write_evb, EVB_MAGIC};
pub use noise::add_temporal_noise;
pub use simulate::{simulate_events, SimulatorConfig};
pub use stack::{stack_events, StackedEventFrame};
pub use stream::{slice_window, Event, EventStream, Polarity, SensorSize, SlicedWindow};
