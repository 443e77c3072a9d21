//! Dataset layout and loading, synthetic data generation, pipeline
//! configuration, asynchronous inference and the command-line interface.
//!
//! A dataset root holds `splits.json`, an optional `hand_model.safetensors`
//! and one directory per sequence:
//!
//! ```text
//! <id>/events.evb
//! <id>/rgb/<t_us, 12 digits>.png
//! <id>/annotations.json
//! <id>/calib.json
//! ```

mod cli;
mod config;
mod dataset;
mod pipeline;
mod synth;

pub use cli::{execute, exit_code, run, Cli, Command, EXIT_DATA, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE};
pub use config::PipelineConfig;
pub use dataset::{
    frame_file_name, load_dataset, read_frames, read_png, save_sequence, save_splits, write_png, AnnotationFile,
    CalibFile, CameraCalib, DatasetIndex, SequenceEntry, Split, SplitsFile, ANNOTATIONS_FILE, CALIB_FILE, EVENTS_FILE,
    FRAMES_DIR, HAND_MODEL_FILE, SCHEMA_VERSION, SPLITS_FILE,
};
pub use pipeline::{collect_eval_samples, eval_spec, image_tensor, prediction_arrays, run_async_inference, AsyncTrack, TimedMesh};
pub use synth::{make_synthetic_sequence, render_hand, write_synthetic_dataset, SyntheticConfig};
