//! Event camera + RGB fusion for 3D hand mesh reconstruction.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`event_core`]: event streams, time-surface stacking, frame-to-event
//!   simulation and high-rate binning.
//! - [`hand_model`]: the parametric hand model (skinning, joint regression,
//!   coarse/fine mesh correspondence).
//! - [`degrader`]: stochastic degradations of image/event training pairs and
//!   the scene descriptor used to inspect them.
//! - [`fusion_net`]: the fusion network, from feature extraction to mesh
//!   decoding.
//! - [`train_engine`]: losses, cropping and augmentation, and the training loop.
//! - [`eval_metrics`]: MPJPE, MPVPE, PA-MPJPE and PCK/AUC.
//! - [`cli_io`]: dataset layout, synthetic data generation, asynchronous
//!   inference and the command line.

pub mod cli_io;
pub mod degrader;
pub mod error;
pub mod eval_metrics;
pub mod event_core;
pub mod fusion_net;
pub mod hand_model;
mod imaging;
pub mod train_engine;

pub use error::{Error, Result};
pub use imaging::{to_gray, warp_affine, Affine2, Image, Intrinsics};
