//! The event/RGB fusion network.
//!
//! Per step: separate residual backbones turn the image and the stacked event
//! frame into `D × G × G` feature maps (`G = input / 8`); a convolutional LSTM
//! estimates deformable offsets that align the event features to the image;
//! a gated complementary fusion blends them and downsamples to `G / 3`; a
//! transformer encoder produces one latent token set per block; per-token
//! causal temporal attention mixes each set with the previous `S` steps; and a
//! token decoder regresses 21 joints and 195 coarse vertices, upsampled
//! linearly to the 778-vertex mesh.

mod backbone;
mod checkpoint;
mod deform;
mod fusion;
mod layers;
mod net;
mod offsets;
mod params;
mod transformer;

pub use backbone::Backbone;
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use deform::DeformableConv;
pub use fusion::ComplementaryFusion;
pub use net::{FusionNet, NetworkConfig, StepInput, StreamState};
pub use offsets::{OffsetEstimator, RecurrentState, DEFORM_TAPS};
pub use params::ParamStore;
pub use transformer::{Encoder, MeshDecoder, MeshPrediction, TemporalAttention};
