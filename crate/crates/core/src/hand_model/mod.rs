//! Parametric hand model: blend shapes, forward kinematics, linear blend
//! skinning and joint regression, plus the coarse/fine mesh correspondence.

mod data;
mod desk;
mod forward;

pub use data::{
    HandMesh, HandModelData, ManoParams, NUM_BETAS, NUM_COARSE_VERTICES, NUM_JOINTS,
    NUM_KINEMATIC_JOINTS, NUM_POSE_PARAMS, NUM_VERTICES, ROOT_JOINT,
};
pub use desk::make_desk_model;
pub use forward::{mano_forward, upsample_coarse, to_coarse, ManoLayer};
