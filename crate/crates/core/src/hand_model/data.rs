use std::collections::HashMap;
use std::path::Path;

use ndarray::{Array2, Array3};
use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_VERTICES: usize = 778;
pub const NUM_JOINTS: usize = 21;
pub const NUM_KINEMATIC_JOINTS: usize = 16;
pub const NUM_COARSE_VERTICES: usize = 195;
pub const NUM_BETAS: usize = 10;
pub const NUM_POSE_PARAMS: usize = 3 * NUM_KINEMATIC_JOINTS;
/// Wrist, index 0 of the 21-joint layout.
pub const ROOT_JOINT: usize = 0;

const POSE_FEATURES: usize = 9 * (NUM_KINEMATIC_JOINTS - 1);

/// Pose as 16 axis-angle triplets (global rotation first) and shape coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManoParams {
    pub theta: Vec<f64>,
    pub beta: Vec<f64>,
}

impl ManoParams {
    pub fn zeros() -> Self {
        ManoParams {
            theta: vec![0.0; NUM_POSE_PARAMS],
            beta: vec![0.0; NUM_BETAS],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta.len() != NUM_POSE_PARAMS || self.beta.len() != NUM_BETAS {
            return Err(Error::shape(format!(
                "pose/shape vectors have lengths {}/{}, expected {NUM_POSE_PARAMS}/{NUM_BETAS}",
                self.theta.len(),
                self.beta.len()
            )));
        }
        if self.theta.iter().chain(&self.beta).any(|v| !v.is_finite()) {
            return Err(Error::data("non-finite hand parameters"));
        }
        Ok(())
    }

    /// Componentwise `(1 - alpha) * self + alpha * other`.
    pub fn lerp(&self, other: &ManoParams, alpha: f64) -> ManoParams {
        let mix = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (1.0 - alpha) * x + alpha * y).collect();
        ManoParams {
            theta: mix(&self.theta, &other.theta),
            beta: mix(&self.beta, &other.beta),
        }
    }
}

/// A 778-vertex mesh with its 21 regressed joints, in millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct HandMesh {
    pub vertices: Array2<f64>,
    pub joints: Array2<f64>,
}

impl HandMesh {
    pub fn new(vertices: Array2<f64>, joints: Array2<f64>) -> Result<Self> {
        if vertices.dim() != (NUM_VERTICES, 3) || joints.dim() != (NUM_JOINTS, 3) {
            return Err(Error::shape(format!(
                "mesh shapes {:?}/{:?}, expected ({NUM_VERTICES}, 3)/({NUM_JOINTS}, 3)",
                vertices.dim(),
                joints.dim()
            )));
        }
        if vertices.iter().chain(joints.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite mesh coordinates".into()));
        }
        Ok(HandMesh { vertices, joints })
    }

    /// Translates so the root joint sits at the origin.
    pub fn root_relative(&self) -> HandMesh {
        let root = self.joints.row(ROOT_JOINT).to_owned();
        HandMesh {
            vertices: &self.vertices - &root,
            joints: &self.joints - &root,
        }
    }

    pub fn translated(&self, offset: [f64; 3]) -> HandMesh {
        let o = ndarray::arr1(&offset);
        HandMesh {
            vertices: &self.vertices + &o,
            joints: &self.joints + &o,
        }
    }
}

/// Dense arrays defining a hand model.
///
/// The first 16 rows of `j_reg` regress the kinematic joints used for
/// forward kinematics; the remaining 5 are the fingertips.
#[derive(Debug, Clone, PartialEq)]
pub struct HandModelData {
    pub template: Array2<f64>,
    pub shape_dirs: Array3<f64>,
    pub pose_dirs: Array3<f64>,
    pub skin_weights: Array2<f64>,
    /// Parent per kinematic joint, `-1` for the root.
    pub kinematic_tree: Vec<i64>,
    pub j_reg: Array2<f64>,
    pub coarse_index: Vec<usize>,
    pub upsample_matrix: Array2<f64>,
}

impl HandModelData {
    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, got: &[usize], want: &[usize]| {
            if got != want {
                Err(Error::shape(format!("{name} has shape {got:?}, expected {want:?}")))
            } else {
                Ok(())
            }
        };
        check("template", self.template.shape(), &[NUM_VERTICES, 3])?;
        check("shape_dirs", self.shape_dirs.shape(), &[NUM_VERTICES, 3, NUM_BETAS])?;
        check("pose_dirs", self.pose_dirs.shape(), &[NUM_VERTICES, 3, POSE_FEATURES])?;
        check("skin_weights", self.skin_weights.shape(), &[NUM_VERTICES, NUM_KINEMATIC_JOINTS])?;
        check("kinematic_tree", &[self.kinematic_tree.len()], &[NUM_KINEMATIC_JOINTS])?;
        check("j_reg", self.j_reg.shape(), &[NUM_JOINTS, NUM_VERTICES])?;
        check("coarse_index", &[self.coarse_index.len()], &[NUM_COARSE_VERTICES])?;
        check("upsample_matrix", self.upsample_matrix.shape(), &[NUM_VERTICES, NUM_COARSE_VERTICES])?;

        let finite = self.template.iter().all(|v| v.is_finite())
            && self.shape_dirs.iter().all(|v| v.is_finite())
            && self.pose_dirs.iter().all(|v| v.is_finite())
            && self.skin_weights.iter().all(|v| v.is_finite())
            && self.j_reg.iter().all(|v| v.is_finite())
            && self.upsample_matrix.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::data("hand model contains non-finite values"));
        }
        for (i, row) in self.skin_weights.rows().into_iter().enumerate() {
            if row.iter().any(|&w| w < 0.0) || (row.sum() - 1.0).abs() > 1e-6 {
                return Err(Error::data(format!("skin_weights row {i} is not a convex combination")));
            }
        }
        for (i, row) in self.upsample_matrix.rows().into_iter().enumerate() {
            if (row.sum() - 1.0).abs() > 1e-6 {
                return Err(Error::data(format!("upsample_matrix row {i} does not sum to 1")));
            }
        }
        if self.kinematic_tree[0] != -1 {
            return Err(Error::data("kinematic joint 0 must be the root"));
        }
        for (j, &p) in self.kinematic_tree.iter().enumerate().skip(1) {
            if p < 0 || p as usize >= j {
                return Err(Error::data(format!(
                    "kinematic joint {j} has parent {p}; parents must precede children"
                )));
            }
        }
        let mut seen = vec![false; NUM_VERTICES];
        for &c in &self.coarse_index {
            if c >= NUM_VERTICES || std::mem::replace(&mut seen[c], true) {
                return Err(Error::data(format!("coarse_index entry {c} is duplicated or out of range")));
            }
        }
        Ok(())
    }

    /// Largest per-vertex distance between the template and its coarse-to-fine reconstruction.
    pub fn upsample_residual(&self) -> f64 {
        let coarse = super::to_coarse(&self.template, self);
        let rebuilt = self.upsample_matrix.dot(&coarse);
        (&rebuilt - &self.template)
            .rows()
            .into_iter()
            .map(|r| r.dot(&r).sqrt())
            .fold(0.0, f64::max)
    }

    /// Loads a safetensors archive with one array per field.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let st = SafeTensors::deserialize(&bytes)
            .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        let f64s = |name: &str| -> Result<(Vec<usize>, Vec<f64>)> {
            let v = st
                .tensor(name)
                .map_err(|_| Error::data(format!("{}: missing array '{name}'", path.display())))?;
            let data = match v.dtype() {
                Dtype::F64 => v.data().chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
                Dtype::F32 => v
                    .data()
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect(),
                other => return Err(Error::data(format!("array '{name}' has unsupported dtype {other:?}"))),
            };
            Ok((v.shape().to_vec(), data))
        };
        let ints = |name: &str| -> Result<Vec<i64>> {
            let v = st
                .tensor(name)
                .map_err(|_| Error::data(format!("{}: missing array '{name}'", path.display())))?;
            match v.dtype() {
                Dtype::I64 => Ok(v.data().chunks_exact(8).map(|c| i64::from_le_bytes(c.try_into().unwrap())).collect()),
                Dtype::I32 => Ok(v
                    .data()
                    .chunks_exact(4)
                    .map(|c| i32::from_le_bytes(c.try_into().unwrap()) as i64)
                    .collect()),
                other => Err(Error::data(format!("array '{name}' has unsupported dtype {other:?}"))),
            }
        };
        let arr2 = |name: &str| -> Result<Array2<f64>> {
            let (shape, data) = f64s(name)?;
            if shape.len() != 2 {
                return Err(Error::shape(format!("array '{name}' must be 2-D, got {shape:?}")));
            }
            Array2::from_shape_vec((shape[0], shape[1]), data).map_err(|e| Error::shape(format!("{name}: {e}")))
        };
        let arr3 = |name: &str| -> Result<Array3<f64>> {
            let (shape, data) = f64s(name)?;
            if shape.len() != 3 {
                return Err(Error::shape(format!("array '{name}' must be 3-D, got {shape:?}")));
            }
            Array3::from_shape_vec((shape[0], shape[1], shape[2]), data)
                .map_err(|e| Error::shape(format!("{name}: {e}")))
        };
        let coarse_index = ints("coarse_index")?
            .into_iter()
            .map(|i| usize::try_from(i).map_err(|_| Error::data(format!("negative coarse index {i}"))))
            .collect::<Result<Vec<_>>>()?;
        let model = HandModelData {
            template: arr2("template")?,
            shape_dirs: arr3("shape_dirs")?,
            pose_dirs: arr3("pose_dirs")?,
            skin_weights: arr2("skin_weights")?,
            kinematic_tree: ints("kinematic_tree")?,
            j_reg: arr2("j_reg")?,
            coarse_index,
            upsample_matrix: arr2("upsample_matrix")?,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fn le<T: Copy, const N: usize>(v: impl Iterator<Item = T>, f: impl Fn(T) -> [u8; N]) -> Vec<u8> {
            v.flat_map(f).collect()
        }
        let entries: Vec<(&str, Dtype, Vec<usize>, Vec<u8>)> = vec![
            ("template", Dtype::F64, self.template.shape().to_vec(), le(self.template.iter().copied(), f64::to_le_bytes)),
            ("shape_dirs", Dtype::F64, self.shape_dirs.shape().to_vec(), le(self.shape_dirs.iter().copied(), f64::to_le_bytes)),
            ("pose_dirs", Dtype::F64, self.pose_dirs.shape().to_vec(), le(self.pose_dirs.iter().copied(), f64::to_le_bytes)),
            ("skin_weights", Dtype::F64, self.skin_weights.shape().to_vec(), le(self.skin_weights.iter().copied(), f64::to_le_bytes)),
            ("kinematic_tree", Dtype::I64, vec![self.kinematic_tree.len()], le(self.kinematic_tree.iter().copied(), i64::to_le_bytes)),
            ("j_reg", Dtype::F64, self.j_reg.shape().to_vec(), le(self.j_reg.iter().copied(), f64::to_le_bytes)),
            ("coarse_index", Dtype::I64, vec![self.coarse_index.len()], le(self.coarse_index.iter().map(|&i| i as i64), i64::to_le_bytes)),
            ("upsample_matrix", Dtype::F64, self.upsample_matrix.shape().to_vec(), le(self.upsample_matrix.iter().copied(), f64::to_le_bytes)),
        ];
        let views = entries
            .iter()
            .map(|(name, dtype, shape, bytes)| {
                TensorView::new(*dtype, shape.clone(), bytes)
                    .map(|v| (name.to_string(), v))
                    .map_err(|e| Error::data(format!("{name}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut meta = HashMap::new();
        meta.insert("format".to_string(), "evrgbhand-hand-model".to_string());
        meta.insert("schema_version".to_string(), "1".to_string());
        safetensors::serialize_to_file(views, Some(meta), path).map_err(|e| Error::data(format!("{}: {e}", path.display())))
    }
}
