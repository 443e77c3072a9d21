use candle_core::{DType, Device, Tensor};
use ndarray::Array2;

use super::data::{
    HandMesh, HandModelData, ManoParams, NUM_BETAS, NUM_KINEMATIC_JOINTS, NUM_POSE_PARAMS, NUM_VERTICES,
};
use crate::error::{Error, Result};

/// Squared-norm offset keeping the axis-angle map differentiable at zero.
const ANGLE_EPS: f64 = 1e-16;

/// The hand model as a differentiable tensor function of pose and shape.
#[derive(Debug, Clone)]
pub struct ManoLayer {
    template: Tensor,
    shape_dirs: Tensor,
    pose_dirs: Tensor,
    skin_weights: Tensor,
    j_kin: Tensor,
    j_reg: Tensor,
    parents: Vec<usize>,
    dtype: DType,
}

fn tensor2(a: &Array2<f64>, dtype: DType, dev: &Device) -> Result<Tensor> {
    let t = Tensor::from_iter(a.iter().copied(), dev)?.reshape(a.dim())?;
    Ok(t.to_dtype(dtype)?)
}

impl ManoLayer {
    pub fn new(model: &HandModelData, dtype: DType, device: &Device) -> Result<Self> {
        model.validate()?;
        let flat = |a: &ndarray::Array3<f64>| -> Result<Tensor> {
            let (v, c, k) = a.dim();
            Ok(Tensor::from_iter(a.iter().copied(), device)?
                .reshape((v * c, k))?
                .to_dtype(dtype)?)
        };
        let j_reg = tensor2(&model.j_reg, dtype, device)?;
        Ok(ManoLayer {
            template: tensor2(&model.template, dtype, device)?,
            shape_dirs: flat(&model.shape_dirs)?,
            pose_dirs: flat(&model.pose_dirs)?,
            skin_weights: tensor2(&model.skin_weights, dtype, device)?,
            j_kin: j_reg.narrow(0, 0, NUM_KINEMATIC_JOINTS)?,
            j_reg,
            parents: model.kinematic_tree.iter().map(|&p| p.max(0) as usize).collect(),
            dtype,
        })
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    /// `theta: [48]`, `beta: [10]` → `(vertices [778, 3], joints [21, 3])`.
    pub fn forward(&self, theta: &Tensor, beta: &Tensor) -> Result<(Tensor, Tensor)> {
        if theta.elem_count() != NUM_POSE_PARAMS || beta.elem_count() != NUM_BETAS {
            return Err(Error::shape(format!(
                "pose/shape tensors have {}/{} elements, expected {NUM_POSE_PARAMS}/{NUM_BETAS}",
                theta.elem_count(),
                beta.elem_count()
            )));
        }
        let dev = theta.device();
        let v_shaped = (&self.template
            + self
                .shape_dirs
                .matmul(&beta.reshape((NUM_BETAS, 1))?)?
                .reshape((NUM_VERTICES, 3))?)?;
        let j_rest = self.j_kin.matmul(&v_shaped)?;

        let rot = rodrigues(&theta.reshape((NUM_KINEMATIC_JOINTS, 3))?)?;
        let eye = Tensor::eye(3, self.dtype, dev)?;
        let pose_feat = rot
            .narrow(0, 1, NUM_KINEMATIC_JOINTS - 1)?
            .broadcast_sub(&eye)?
            .reshape((9 * (NUM_KINEMATIC_JOINTS - 1), 1))?;
        let v_posed = (&v_shaped + self.pose_dirs.matmul(&pose_feat)?.reshape((NUM_VERTICES, 3))?)?;

        let mut global_rot: Vec<Tensor> = Vec::with_capacity(NUM_KINEMATIC_JOINTS);
        let mut global_t: Vec<Tensor> = Vec::with_capacity(NUM_KINEMATIC_JOINTS);
        let mut rel = Vec::with_capacity(NUM_KINEMATIC_JOINTS);
        for j in 0..NUM_KINEMATIC_JOINTS {
            let r_j = rot.get(j)?;
            let jr = j_rest.get(j)?.reshape((3, 1))?;
            let (g_r, g_t) = if j == 0 {
                (r_j, jr.clone())
            } else {
                let p = self.parents[j];
                let jp = j_rest.get(p)?.reshape((3, 1))?;
                let g_r = global_rot[p].matmul(&r_j)?;
                let g_t = (global_rot[p].matmul(&(&jr - &jp)?)? + &global_t[p])?;
                (g_r, g_t)
            };
            // Transform relative to the rest pose: x -> G (x - J_rest).
            let t_rel = (&g_t - g_r.matmul(&jr)?)?;
            rel.push(Tensor::cat(&[&g_r, &t_rel], 1)?);
            global_rot.push(g_r);
            global_t.push(g_t);
        }
        let rel = Tensor::stack(&rel, 0)?.reshape((NUM_KINEMATIC_JOINTS, 12))?;
        let blended = self.skin_weights.matmul(&rel)?.reshape((NUM_VERTICES, 3, 4))?;
        let r_v = blended.narrow(2, 0, 3)?;
        let t_v = blended.narrow(2, 3, 1)?;
        let verts = (r_v.matmul(&v_posed.reshape((NUM_VERTICES, 3, 1))?)? + t_v)?.reshape((NUM_VERTICES, 3))?;
        let joints = self.j_reg.matmul(&verts)?;
        Ok((verts, joints))
    }

    pub fn mesh(&self, params: &ManoParams) -> Result<HandMesh> {
        params.validate()?;
        let dev = self.template.device();
        let theta = Tensor::from_slice(&params.theta, NUM_POSE_PARAMS, dev)?.to_dtype(self.dtype)?;
        let beta = Tensor::from_slice(&params.beta, NUM_BETAS, dev)?.to_dtype(self.dtype)?;
        let (v, j) = self.forward(&theta, &beta)?;
        HandMesh::new(to_array2(&v)?, to_array2(&j)?)
    }

    /// Joint regression `j_reg · vertices` for a `[778, 3]` tensor.
    pub fn regress_joints(&self, vertices: &Tensor) -> Result<Tensor> {
        Ok(self.j_reg.matmul(vertices)?)
    }
}

pub(crate) fn to_array2(t: &Tensor) -> Result<Array2<f64>> {
    let (r, c) = t.dims2()?;
    let data = t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    Array2::from_shape_vec((r, c), data).map_err(|e| Error::shape(e.to_string()))
}

/// Axis-angle `[N, 3]` to rotation matrices `[N, 3, 3]`.
pub(crate) fn rodrigues(r: &Tensor) -> Result<Tensor> {
    let n = r.dim(0)?;
    let angle = (r.sqr()?.sum_keepdim(1)? + ANGLE_EPS)?.sqrt()?;
    let axis = r.broadcast_div(&angle)?;
    let (ax, ay, az) = (axis.narrow(1, 0, 1)?, axis.narrow(1, 1, 1)?, axis.narrow(1, 2, 1)?);
    let z = ax.zeros_like()?;
    let k = Tensor::cat(&[&z, &az.neg()?, &ay, &az, &z, &ax.neg()?, &ay.neg()?, &ax, &z], 1)?.reshape((n, 3, 3))?;
    let sin = angle.sin()?.reshape((n, 1, 1))?;
    let one_minus_cos = (1.0 - angle.cos()?)?.reshape((n, 1, 1))?;
    let eye = Tensor::eye(3, r.dtype(), r.device())?.unsqueeze(0)?;
    let r = (eye.broadcast_add(&k.broadcast_mul(&sin)?)? + k.matmul(&k)?.broadcast_mul(&one_minus_cos)?)?;
    Ok(r)
}

/// Evaluates the model in 64-bit arithmetic.
pub fn mano_forward(params: &ManoParams, model: &HandModelData) -> Result<HandMesh> {
    ManoLayer::new(model, DType::F64, &Device::Cpu)?.mesh(params)
}

/// Gathers the coarse-mesh vertices.
pub fn to_coarse(vertices: &Array2<f64>, model: &HandModelData) -> Array2<f64> {
    vertices.select(ndarray::Axis(0), &model.coarse_index)
}

/// Maps a coarse mesh back to all vertices with the model's upsampling matrix.
pub fn upsample_coarse(coarse: &Array2<f64>, model: &HandModelData) -> Array2<f64> {
    model.upsample_matrix.dot(coarse)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hand_model::{make_desk_model, NUM_JOINTS};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model() -> HandModelData {
        make_desk_model(&mut ChaCha8Rng::seed_from_u64(11))
    }

    fn random_params(rng: &mut impl Rng) -> ManoParams {
        ManoParams {
            theta: (0..NUM_POSE_PARAMS).map(|_| rng.random_range(-0.6..0.6)).collect(),
            beta: (0..NUM_BETAS).map(|_| rng.random_range(-1.5..1.5)).collect(),
        }
    }

    #[test]
    fn rest_pose_reproduces_template() {
        let m = model();
        let mesh = mano_forward(&ManoParams::zeros(), &m).unwrap();
        let err = (&mesh.vertices - &m.template).iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        assert!(err < 1e-6, "rest pose error {err}");
    }

    #[test]
    fn rodrigues_is_a_rotation() {
        let r = Tensor::new(&[[0.3f64, -0.2, 0.9], [0.0, 0.0, 0.0]], &Device::Cpu).unwrap();
        let rot = rodrigues(&r).unwrap();
        let rtr = rot.transpose(1, 2).unwrap().matmul(&rot).unwrap();
        let eye = Tensor::eye(3, DType::F64, &Device::Cpu).unwrap().unsqueeze(0).unwrap();
        let err = rtr.broadcast_sub(&eye).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(err < 1e-12);
        let id: Vec<f64> = rot.get(1).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(id, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn global_rotation_is_rigid_about_root() {
        let m = model();
        let rest = mano_forward(&ManoParams::zeros(), &m).unwrap();
        let mut p = ManoParams::zeros();
        p.theta[..3].copy_from_slice(&[0.4, -0.7, 0.25]);
        let posed = mano_forward(&p, &m).unwrap();
        let rot = rodrigues(&Tensor::new(&[[0.4f64, -0.7, 0.25]], &Device::Cpu).unwrap()).unwrap();
        let rot = to_array2(&rot.get(0).unwrap()).unwrap();
        let root = m.j_reg.row(0).dot(&m.template);
        let expected = (&m.template - &root).dot(&rot.t()) + &root;
        let err = (&posed.vertices - &expected).iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        assert!(err < 1e-5, "equivariance error {err}");
        let _ = rest;
    }

    #[test]
    fn joints_match_explicit_regression() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let mesh = mano_forward(&random_params(&mut rng), &m).unwrap();
            for k in 0..NUM_JOINTS {
                for c in 0..3 {
                    let mut acc = 0.0;
                    for v in 0..NUM_VERTICES {
                        acc += m.j_reg[[k, v]] * mesh.vertices[[v, c]];
                    }
                    assert!((acc - mesh.joints[[k, c]]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn regression_is_linear() {
        let m = model();
        let layer = ManoLayer::new(&m, DType::F64, &Device::Cpu).unwrap();
        let v = Tensor::randn(0f64, 30.0, (NUM_VERTICES, 3), &Device::Cpu).unwrap();
        let w = Tensor::randn(0f64, 30.0, (NUM_VERTICES, 3), &Device::Cpu).unwrap();
        let lhs = layer.regress_joints(&((&v * 0.7).unwrap() + (&w * -1.3).unwrap()).unwrap()).unwrap();
        let rhs = ((layer.regress_joints(&v).unwrap() * 0.7).unwrap() + (layer.regress_joints(&w).unwrap() * -1.3).unwrap()).unwrap();
        let err = (lhs - rhs).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(err < 1e-9);
    }

    #[test]
    fn rejects_wrong_lengths() {
        let m = model();
        let mut p = ManoParams::zeros();
        p.theta.pop();
        assert!(mano_forward(&p, &m).is_err());
    }

    #[test]
    fn coarse_gather_and_upsample() {
        let m = model();
        let coarse = to_coarse(&m.template, &m);
        assert_eq!(coarse.dim(), (195, 3));
        for (row, &idx) in m.coarse_index.iter().enumerate() {
            assert_eq!(coarse.row(row), m.template.row(idx));
        }
        let rebuilt = upsample_coarse(&coarse, &m);
        let worst = (&rebuilt - &m.template).rows().into_iter().map(|r| r.dot(&r).sqrt()).fold(0.0, f64::max);
        assert!(worst <= m.upsample_residual() + 1e-9);

        // Permuting vertices outside the coarse set leaves the gather unchanged.
        let mut shuffled = m.template.clone();
        let free: Vec<usize> = (0..NUM_VERTICES).filter(|i| !m.coarse_index.contains(i)).collect();
        for pair in free.chunks_exact(2) {
            let a = shuffled.row(pair[0]).to_owned();
            let b = shuffled.row(pair[1]).to_owned();
            shuffled.row_mut(pair[0]).assign(&b);
            shuffled.row_mut(pair[1]).assign(&a);
        }
        assert_eq!(to_coarse(&shuffled, &m), coarse);
    }
}
