use candle_core::{DType, Tensor};
use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion_net::MeshPrediction;
use crate::hand_model::HandMesh;

/// Smoothing inside the per-joint square root of the tensor joint loss; it
/// keeps the gradient finite at zero error.
pub const JOINT_LOSS_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_v: f64,
    pub lambda_j: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_v: 100.0,
            lambda_j: 2000.0,
        }
    }
}

fn same_shape(pred: ArrayView2<f64>, gt: ArrayView2<f64>) -> Result<()> {
    if pred.dim() != gt.dim() || pred.ncols() != 3 || pred.nrows() == 0 {
        return Err(Error::shape(format!("prediction {:?} vs ground truth {:?}", pred.dim(), gt.dim())));
    }
    Ok(())
}

/// Sum of absolute coordinate differences divided by the vertex count.
pub fn vertex_loss(pred: ArrayView2<f64>, gt: ArrayView2<f64>) -> Result<f64> {
    same_shape(pred, gt)?;
    let sum: f64 = pred.iter().zip(gt.iter()).map(|(a, b)| (a - b).abs()).sum();
    Ok(sum / pred.nrows() as f64)
}

/// Mean per-joint Euclidean distance.
pub fn joint_loss(pred: ArrayView2<f64>, gt: ArrayView2<f64>) -> Result<f64> {
    same_shape(pred, gt)?;
    let sum: f64 = pred
        .rows()
        .into_iter()
        .zip(gt.rows())
        .map(|(a, b)| (0..3).map(|c| (a[c] - b[c]).powi(2)).sum::<f64>().sqrt())
        .sum();
    Ok(sum / pred.nrows() as f64)
}

/// Every weighted term of the composite loss. Index 0 of the event terms is
/// step `s = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub image_vertex: f64,
    pub image_joint: f64,
    pub event_vertex: Vec<f64>,
    pub event_joint: Vec<f64>,
    pub coarse_vertex: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Sum of the individual terms (equals `total` up to rounding).
    pub fn term_sum(&self) -> f64 {
        self.image_vertex
            + self.image_joint
            + self.event_vertex.iter().sum::<f64>()
            + self.event_joint.iter().sum::<f64>()
            + self.coarse_vertex
    }
}

/// `λ_V·L_V + λ_J·L_J` for the image-step mesh plus the same for each of the
/// `S` event-step meshes.
pub fn total_loss(
    image_pred: &HandMesh,
    event_preds: &[HandMesh],
    image_gt: &HandMesh,
    event_gts: &[HandMesh],
    weights: LossWeights,
) -> Result<LossBreakdown> {
    if event_preds.len() != event_gts.len() {
        return Err(Error::shape(format!(
            "{} event predictions for {} ground truths",
            event_preds.len(),
            event_gts.len()
        )));
    }
    let term = |p: &HandMesh, g: &HandMesh| -> Result<(f64, f64)> {
        Ok((
            weights.lambda_v * vertex_loss(p.vertices.view(), g.vertices.view())?,
            weights.lambda_j * joint_loss(p.joints.view(), g.joints.view())?,
        ))
    };
    let (image_vertex, image_joint) = term(image_pred, image_gt)?;
    let mut b = LossBreakdown {
        image_vertex,
        image_joint,
        event_vertex: Vec::with_capacity(event_preds.len()),
        event_joint: Vec::with_capacity(event_preds.len()),
        coarse_vertex: 0.0,
        total: 0.0,
    };
    for (p, g) in event_preds.iter().zip(event_gts) {
        let (v, j) = term(p, g)?;
        b.event_vertex.push(v);
        b.event_joint.push(j);
    }
    b.total = b.term_sum();
    Ok(b)
}

/// Batched targets for one step: `[B, 778, 3]`, `[B, 21, 3]` and optionally
/// `[B, 195, 3]`.
#[derive(Debug, Clone)]
pub struct StepTargets {
    pub vertices: Tensor,
    pub joints: Tensor,
    pub coarse: Option<Tensor>,
}

fn vertex_loss_t(pred: &Tensor, gt: &Tensor) -> Result<Tensor> {
    let (b, m, _) = pred.dims3()?;
    Ok(((pred - gt)?.abs()?.sum_all()? / (b * m) as f64)?)
}

fn joint_loss_t(pred: &Tensor, gt: &Tensor) -> Result<Tensor> {
    let (b, k, _) = pred.dims3()?;
    let d = ((pred - gt)?.sqr()?.sum(2)? + JOINT_LOSS_EPS)?.sqrt()?;
    Ok(((d - JOINT_LOSS_EPS.sqrt())?.sum_all()? / (b * k) as f64)?)
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}

/// Differentiable batch-mean version of [`total_loss`]; step 0 is the image
/// step. Coarse vertices are supervised with weight `λ_V` when targets carry
/// them.
/// Terms are accumulated in f64 whatever the network dtype.
pub fn total_loss_tensor(
    preds: &[MeshPrediction],
    targets: &[StepTargets],
    weights: LossWeights,
) -> Result<(Tensor, LossBreakdown)> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(Error::shape(format!("{} predictions for {} targets", preds.len(), targets.len())));
    }
    let mut total: Option<Tensor> = None;
    let mut b = LossBreakdown {
        image_vertex: 0.0,
        image_joint: 0.0,
        event_vertex: Vec::new(),
        event_joint: Vec::new(),
        coarse_vertex: 0.0,
        total: 0.0,
    };
    let mut add = |t: Tensor| -> Result<()> {
        total = Some(match total.take() {
            Some(a) => (a + t)?,
            None => t,
        });
        Ok(())
    };
    for (s, (p, t)) in preds.iter().zip(targets).enumerate() {
        let v = (vertex_loss_t(&p.fine, &t.vertices)?.to_dtype(DType::F64)? * weights.lambda_v)?;
        let j = (joint_loss_t(&p.joints, &t.joints)?.to_dtype(DType::F64)? * weights.lambda_j)?;
        if s == 0 {
            b.image_vertex = scalar(&v)?;
            b.image_joint = scalar(&j)?;
        } else {
            b.event_vertex.push(scalar(&v)?);
            b.event_joint.push(scalar(&j)?);
        }
        add(v)?;
        add(j)?;
        if let Some(c) = &t.coarse {
            let cv = (vertex_loss_t(&p.coarse, c)?.to_dtype(DType::F64)? * weights.lambda_v)?;
            b.coarse_vertex += scalar(&cv)?;
            add(cv)?;
        }
    }
    let total = total.expect("at least one step");
    b.total = scalar(&total)?;
    Ok((total, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mesh(v: Array2<f64>, j: Array2<f64>) -> HandMesh {
        HandMesh::new(v, j).unwrap()
    }

    fn random(rng: &mut ChaCha8Rng, n: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, 3), |_| rng.random_range(-80.0..80.0))
    }

    #[test]
    fn vertex_loss_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = random(&mut rng, 778);
        assert_eq!(vertex_loss(g.view(), g.view()).unwrap(), 0.0);
        assert!((vertex_loss((&g + 1.0).view(), g.view()).unwrap() - 3.0).abs() < 1e-12);
        let p = random(&mut rng, 778);
        let mut oracle = 0.0;
        for i in 0..778 {
            for c in 0..3 {
                oracle += (p[[i, c]] - g[[i, c]]).abs();
            }
        }
        assert!((vertex_loss(p.view(), g.view()).unwrap() - oracle / 778.0).abs() < 1e-9);
        assert!(vertex_loss(p.view(), random(&mut rng, 777).view()).is_err());
    }

    #[test]
    fn joint_loss_examples() {
        let g = Array2::<f64>::zeros((21, 3));
        let mut p = g.clone();
        p[[4, 0]] = 3.0;
        p[[4, 1]] = 4.0;
        assert!((joint_loss(p.view(), g.view()).unwrap() - 5.0 / 21.0).abs() < 1e-12);
        assert_eq!(joint_loss(g.view(), g.view()).unwrap(), 0.0);
    }

    #[test]
    fn composite_hand_computed() {
        let gv = Array2::<f64>::zeros((778, 3));
        let gj = Array2::<f64>::zeros((21, 3));
        let pv = &gv + 1.0;
        let mut pj = gj.clone();
        pj[[0, 0]] = 3.0;
        pj[[0, 1]] = 4.0;
        let p = mesh(pv, pj);
        let g = mesh(gv, gj);
        let b = total_loss(&p, &[p.clone(), p.clone()], &g, &[g.clone(), g.clone()], LossWeights::default()).unwrap();
        assert!((b.total - (900.0 + 3000.0 / 2.1)).abs() < 1e-9);
        assert!((b.total - b.term_sum()).abs() < 1e-9);
        let zero = total_loss(&g, &[g.clone()], &g, &[g.clone()], LossWeights::default()).unwrap();
        assert_eq!(zero.total, 0.0);
        assert!(total_loss(&p, &[p.clone()], &g, &[], LossWeights::default()).is_err());
    }

    #[test]
    fn tensor_loss_matches_array_loss() {
        use candle_core::{Device, Tensor};
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dev = Device::Cpu;
        let t = |a: &Array2<f64>| Tensor::from_slice(a.as_slice().unwrap(), (1, a.nrows(), 3), &dev).unwrap();
        let (pv, pj, gv, gj) = (random(&mut rng, 778), random(&mut rng, 21), random(&mut rng, 778), random(&mut rng, 21));
        let pred = MeshPrediction { joints: t(&pj), coarse: t(&random(&mut rng, 195)), fine: t(&pv) };
        let tgt = StepTargets { vertices: t(&gv), joints: t(&gj), coarse: None };
        let (_, b) = total_loss_tensor(&[pred.clone(), pred], &[tgt.clone(), tgt], LossWeights::default()).unwrap();
        let exact = total_loss(&mesh(pv.clone(), pj.clone()), &[mesh(pv, pj)], &mesh(gv.clone(), gj.clone()), &[mesh(gv, gj)], LossWeights::default()).unwrap();
        assert!((b.total - exact.total).abs() < 1e-6 * exact.total);
        assert_eq!(b.event_vertex.len(), 1);
    }
}
