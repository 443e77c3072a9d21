//! Pose and mesh error metrics.
//!
//! All positions are in millimetres. The root joint is the wrist, index 0.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{Matrix3, Vector3};
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hand_model::ROOT_JOINT;

fn check_pair(pred: ArrayView2<f64>, gt: ArrayView2<f64>) -> Result<()> {
    if pred.dim() != gt.dim() || pred.ncols() != 3 || pred.nrows() == 0 {
        return Err(Error::shape(format!(
            "expected matching non-empty N x 3 arrays, got {:?} and {:?}",
            pred.dim(),
            gt.dim()
        )));
    }
    Ok(())
}

fn mean_distance(pred: ArrayView2<f64>, gt: ArrayView2<f64>, pred_root: [f64; 3], gt_root: [f64; 3]) -> f64 {
    let mut total = 0.0;
    for (p, g) in pred.rows().into_iter().zip(gt.rows()) {
        let d2: f64 = (0..3).map(|c| ((p[c] - pred_root[c]) - (g[c] - gt_root[c])).powi(2)).sum();
        total += d2.sqrt();
    }
    total / pred.nrows() as f64
}

fn row(a: ArrayView2<f64>, i: usize) -> [f64; 3] {
    [a[[i, 0]], a[[i, 1]], a[[i, 2]]]
}

/// Root-aligned mean per-joint position error.
pub fn mpjpe(pred: ArrayView2<f64>, gt: ArrayView2<f64>) -> Result<f64> {
    check_pair(pred, gt)?;
    Ok(mean_distance(pred, gt, row(pred, ROOT_JOINT), row(gt, ROOT_JOINT)))
}

/// Root-aligned mean per-vertex position error; the roots come from the
/// corresponding joint sets.
pub fn mpvpe(pred: ArrayView2<f64>, gt: ArrayView2<f64>, pred_root: [f64; 3], gt_root: [f64; 3]) -> Result<f64> {
    check_pair(pred, gt)?;
    Ok(mean_distance(pred, gt, pred_root, gt_root))
}

/// `x ↦ scale · rotation · x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let v = self.rotation * Vector3::from(p) * self.scale + self.translation;
        [v.x, v.y, v.z]
    }

    pub fn apply_all(&self, points: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(points.dim());
        for (i, r) in points.rows().into_iter().enumerate() {
            let q = self.apply([r[0], r[1], r[2]]);
            for c in 0..3 {
                out[[i, c]] = q[c];
            }
        }
        out
    }
}

fn centered(a: ArrayView2<f64>) -> (Vec<Vector3<f64>>, Vector3<f64>) {
    let n = a.nrows() as f64;
    let pts: Vec<Vector3<f64>> = a.rows().into_iter().map(|r| Vector3::new(r[0], r[1], r[2])).collect();
    let mean = pts.iter().sum::<Vector3<f64>>() / n;
    (pts.into_iter().map(|p| p - mean).collect(), mean)
}

fn second_moment(pts: &[Vector3<f64>]) -> Matrix3<f64> {
    pts.iter().map(|p| p * p.transpose()).sum()
}

/// Least-squares similarity taking `pred` onto `gt`, with a proper rotation.
pub fn procrustes_align(pred: ArrayView2<f64>, gt: ArrayView2<f64>) -> Result<(Array2<f64>, Similarity)> {
    check_pair(pred, gt)?;
    if pred.nrows() < 3 {
        return Err(Error::invalid("procrustes alignment needs at least 3 points"));
    }
    let (x, mu_x) = centered(pred);
    let (y, mu_y) = centered(gt);
    for (name, pts) in [("ground truth", &y), ("prediction", &x)] {
        let sv = second_moment(pts).symmetric_eigenvalues();
        let mut sv: Vec<f64> = sv.iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        if !(sv[0] > 0.0) || sv[1] <= 1e-12 * sv[0] {
            return Err(Error::invalid(format!("{name} point set is degenerate (rank < 2)")));
        }
    }
    let n = x.len() as f64;
    let cov: Matrix3<f64> = x.iter().zip(&y).map(|(a, b)| b * a.transpose()).sum::<Matrix3<f64>>() / n;
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = u * d * v_t;
    let var_x = x.iter().map(|p| p.norm_squared()).sum::<f64>() / n;
    let scale = (Matrix3::from_diagonal(&svd.singular_values) * d).trace() / var_x;
    let translation = mu_y - rotation * mu_x * scale;
    let sim = Similarity { scale, rotation, translation };
    Ok((sim.apply_all(pred), sim))
}

/// Mean per-joint error after Procrustes alignment of the prediction.
pub fn pa_mpjpe(pred: ArrayView2<f64>, gt: ArrayView2<f64>) -> Result<f64> {
    let (aligned, _) = procrustes_align(pred, gt)?;
    Ok(mean_distance(aligned.view(), gt, [0.0; 3], [0.0; 3]))
}

/// The 101-point grid 0, 1, …, 100 mm.
pub fn default_thresholds() -> Vec<f64> {
    (0..=100).map(f64::from).collect()
}

/// Fraction of errors `≤ τ` for each threshold, and the trapezoidal area under
/// that curve normalised by the threshold span.
pub fn pck_auc(errors: &[f64], thresholds: &[f64]) -> Result<(Vec<(f64, f64)>, f64)> {
    if errors.is_empty() {
        return Err(Error::invalid("pck needs at least one error value"));
    }
    if let Some(e) = errors.iter().find(|e| !(**e >= 0.0)) {
        return Err(Error::invalid(format!("errors must be non-negative, got {e}")));
    }
    if thresholds.len() < 2 || thresholds.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("thresholds must be at least two strictly increasing values"));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let curve: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&t| (t, sorted.partition_point(|&e| e <= t) as f64 / n))
        .collect();
    let area: f64 = curve.windows(2).map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0)).sum();
    let span = thresholds[thresholds.len() - 1] - thresholds[0];
    Ok((curve, area / span))
}

/// Anything that owns learnable parameters.
pub trait Parameterized {
    fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)>;
}

/// Total number of learnable scalars.
pub fn count_params(model: &dyn Parameterized) -> usize {
    model.parameter_shapes().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
}

/// One evaluated prediction together with its ground truth.
#[derive(Debug, Clone)]
pub struct EvalSample {
    pub scene: String,
    pub pred_joints: Array2<f64>,
    pub gt_joints: Array2<f64>,
    pub pred_vertices: Array2<f64>,
    pub gt_vertices: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMetrics {
    pub samples: usize,
    pub mpjpe: f64,
    pub mpvpe: f64,
    pub pa_mpjpe: f64,
    pub auc: f64,
    pub pck_curve: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(flatten)]
    pub overall: SceneMetrics,
    pub per_scene: BTreeMap<String, SceneMetrics>,
}

fn summarize(samples: &[&EvalSample]) -> Result<SceneMetrics> {
    let mut joint_errors = Vec::new();
    let (mut j, mut v, mut pa) = (0.0, 0.0, 0.0);
    for s in samples {
        let (pr, gr) = (row(s.pred_joints.view(), ROOT_JOINT), row(s.gt_joints.view(), ROOT_JOINT));
        check_pair(s.pred_joints.view(), s.gt_joints.view())?;
        for (p, g) in s.pred_joints.rows().into_iter().zip(s.gt_joints.rows()) {
            let d2: f64 = (0..3).map(|c| ((p[c] - pr[c]) - (g[c] - gr[c])).powi(2)).sum();
            joint_errors.push(d2.sqrt());
        }
        j += mpjpe(s.pred_joints.view(), s.gt_joints.view())?;
        v += mpvpe(s.pred_vertices.view(), s.gt_vertices.view(), pr, gr)?;
        pa += pa_mpjpe(s.pred_joints.view(), s.gt_joints.view())?;
    }
    let n = samples.len() as f64;
    let (pck_curve, auc) = pck_auc(&joint_errors, &default_thresholds())?;
    Ok(SceneMetrics {
        samples: samples.len(),
        mpjpe: j / n,
        mpvpe: v / n,
        pa_mpjpe: pa / n,
        auc,
        pck_curve,
    })
}

impl MetricReport {
    pub fn from_samples(samples: &[EvalSample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("no samples to evaluate"));
        }
        let all: Vec<&EvalSample> = samples.iter().collect();
        let mut by_scene: BTreeMap<String, Vec<&EvalSample>> = BTreeMap::new();
        for s in samples {
            by_scene.entry(s.scene.clone()).or_default().push(s);
        }
        let per_scene = by_scene
            .into_iter()
            .map(|(k, v)| summarize(&v).map(|m| (k, m)))
            .collect::<Result<_>>()?;
        Ok(MetricReport { overall: summarize(&all)?, per_scene })
    }

    /// Writes `threshold_mm,fraction` rows.
    pub fn write_pck_csv<W: Write>(&self, w: W) -> Result<()> {
        write_pck_csv(&self.overall.pck_curve, w)
    }
}

pub fn write_pck_csv<W: Write>(curve: &[(f64, f64)], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::data(format!("pck csv: {e}"));
    wr.write_record(["threshold_mm", "fraction"]).map_err(err)?;
    for (t, f) in curve {
        wr.write_record([t.to_string(), f.to_string()]).map_err(err)?;
    }
    wr.flush().map_err(|e| Error::data(format!("pck csv: {e}")))
}
