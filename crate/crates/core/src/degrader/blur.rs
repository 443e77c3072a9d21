use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::imaging::{sample_bilinear, to_gray, Image};

/// Produces an intermediate frame between `a` (alpha = 0) and `b` (alpha = 1).
pub trait FrameInterpolator {
    fn interpolate(&self, a: &Image, b: &Image, alpha: f64) -> Result<Image>;
}

/// Dense per-pixel displacement from one frame to the next, in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub dx: Array2<f32>,
    pub dy: Array2<f32>,
}

impl FlowField {
    pub fn uniform(height: usize, width: usize, dx: f32, dy: f32) -> Self {
        FlowField {
            dx: Array2::from_elem((height, width), dx),
            dy: Array2::from_elem((height, width), dy),
        }
    }
}

/// Blends `a` warped forward by `alpha·F` with `b` warped back by `(1-alpha)·F`.
pub fn warp_interpolate(a: &Image, b: &Image, flow: &FlowField, alpha: f64) -> Result<Image> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!("frame shapes differ: {:?} vs {:?}", a.dim(), b.dim())));
    }
    let (c, h, w) = a.dim();
    if flow.dx.dim() != (h, w) || flow.dy.dim() != (h, w) {
        return Err(Error::shape(format!("flow {:?} does not match frame {h}x{w}", flow.dx.dim())));
    }
    let mut out = Image::zeros((c, h, w));
    for ch in 0..c {
        let pa = a.index_axis(Axis(0), ch);
        let pb = b.index_axis(Axis(0), ch);
        for y in 0..h {
            for x in 0..w {
                let fx = flow.dx[[y, x]] as f64;
                let fy = flow.dy[[y, x]] as f64;
                let va = sample_bilinear(pa, x as f64 - alpha * fx, y as f64 - alpha * fy) as f64;
                let vb = sample_bilinear(pb, x as f64 + (1.0 - alpha) * fx, y as f64 + (1.0 - alpha) * fy) as f64;
                out[[ch, y, x]] = ((1.0 - alpha) * va + alpha * vb) as f32;
            }
        }
    }
    Ok(out)
}

/// Interpolates along a flow field known in advance.
#[derive(Debug, Clone)]
pub struct KnownFlowInterpolator {
    pub flow: FlowField,
}

impl FrameInterpolator for KnownFlowInterpolator {
    fn interpolate(&self, a: &Image, b: &Image, alpha: f64) -> Result<Image> {
        warp_interpolate(a, b, &self.flow, alpha)
    }
}

/// Interpolates along flow estimated by exhaustive block matching on luma.
#[derive(Debug, Clone, Copy)]
pub struct BlockMatchingInterpolator {
    pub block: usize,
    pub radius: usize,
}

impl Default for BlockMatchingInterpolator {
    fn default() -> Self {
        BlockMatchingInterpolator { block: 8, radius: 8 }
    }
}

impl FrameInterpolator for BlockMatchingInterpolator {
    fn interpolate(&self, a: &Image, b: &Image, alpha: f64) -> Result<Image> {
        let flow = estimate_block_flow(a, b, self.block, self.radius)?;
        warp_interpolate(a, b, &flow, alpha)
    }
}

/// Per-block integer displacement minimising the sum of absolute differences;
/// ties keep the smallest displacement.
pub fn estimate_block_flow(a: &Image, b: &Image, block: usize, radius: usize) -> Result<FlowField> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!("frame shapes differ: {:?} vs {:?}", a.dim(), b.dim())));
    }
    if block == 0 {
        return Err(Error::invalid("block size must be positive"));
    }
    let ga = to_gray(a);
    let gb = to_gray(b);
    let (h, w) = ga.dim();
    let mut flow = FlowField::uniform(h, w, 0.0, 0.0);
    let r = radius as isize;
    for by in (0..h).step_by(block) {
        for bx in (0..w).step_by(block) {
            let y1 = (by + block).min(h);
            let x1 = (bx + block).min(w);
            let mut best = (f64::INFINITY, 0isize, 0isize);
            for dy in -r..=r {
                for dx in -r..=r {
                    let mut sad = 0.0f64;
                    for y in by..y1 {
                        for x in bx..x1 {
                            let (sy, sx) = (y as isize + dy, x as isize + dx);
                            let vb = if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                                gb[[sy as usize, sx as usize]]
                            } else {
                                0.0
                            };
                            sad += (ga[[y, x]] - vb).abs() as f64;
                        }
                    }
                    let mag = dy.abs() + dx.abs();
                    if sad < best.0 - 1e-9 || ((sad - best.0).abs() <= 1e-9 && mag < best.1.abs() + best.2.abs()) {
                        best = (sad, dy, dx);
                    }
                }
            }
            for y in by..y1 {
                for x in bx..x1 {
                    flow.dy[[y, x]] = best.1 as f32;
                    flow.dx[[y, x]] = best.2 as f32;
                }
            }
        }
    }
    Ok(flow)
}

/// Averages `frames` evenly spaced samples across the triplet `[f0, f1, f2]`.
pub fn degrade_motion_blur(
    triplet: [&Image; 3],
    frames: usize,
    interp: &dyn FrameInterpolator,
) -> Result<Image> {
    let dim = triplet[0].dim();
    if triplet.iter().any(|f| f.dim() != dim) {
        return Err(Error::shape("motion blur frames must share a shape"));
    }
    if frames == 0 || frames.is_multiple_of(2) {
        return Err(Error::invalid(format!("motion blur frame count must be odd, got {frames}")));
    }
    let mut acc = ndarray::Array3::<f64>::zeros(dim);
    for k in 0..frames {
        let pos = if frames == 1 { 1.0 } else { 2.0 * k as f64 / (frames - 1) as f64 };
        let seg = (pos.floor() as usize).min(1);
        let alpha = pos - seg as f64;
        let frame = if alpha == 0.0 {
            triplet[seg].clone()
        } else {
            interp.interpolate(triplet[seg], triplet[seg + 1], alpha)?
        };
        acc.zip_mut_with(&frame, |s, &v| *s += v as f64);
    }
    Ok(acc.mapv(|s| (s / frames as f64).clamp(0.0, 1.0) as f32))
}
