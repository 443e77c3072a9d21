use candle_core::{CpuStorage, CustomOp2, CustomOp3, Layout, Shape, Tensor, WithDType};

use super::layers::Conv2d;
use super::offsets::DEFORM_TAPS;
use super::params::Builder;
use crate::error::{Error, Result};

/// 3×3 deformable convolution with zero padding: tap `k` of output location
/// `(y, x)` reads the input bilinearly at `(y + ky - 1 + dy_k, x + kx - 1 + dx_k)`.
#[derive(Debug, Clone)]
pub struct DeformableConv {
    conv: Conv2d,
}

impl DeformableConv {
    pub(crate) fn new(b: &mut Builder, name: &str, channels: usize) -> Result<Self> {
        Ok(DeformableConv {
            conv: Conv2d::new(b, name, channels, channels, 3, 1, 1)?,
        })
    }

    /// `[C, C, 3, 3]` kernel.
    pub fn weight(&self) -> &Tensor {
        &self.conv.w
    }

    pub fn bias(&self) -> &Tensor {
        &self.conv.b
    }

    /// The ordinary convolution with the same kernel.
    pub fn forward_regular(&self, x: &Tensor) -> Result<Tensor> {
        self.conv.forward(x)
    }

    /// `x` is `[B, C, H, W]`, `offsets` is `[B, 2·9, H, W]`.
    pub fn forward(&self, x: &Tensor, offsets: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        if offsets.dims() != [b, 2 * DEFORM_TAPS, h, w] {
            return Err(Error::shape(format!(
                "offsets {:?} do not match features {:?}",
                offsets.dims(),
                x.dims()
            )));
        }
        let sampled = bilinear_taps(x, offsets)?;
        let c_out = self.conv.w.dim(0)?;
        let kernel = self.conv.w.reshape((c_out, c * DEFORM_TAPS))?;
        let y = kernel.broadcast_matmul(&sampled)?.reshape((b, c_out, h, w))?;
        Ok(y.broadcast_add(&self.conv.b.reshape((1, c_out, 1, 1))?)?)
    }
}

/// Gathers the displaced taps: `[B, C, H, W]` → `[B, C·9, H·W]` with the tap
/// index varying fastest inside each channel.
pub(crate) fn bilinear_taps(x: &Tensor, offsets: &Tensor) -> Result<Tensor> {
    let x = x.contiguous()?;
    let offsets = offsets.contiguous()?;
    Ok(x.apply_op2(&offsets, DeformSample)?)
}

struct Corner {
    index: Option<usize>,
    weight: f64,
    d_py: f64,
    d_px: f64,
}

fn corners(y: usize, x: usize, tap: usize, dy: f64, dx: f64, h: usize, w: usize) -> [Corner; 4] {
    let py = (y + tap / 3) as f64 - 1.0 + dy;
    let px = (x + tap % 3) as f64 - 1.0 + dx;
    let y0 = py.floor();
    let x0 = px.floor();
    let ly = py - y0;
    let lx = px - x0;
    [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)].map(|(cy, cx)| {
        let yc = y0 + cy;
        let xc = x0 + cx;
        let (wy, dwy) = if cy == 0.0 { (1.0 - ly, -1.0) } else { (ly, 1.0) };
        let (wx, dwx) = if cx == 0.0 { (1.0 - lx, -1.0) } else { (lx, 1.0) };
        let inside = yc >= 0.0 && yc <= (h - 1) as f64 && xc >= 0.0 && xc <= (w - 1) as f64;
        Corner {
            index: inside.then(|| yc as usize * w + xc as usize),
            weight: wy * wx,
            d_py: dwy * wx,
            d_px: wy * dwx,
        }
    })
}

fn contiguous<'a, T>(v: &'a [T], l: &Layout) -> candle_core::Result<&'a [T]> {
    match l.contiguous_offsets() {
        Some((a, b)) => Ok(&v[a..b]),
        None => candle_core::bail!("deformable sampling needs contiguous inputs"),
    }
}

fn sample_fwd<T: WithDType>(x: &[T], off: &[T], (b, c, h, w): (usize, usize, usize, usize)) -> Vec<T> {
    let k = DEFORM_TAPS;
    let hw = h * w;
    let mut out = vec![T::from_f64(0.0); b * c * k * hw];
    for bi in 0..b {
        for tap in 0..k {
            for p in 0..hw {
                let o = (bi * 2 * k + 2 * tap) * hw + p;
                let cs = corners(p / w, p % w, tap, off[o].to_f64(), off[o + hw].to_f64(), h, w);
                for ch in 0..c {
                    let src = &x[(bi * c + ch) * hw..][..hw];
                    let mut v = 0.0;
                    for cn in &cs {
                        if let Some(i) = cn.index {
                            v += cn.weight * src[i].to_f64();
                        }
                    }
                    out[((bi * c + ch) * k + tap) * hw + p] = T::from_f64(v);
                }
            }
        }
    }
    out
}

/// Returns `grad_x` followed by `grad_offsets`, both flattened.
fn sample_bwd<T: WithDType>(
    x: &[T],
    off: &[T],
    g: &[T],
    (b, c, h, w): (usize, usize, usize, usize),
) -> Vec<T> {
    let k = DEFORM_TAPS;
    let hw = h * w;
    let nx = b * c * hw;
    let mut grad = vec![0f64; nx + b * 2 * k * hw];
    for bi in 0..b {
        for tap in 0..k {
            for p in 0..hw {
                let o = (bi * 2 * k + 2 * tap) * hw + p;
                let cs = corners(p / w, p % w, tap, off[o].to_f64(), off[o + hw].to_f64(), h, w);
                let (mut gpy, mut gpx) = (0.0, 0.0);
                for ch in 0..c {
                    let base = (bi * c + ch) * hw;
                    let gv = g[((bi * c + ch) * k + tap) * hw + p].to_f64();
                    for cn in &cs {
                        if let Some(i) = cn.index {
                            grad[base + i] += cn.weight * gv;
                            let xv = x[base + i].to_f64() * gv;
                            gpy += cn.d_py * xv;
                            gpx += cn.d_px * xv;
                        }
                    }
                }
                grad[nx + o] = gpy;
                grad[nx + o + hw] = gpx;
            }
        }
    }
    grad.into_iter().map(T::from_f64).collect()
}

fn dims(l: &Layout) -> candle_core::Result<(usize, usize, usize, usize)> {
    l.shape().dims4()
}

struct DeformSample;

impl CustomOp2 for DeformSample {
    fn name(&self) -> &'static str {
        "deform-sample"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let d = dims(l1)?;
        let (b, c, h, w) = d;
        let shape = Shape::from((b, c * DEFORM_TAPS, h * w));
        let out = match (s1, s2) {
            (CpuStorage::F32(x), CpuStorage::F32(o)) => {
                CpuStorage::F32(sample_fwd(contiguous(x, l1)?, contiguous(o, l2)?, d))
            }
            (CpuStorage::F64(x), CpuStorage::F64(o)) => {
                CpuStorage::F64(sample_fwd(contiguous(x, l1)?, contiguous(o, l2)?, d))
            }
            _ => candle_core::bail!("deformable sampling supports matching f32/f64 inputs"),
        };
        Ok((out, shape))
    }

    fn bwd(
        &self,
        x: &Tensor,
        offsets: &Tensor,
        _res: &Tensor,
        grad: &Tensor,
    ) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        let grad = grad.contiguous()?;
        let both = x.apply_op3_no_bwd(offsets, &grad, &DeformSampleGrad)?;
        let nx = x.elem_count();
        let gx = both.narrow(0, 0, nx)?.reshape(x.shape())?;
        let go = both.narrow(0, nx, offsets.elem_count())?.reshape(offsets.shape())?;
        Ok((Some(gx), Some(go)))
    }
}

struct DeformSampleGrad;

impl CustomOp3 for DeformSampleGrad {
    fn name(&self) -> &'static str {
        "deform-sample-grad"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
        s3: &CpuStorage,
        l3: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let d = dims(l1)?;
        let out = match (s1, s2, s3) {
            (CpuStorage::F32(x), CpuStorage::F32(o), CpuStorage::F32(g)) => CpuStorage::F32(
                sample_bwd(contiguous(x, l1)?, contiguous(o, l2)?, contiguous(g, l3)?, d),
            ),
            (CpuStorage::F64(x), CpuStorage::F64(o), CpuStorage::F64(g)) => CpuStorage::F64(
                sample_bwd(contiguous(x, l1)?, contiguous(o, l2)?, contiguous(g, l3)?, d),
            ),
            _ => candle_core::bail!("deformable sampling supports matching f32/f64 inputs"),
        };
        let n = l1.shape().elem_count() + l2.shape().elem_count();
        Ok((out, Shape::from(n)))
    }
}
