use candle_core::{CpuStorage, CustomOp1, Layout, Shape, Tensor, D};

use super::params::{Builder, Init};
use crate::error::{Error, Result};

pub(crate) fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((x.neg()?.exp()? + 1.0)?.recip()?)
}

/// 2×2 stride-2 max pooling built from a reshape and two reductions, so its
/// gradient goes through the generic max rule.
pub(crate) fn max_pool2x2(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    Ok(x.reshape((b, c, h / 2, 2, w / 2, 2))?.max(5)?.max(3)?)
}

struct SoftmaxLastDim;

macro_rules! softmax_rows {
    ($src:expr, $n:expr) => {{
        let mut dst = $src.to_vec();
        for row in dst.chunks_mut($n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY as _, |a, b| if b > a { b } else { a });
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        dst
    }};
}

impl CustomOp1 for SoftmaxLastDim {
    fn name(&self) -> &'static str {
        "softmax-last"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let Some((start, end)) = layout.contiguous_offsets() else {
            candle_core::bail!("softmax input must be contiguous")
        };
        let n = layout.dims().last().copied().unwrap_or(1).max(1);
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(softmax_rows!(&v[start..end], n)),
            CpuStorage::F64(v) => CpuStorage::F64(softmax_rows!(&v[start..end], n)),
            _ => candle_core::bail!("softmax supports only f32 and f64"),
        };
        Ok((out, layout.shape().clone()))
    }

    fn bwd(&self, _arg: &Tensor, res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let dot = (grad_res * res)?.sum_keepdim(D::Minus1)?;
        Ok(Some((res * grad_res.broadcast_sub(&dot)?)?))
    }
}

/// Softmax over the last dimension, fused on the CPU with an analytic
/// backward pass.
pub(crate) fn softmax_last(x: &Tensor) -> Result<Tensor> {
    Ok(x.contiguous()?.apply_op1(SoftmaxLastDim)?)
}

#[derive(Debug, Clone)]
pub(crate) struct Linear {
    w: Tensor,
    b: Tensor,
}

impl Linear {
    pub(crate) fn new(b: &mut Builder, name: &str, fan_in: usize, fan_out: usize) -> Result<Self> {
        Self::with_init(b, name, fan_in, fan_out, Init::Normal((1.0 / fan_in as f64).sqrt()))
    }

    pub(crate) fn with_init(b: &mut Builder, name: &str, fan_in: usize, fan_out: usize, init: Init) -> Result<Self> {
        let mut s = b.sub(name);
        Ok(Linear {
            w: s.param("weight", &[fan_out, fan_in], init)?,
            b: s.param("bias", &[fan_out], Init::Zeros)?,
        })
    }

    pub(crate) fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.broadcast_matmul(&self.w.t()?)?.broadcast_add(&self.b)?)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Conv2d {
    pub(crate) w: Tensor,
    pub(crate) b: Tensor,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    pub(crate) fn new(
        b: &mut Builder,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let fan_in = c_in * kernel * kernel;
        let init = Init::Normal((2.0 / fan_in as f64).sqrt());
        Self::with_init(b, name, [c_in, c_out, kernel], stride, padding, init, Init::Zeros)
    }

    pub(crate) fn with_init(
        b: &mut Builder,
        name: &str,
        [c_in, c_out, kernel]: [usize; 3],
        stride: usize,
        padding: usize,
        init: Init,
        bias_init: Init,
    ) -> Result<Self> {
        let mut s = b.sub(name);
        Ok(Conv2d {
            w: s.param("weight", &[c_out, c_in, kernel, kernel], init)?,
            b: s.param("bias", &[c_out], bias_init)?,
            stride,
            padding,
        })
    }

    pub(crate) fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let k = self.w.dim(3)?;
        let y = if k > 1 {
            conv2d_unfold(x, &self.w, self.stride, self.padding)?
        } else {
            x.conv2d(&self.w, self.padding, self.stride, 1, 1)?
        };
        Ok(y.broadcast_add(&self.b.reshape((1, (), 1, 1))?)?)
    }
}

/// Cross-correlation as patch extraction plus one matmul. Candle's kernel
/// gradient for strided convolutions is several times slower than this.
pub(crate) fn conv2d_unfold(x: &Tensor, w: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let (bsz, c, h, wd) = x.dims4()?;
    let (c_out, c_in, k, _) = w.dims4()?;
    if c != c_in {
        return Err(Error::shape(format!("conv expects {c_in} channels, got {c}")));
    }
    let s = stride;
    let (ho, wo) = ((h + 2 * padding - k) / s + 1, (wd + 2 * padding - k) / s + 1);
    let padded = |n: usize, o: usize| (n + 2 * padding).max(s * (o - 1) + k).div_ceil(s) * s;
    let (hp, wp) = (padded(h, ho), padded(wd, wo));
    let xp = x
        .pad_with_zeros(2, padding, hp - h - padding)?
        .pad_with_zeros(3, padding, wp - wd - padding)?
        .reshape((bsz, c, hp / s, s, wp / s, s))?;
    let mut taps = Vec::with_capacity(k * k);
    for ky in 0..k {
        for kx in 0..k {
            let t = xp
                .narrow(2, ky / s, ho)?
                .narrow(3, ky % s, 1)?
                .narrow(4, kx / s, wo)?
                .narrow(5, kx % s, 1)?
                .reshape((bsz, c, 1, ho * wo))?;
            taps.push(t);
        }
    }
    let patches = Tensor::cat(&taps, 2)?.reshape((bsz, c * k * k, ho * wo))?;
    let y = w.reshape((c_out, c * k * k))?.broadcast_matmul(&patches)?;
    Ok(y.reshape((bsz, c_out, ho, wo))?)
}

#[derive(Debug, Clone)]
pub(crate) struct LayerNorm {
    g: Tensor,
    b: Tensor,
}

impl LayerNorm {
    pub(crate) fn new(b: &mut Builder, name: &str, dim: usize) -> Result<Self> {
        let mut s = b.sub(name);
        Ok(LayerNorm {
            g: s.param("weight", &[dim], Init::Const(1.0))?,
            b: s.param("bias", &[dim], Init::Zeros)?,
        })
    }

    pub(crate) fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + 1e-5)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.g)?.broadcast_add(&self.b)?)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
}

impl Attention {
    pub(crate) fn new(b: &mut Builder, name: &str, dim: usize, heads: usize) -> Result<Self> {
        let mut s = b.sub(name);
        Ok(Attention {
            q: Linear::new(&mut s, "q", dim, dim)?,
            k: Linear::new(&mut s, "k", dim, dim)?,
            v: Linear::new(&mut s, "v", dim, dim)?,
            o: Linear::new(&mut s, "o", dim, dim)?,
            heads,
        })
    }

    fn split(&self, x: &Tensor) -> Result<Tensor> {
        let (b, n, d) = x.dims3()?;
        Ok(x.reshape((b, n, self.heads, d / self.heads))?.transpose(1, 2)?.contiguous()?)
    }

    /// `queries` is `[B, Nq, D]`, `context` is `[B, Nk, D]`; `bias` is added to
    /// the `[B, H, Nq, Nk]` logits with broadcasting.
    pub(crate) fn forward(&self, queries: &Tensor, context: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let (b, nq, d) = queries.dims3()?;
        let q = self.split(&self.q.forward(queries)?)?;
        let k = self.split(&self.k.forward(context)?)?;
        let v = self.split(&self.v.forward(context)?)?;
        let scale = 1.0 / ((d / self.heads) as f64).sqrt();
        let mut logits = (q.matmul(&k.t()?)? * scale)?;
        if let Some(bias) = bias {
            logits = logits.broadcast_add(bias)?;
        }
        let attn = softmax_last(&logits)?;
        let out = attn.matmul(&v)?.transpose(1, 2)?.reshape((b, nq, d))?;
        self.o.forward(&out)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    pub(crate) fn new(b: &mut Builder, name: &str, dim: usize, hidden: usize) -> Result<Self> {
        let mut s = b.sub(name);
        Ok(FeedForward {
            up: Linear::new(&mut s, "up", dim, hidden)?,
            down: Linear::new(&mut s, "down", hidden, dim)?,
        })
    }

    pub(crate) fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.down.forward(&self.up.forward(x)?.gelu_erf()?)
    }
}
